//! Small dense helpers for complex antenna-domain vectors.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CVec = Vec<Complex64>;

/// `a^H b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    norm_sqr(a).sqrt()
}

pub fn scale(a: &[Complex64], s: f64) -> CVec {
    a.iter().map(|x| x * s).collect()
}

pub fn real_norm_sqr(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// One standard circular complex Gaussian sample (unit total variance).
pub fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn cn01_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVec {
    (0..n).map(|_| cn01(rng)).collect()
}

/// Hermitian PSD matrix `sum_k weight_k h_k h_k^H`, row-major.
pub fn weighted_outer_sum(h: &[CVec], weights: &[f64]) -> Vec<Complex64> {
    let n = h.first().map_or(0, |v| v.len());
    let mut a = vec![Complex64::new(0.0, 0.0); n * n];
    for (hk, &wk) in h.iter().zip(weights) {
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] += hk[i] * hk[j].conj() * wk;
            }
        }
    }
    a
}

fn matvec(a: &[Complex64], n: usize, v: &[Complex64]) -> CVec {
    (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum())
        .collect()
}

/// Dominant eigenpair of a Hermitian PSD matrix by power iteration.
///
/// Stops when `||A v - lambda v|| <= tol * lambda`. Returns a unit vector and
/// the Rayleigh quotient. A zero matrix yields `e_1` with eigenvalue 0.
pub fn dominant_eigvec(a: &[Complex64], n: usize, tol: f64, max_iters: usize) -> (CVec, f64) {
    // start from the heaviest column: nonzero whenever A is
    let mut best = 0;
    let mut best_norm = -1.0;
    for j in 0..n {
        let c: f64 = (0..n).map(|i| a[i * n + j].norm_sqr()).sum();
        if c > best_norm {
            best_norm = c;
            best = j;
        }
    }
    if best_norm <= 0.0 {
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        e[0] = Complex64::new(1.0, 0.0);
        return (e, 0.0);
    }
    let mut v: CVec = (0..n).map(|i| a[i * n + best]).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let av = matvec(a, n, &v);
        lambda = inner(&v, &av).re;
        let resid: f64 = av
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - y * lambda).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let nav = norm(&av);
        if nav == 0.0 {
            break;
        }
        v = av.into_iter().map(|x| x / nav).collect();
        if resid <= tol * lambda.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    (v, lambda)
}

/// Largest eigenvalue of a real symmetric PSD matrix (row-major) by power iteration.
pub fn sym_max_eigenvalue(a: &[f64], n: usize, tol: f64, max_iters: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let av: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum())
            .collect();
        let next = v.iter().zip(&av).map(|(x, y)| x * y).sum::<f64>();
        let nav = real_norm_sqr(&av).sqrt();
        if nav == 0.0 {
            return 0.0;
        }
        v = av.into_iter().map(|x| x / nav).collect();
        if (next - lambda).abs() <= tol * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}
