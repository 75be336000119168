// Power-iteration results checked against a dense eigensolver.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use airfl::fl::data::{mixture_means, sample_mixture, MixtureSpec};
use airfl::fl::estimate::estimate_smoothness;
use airfl::fl::LossSpec;
use airfl::linalg::{cn01_vec, dominant_eigvec, sym_max_eigenvalue, weighted_outer_sum};
use airfl::rng::{RngSpec, Stream};

#[test]
fn dominant_eigenpair_matches_dense_solver() {
    for seed in 0..20u64 {
        let mut r = RngSpec::new(seed).stream(Stream::Estimate, 0, 0);
        let n = 1 + (seed as usize % 8);
        let h: Vec<Vec<Complex64>> = (0..3).map(|_| cn01_vec(&mut r, n)).collect();
        let a = weighted_outer_sum(&h, &[1.0, 0.5, 2.0]);
        let (v, lambda) = dominant_eigvec(&a, n, 1e-12, 100_000);

        let m = DMatrix::from_row_slice(n, n, &a);
        let eig = SymmetricEigen::new(m.clone());
        let (i, top) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
        assert!((lambda - top).abs() <= 1e-9 * top, "seed {seed}: {lambda} vs {top}");
        // same direction up to a phase
        let u = eig.eigenvectors.column(i);
        let overlap: Complex64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        let gap = eig.eigenvalues.iter().filter(|&&l| l < top).fold(0.0f64, |m, &l| m.max(l));
        if top - gap > 1e-3 * top {
            assert!((overlap.norm() - 1.0).abs() < 1e-6, "seed {seed}: overlap {overlap}");
        }
    }
}

#[test]
fn symmetric_top_eigenvalue_matches_dense_solver() {
    for seed in 0..20u64 {
        let mut r = RngSpec::new(seed).stream(Stream::Estimate, 1, 0);
        let n = 2 + (seed as usize % 10);
        let b: Vec<f64> = cn01_vec(&mut r, n * n).iter().map(|z| z.re).collect();
        let bm = DMatrix::from_row_slice(n, n, &b);
        let a = &bm * bm.transpose();
        let flat: Vec<f64> = a.transpose().iter().copied().collect();
        let got = sym_max_eigenvalue(&flat, n, 1e-14, 1_000_000);
        let want = a.symmetric_eigenvalues().max();
        assert!((got - want).abs() <= 1e-8 * want, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn logistic_smoothness_matches_dense_gram_spectrum() {
    let rng = RngSpec::new(3);
    for (classes, bias) in [(2usize, true), (4, true), (3, false)] {
        let means = mixture_means(
            &MixtureSpec {
                classes,
                feature_dim: 6,
                separation: 2.0,
            },
            &mut rng.stream(Stream::Data, 0, 0),
        );
        let data = sample_mixture(&means, 150, &mut rng.stream(Stream::Data, 1, 0));
        let spec = LossSpec {
            bias,
            ..LossSpec::logistic(classes, 6, 0.02)
        };
        let idx: Vec<usize> = (0..data.len()).collect();
        let got = estimate_smoothness(&spec, &data, &idx, &mut rng.stream(Stream::Estimate, 0, 0)).unwrap();

        let cols = 6 + usize::from(bias);
        let x = DMatrix::from_fn(data.len(), cols, |i, j| if j < 6 { data.row(i)[j] } else { 1.0 });
        let top = (x.transpose() * &x).symmetric_eigenvalues().max();
        let c = if classes == 2 { 0.25 } else { 0.5 };
        let want = c * top / data.len() as f64 + 0.02;
        assert!((got.l - want).abs() <= 1e-8 * want, "{classes} classes: {} vs {want}", got.l);
        assert_eq!(got.lambda, 0.02);
        assert!(!got.heuristic);
    }
}
