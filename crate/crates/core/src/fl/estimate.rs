//! Constants of the convergence analysis: smoothness and strong convexity,
//! mini-batch gradient variance, gradient divergence, and the optimal loss.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{global_grad, global_loss, local_grad, Dataset, LossSpec, ModelVector, Partition, Task};
use crate::error::{Error, Result};
use crate::linalg::sym_max_eigenvalue;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub l: f64,
    pub lambda: f64,
    /// True when the values are sampled estimates rather than analytic bounds.
    pub heuristic: bool,
}

/// Smoothness `L` and strong convexity `lambda` of the loss over `indices`.
///
/// Logistic: `L = (c / S) sigma_max(X^T X) + l2_reg` with `c = 1/4` for the
/// sigmoid model and `1/2` for softmax, `lambda = l2_reg`. MLP: the largest
/// Hessian eigenvalue magnitude found by power iteration on finite-difference
/// Hessian-vector products at a few random points.
pub fn estimate_smoothness<R: Rng + ?Sized>(
    spec: &LossSpec,
    data: &Dataset,
    indices: &[usize],
    rng: &mut R,
) -> Result<Smoothness> {
    if indices.is_empty() {
        return Err(Error::EmptyBatch);
    }
    match spec.task {
        Task::Logistic => {
            let d = spec.feature_dim + usize::from(spec.bias);
            let mut gram = vec![0.0; d * d];
            let mut row = vec![1.0; d];
            for &i in indices {
                row[..spec.feature_dim].copy_from_slice(data.row(i));
                for a in 0..d {
                    for b in 0..d {
                        gram[a * d + b] += row[a] * row[b];
                    }
                }
            }
            let sigma = sym_max_eigenvalue(&gram, d, 1e-13, 100_000);
            let c = if spec.classes == 2 { 0.25 } else { 0.5 };
            Ok(Smoothness {
                l: c * sigma / indices.len() as f64 + spec.l2_reg,
                lambda: spec.l2_reg,
                heuristic: false,
            })
        }
        Task::Mlp { .. } => {
            let part = Partition {
                shards: vec![indices.to_vec()],
            };
            let nrm = Normal::new(0.0, 0.5).expect("valid std");
            let mut l: f64 = 0.0;
            for _ in 0..3 {
                let mut theta = ModelVector((0..spec.dim()).map(|_| nrm.sample(rng)).collect());
                spec.clear_padding(&mut theta);
                l = l.max(hessian_power(spec, data, &part, &theta, rng)?);
            }
            Ok(Smoothness {
                l,
                lambda: spec.l2_reg,
                heuristic: true,
            })
        }
    }
}

/// Largest smoothness over every shard and the pooled data, so that each
/// local loss and the global loss are all covered.
pub fn smoothness_over_partition<R: Rng + ?Sized>(
    spec: &LossSpec,
    data: &Dataset,
    partition: &Partition,
    rng: &mut R,
) -> Result<Smoothness> {
    let mut out = estimate_smoothness(spec, data, &partition.pooled(), rng)?;
    for sh in &partition.shards {
        let s = estimate_smoothness(spec, data, sh, rng)?;
        out.l = out.l.max(s.l);
        out.heuristic |= s.heuristic;
    }
    Ok(out)
}

fn hessian_power<R: Rng + ?Sized>(
    spec: &LossSpec,
    data: &Dataset,
    part: &Partition,
    theta: &ModelVector,
    rng: &mut R,
) -> Result<f64> {
    let raw = spec.raw_dim();
    let mut v: Vec<f64> = (0..spec.dim()).map(|i| if i < raw { rng.gen::<f64>() - 0.5 } else { 0.0 }).collect();
    let eps = 1e-5;
    let mut lambda = 0.0;
    for _ in 0..60 {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        let plus = ModelVector(theta.0.iter().zip(&v).map(|(t, d)| t + eps * d).collect());
        let minus = ModelVector(theta.0.iter().zip(&v).map(|(t, d)| t - eps * d).collect());
        let gp = global_grad(&plus, data, part, spec)?;
        let gm = global_grad(&minus, data, part, spec)?;
        let hv: Vec<f64> = gp.0.iter().zip(&gm.0).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let next = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = hv;
        if (next - lambda).abs() <= 1e-6 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    Ok(lambda)
}

/// Weights `phi` used in the gradient-divergence bound.
#[derive(Debug, Clone, PartialEq)]
pub enum DivergenceWeights {
    /// `phi_k = S_k / S`.
    DataProportional,
    /// Worst case over the probability simplex, attained at its vertices.
    SimplexVertices,
    Custom(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConstants {
    pub mu: f64,
    pub delta: f64,
}

/// Variance bound `mu` and divergence bound `delta`, maximized over the given
/// parameter samples.
///
/// The mini-batch variance is the exact expectation for sampling
/// `batch_size` of `S_k` items without replacement:
/// `(S_k - m) / (m (S_k - 1)) * (1 / S_k) sum_i ||g_i - g_bar||^2`.
pub fn estimate_sgd_constants(
    thetas: &[ModelVector],
    spec: &LossSpec,
    data: &Dataset,
    partition: &Partition,
    batch_size: usize,
    weights: &DivergenceWeights,
) -> Result<SgdConstants> {
    if thetas.is_empty() {
        return Err(Error::InvalidConfig("need at least one parameter sample".into()));
    }
    let k = partition.devices();
    let phis: Vec<Vec<f64>> = match weights {
        DivergenceWeights::DataProportional => vec![partition.weights()],
        DivergenceWeights::SimplexVertices => (0..k)
            .map(|j| (0..k).map(|i| f64::from(u8::from(i == j))).collect())
            .collect(),
        DivergenceWeights::Custom(w) => {
            if w.iter().any(|p| p.len() != k) {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: w.iter().map(Vec::len).find(|&l| l != k).unwrap_or(0),
                });
            }
            w.clone()
        }
    };
    let mut mu: f64 = 0.0;
    let mut delta: f64 = 0.0;
    for theta in thetas {
        let mut local = Vec::with_capacity(k);
        for sh in &partition.shards {
            let s = sh.len();
            let m = batch_size.min(s);
            let g_bar = local_grad(theta, data, sh, spec)?;
            if m < s {
                let spread: f64 = sh
                    .iter()
                    .map(|&i| {
                        let gi = local_grad(theta, data, &[i], spec).expect("validated shapes");
                        gi.0.iter().zip(&g_bar.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                    })
                    .sum::<f64>()
                    / s as f64;
                let var = (s - m) as f64 / (m as f64 * (s - 1) as f64) * spread;
                mu = mu.max(var);
            }
            local.push(g_bar);
        }
        let g = global_grad(theta, data, partition, spec)?;
        for phi in &phis {
            let dev: f64 = (0..g.dim())
                .map(|i| {
                    let mix: f64 = phi.iter().zip(&local).map(|(p, gk)| p * gk.0[i]).sum();
                    (g.0[i] - mix).powi(2)
                })
                .sum();
            delta = delta.max(dev);
        }
    }
    Ok(SgdConstants { mu, delta })
}

/// Minimizer of the global loss by accelerated full-gradient descent with
/// adaptive restart, run until `||grad|| < tol`. Logistic tasks only.
pub fn minimize_global_loss(
    spec: &LossSpec,
    data: &Dataset,
    partition: &Partition,
    l: f64,
    start: &ModelVector,
    tol: f64,
    max_iters: usize,
) -> Result<(ModelVector, f64)> {
    if !matches!(spec.task, Task::Logistic) || !(spec.l2_reg > 0.0) {
        return Err(Error::InvalidConfig(
            "optimum oracle needs a strongly convex logistic task".into(),
        ));
    }
    let step = 1.0 / l;
    let mut x = start.clone();
    let mut y = x.clone();
    let mut f_prev = global_loss(&x, data, partition, spec)?;
    let mut momentum = 0.0f64;
    for _ in 0..max_iters {
        let g = global_grad(&y, data, partition, spec)?;
        let gx = global_grad(&x, data, partition, spec)?;
        if gx.norm_sqr().sqrt() < tol {
            break;
        }
        let next = ModelVector(y.0.iter().zip(&g.0).map(|(a, b)| a - step * b).collect());
        let f_next = global_loss(&next, data, partition, spec)?;
        if f_next > f_prev {
            // restart from the last iterate with a plain gradient step
            momentum = 0.0;
            x = ModelVector(x.0.iter().zip(&gx.0).map(|(a, b)| a - step * b).collect());
            y = x.clone();
            f_prev = global_loss(&x, data, partition, spec)?;
            continue;
        }
        let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0).max(0.0) / m_next;
        y = ModelVector(next.0.iter().zip(&x.0).map(|(n, o)| n + beta * (n - o)).collect());
        x = next;
        momentum = m_next;
        f_prev = f_next;
    }
    let f = global_loss(&x, data, partition, spec)?;
    Ok((x, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::data::{mixture_means, sample_mixture, MixtureSpec};
    use crate::fl::PartitionKind;
    use crate::rng::{RngSpec, Stream};
    use approx::assert_relative_eq;

    fn toy(classes: usize, n: usize) -> Dataset {
        let mut r = RngSpec::new(21).stream(Stream::Data, 0, 0);
        let means = mixture_means(
            &MixtureSpec {
                classes,
                feature_dim: 3,
                separation: 2.0,
            },
            &mut r,
        );
        sample_mixture(&means, n, &mut r)
    }

    #[test]
    fn scalar_binary_smoothness() {
        let data = Dataset::new(vec![1.0], vec![1], 1, 2).unwrap();
        let spec = LossSpec {
            task: Task::Logistic,
            l2_reg: 0.01,
            classes: 2,
            feature_dim: 1,
            bias: false,
        };
        let mut r = RngSpec::new(0).stream(Stream::Estimate, 0, 0);
        let s = estimate_smoothness(&spec, &data, &[0], &mut r).unwrap();
        assert_relative_eq!(s.l, 0.26, epsilon = 1e-12);
        assert_eq!(s.lambda, 0.01);
        assert!(!s.heuristic);
    }

    #[test]
    fn mlp_smoothness_is_heuristic() {
        let data = toy(3, 12);
        let spec = LossSpec {
            task: Task::Mlp { hidden: 4 },
            l2_reg: 0.01,
            classes: 3,
            feature_dim: 3,
            bias: true,
        };
        let mut r = RngSpec::new(0).stream(Stream::Estimate, 0, 0);
        let s = estimate_smoothness(&spec, &data, &(0..12).collect::<Vec<_>>(), &mut r).unwrap();
        assert!(s.heuristic);
        assert!(s.l > 0.0 && s.l.is_finite());
    }

    #[test]
    fn full_batch_has_no_variance() {
        let data = toy(4, 20);
        let spec = LossSpec::logistic(4, 3, 0.01);
        let mut r = RngSpec::new(0).stream(Stream::Data, 0, 1);
        let part = Partition::build(&data, 2, PartitionKind::RandomEven, &mut r).unwrap();
        let thetas = vec![ModelVector::zeros(spec.dim())];
        let c = estimate_sgd_constants(&thetas, &spec, &data, &part, 10, &DivergenceWeights::SimplexVertices).unwrap();
        assert_eq!(c.mu, 0.0);
        assert!(c.delta > 0.0);
    }

    #[test]
    fn identical_shards_have_no_divergence() {
        let base = toy(4, 6);
        let mut f = base.features.clone();
        f.extend_from_slice(&base.features);
        let mut y = base.labels.clone();
        y.extend_from_slice(&base.labels);
        let data = Dataset::new(f, y, 3, 4).unwrap();
        let part = Partition {
            shards: vec![(0..6).collect(), (6..12).collect()],
        };
        let spec = LossSpec::logistic(4, 3, 0.01);
        let thetas = vec![ModelVector(vec![0.1; spec.dim()])];
        let c = estimate_sgd_constants(&thetas, &spec, &data, &part, 2, &DivergenceWeights::SimplexVertices).unwrap();
        assert!(c.delta < 1e-28);
        assert!(c.mu > 0.0);
    }

    #[test]
    fn exact_minibatch_variance_matches_enumeration() {
        let data = toy(4, 5);
        let spec = LossSpec::logistic(4, 3, 0.01);
        let part = Partition {
            shards: vec![(0..5).collect()],
        };
        let theta = ModelVector(vec![0.2; spec.dim()]);
        let m = 2;
        let c = estimate_sgd_constants(
            std::slice::from_ref(&theta),
            &spec,
            &data,
            &part,
            m,
            &DivergenceWeights::DataProportional,
        )
        .unwrap();
        let full = local_grad(&theta, &data, &part.shards[0], &spec).unwrap();
        let mut acc = 0.0;
        let mut count = 0;
        for a in 0..5 {
            for b in a + 1..5 {
                let g = local_grad(&theta, &data, &[a, b], &spec).unwrap();
                acc += g.0.iter().zip(&full.0).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
                count += 1;
            }
        }
        assert_relative_eq!(c.mu, acc / count as f64, max_relative = 1e-12);
    }

    #[test]
    fn divergence_matches_direct_evaluation() {
        // two devices holding disjoint classes
        let data = toy(2, 20);
        let spec = LossSpec::logistic(2, 3, 0.01);
        let mut r = RngSpec::new(0).stream(Stream::Data, 0, 2);
        let part = Partition::build(&data, 2, PartitionKind::ByClass, &mut r).unwrap();
        let theta = ModelVector(vec![0.3; spec.dim()]);
        let c = estimate_sgd_constants(
            std::slice::from_ref(&theta),
            &spec,
            &data,
            &part,
            10,
            &DivergenceWeights::SimplexVertices,
        )
        .unwrap();
        let g = global_grad(&theta, &data, &part, &spec).unwrap();
        let direct = part
            .shards
            .iter()
            .map(|sh| {
                let gk = local_grad(&theta, &data, sh, &spec).unwrap();
                g.0.iter().zip(&gk.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .fold(0.0, f64::max);
        assert!(c.delta > 0.0);
        assert_relative_eq!(c.delta, direct, max_relative = 1e-12);
        let prop = estimate_sgd_constants(
            std::slice::from_ref(&theta),
            &spec,
            &data,
            &part,
            10,
            &DivergenceWeights::DataProportional,
        )
        .unwrap();
        assert!(prop.delta < 1e-28);
    }

    #[test]
    fn optimum_oracle_reaches_stationarity() {
        let data = toy(4, 40);
        let spec = LossSpec::logistic(4, 3, 0.05);
        let mut r = RngSpec::new(0).stream(Stream::Data, 0, 3);
        let part = Partition::build(&data, 3, PartitionKind::RandomEven, &mut r).unwrap();
        let s = smoothness_over_partition(&spec, &data, &part, &mut r).unwrap();
        let (theta, f) =
            minimize_global_loss(&spec, &data, &part, s.l, &ModelVector::zeros(spec.dim()), 1e-10, 200_000).unwrap();
        let g = global_grad(&theta, &data, &part, &spec).unwrap();
        assert!(g.norm_sqr().sqrt() < 1e-10);
        assert!(f <= global_loss(&ModelVector::zeros(spec.dim()), &data, &part, &spec).unwrap());
    }
}
