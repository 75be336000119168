//! Bound report: measured learning constants, the per-round surrogate values
//! of a joint-design run, and the resulting bound next to the measured gap.

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scheme};
use super::experiment::{run_setup, setup_replicate};
use crate::bound::{proposition_bound, BoundBreakdown, BoundParams};
use crate::error::{Error, Result};
use crate::fl::estimate::{estimate_sgd_constants, minimize_global_loss, smoothness_over_partition};
use crate::fl::{global_loss, ModelVector};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub scheme: Scheme,
    pub replicate: usize,
    pub l: f64,
    pub lambda: f64,
    pub mu: f64,
    pub delta: f64,
    pub eta: f64,
    pub local_steps: usize,
    /// Constants come from sampled estimates rather than analytic bounds.
    pub heuristic: bool,
    pub f_star: f64,
    pub initial_gap: f64,
    pub final_gap: f64,
    pub breakdown: BoundBreakdown,
}

/// Computes the bound for replicate 0 of the configured scheme (the joint
/// design when the configured scheme is ideal, which has no surrogate).
pub fn bound_report(cfg: &ExperimentConfig) -> Result<BoundReport> {
    let scheme = if cfg.scheme == Scheme::Ideal { Scheme::Jdu } else { cfg.scheme };
    let setup = setup_replicate(cfg, 0)?;
    let spec = &setup.spec;
    let smooth = smoothness_over_partition(spec, &setup.train, &setup.partition, &mut setup.rng.stream(Stream::Estimate, 1, 0))?;
    let l = setup.l;
    let lambda = cfg.bound.lambda.unwrap_or(smooth.lambda);
    let (theta_star, f_star) = minimize_global_loss(spec, &setup.train, &setup.partition, l, &setup.theta0, 1e-10, 200_000)?;
    let run = run_setup(cfg, &setup, scheme)?;
    if run.rows.iter().any(|r| r.aborted) {
        return Err(Error::Evaluation("bound report needs a run without aborted rounds".into()));
    }
    // constants are maximized along the segment from the initial model to the optimum
    let samples: Vec<ModelVector> = (0..=4)
        .map(|i| {
            let s = i as f64 / 4.0;
            ModelVector(setup.theta0.0.iter().zip(&theta_star.0).map(|(a, b)| a + s * (b - a)).collect())
        })
        .chain(run.states.iter().step_by((run.states.len() / 5).max(1)).cloned())
        .collect();
    let needs_estimate = cfg.bound.mu.is_none() || cfg.bound.delta.is_none();
    let est = if needs_estimate {
        Some(estimate_sgd_constants(
            &samples,
            spec,
            &setup.train,
            &setup.partition,
            cfg.learning.batch_size,
            &cfg.bound.divergence.weights(),
        )?)
    } else {
        None
    };
    let mu = cfg.bound.mu.unwrap_or_else(|| est.expect("estimated").mu);
    let delta = cfg.bound.delta.unwrap_or_else(|| est.expect("estimated").delta);
    let initial_gap = global_loss(&setup.theta0, &setup.train, &setup.partition, spec)? - f_star;
    let final_gap = run.rows.last().expect("round 0 row").global_loss - f_star;
    let params = BoundParams {
        l,
        lambda,
        mu,
        delta,
        eta: vec![setup.eta; cfg.system.rounds],
        local_steps: cfg.learning.local_steps,
        phi: setup.partition.weights(),
        gamma: initial_gap,
        f_star,
    };
    let h: Vec<f64> = run.rows[1..].iter().map(|r| r.h_value).collect();
    let breakdown = proposition_bound(&params, &h)?;
    Ok(BoundReport {
        scheme,
        replicate: 0,
        l,
        lambda,
        mu,
        delta,
        eta: setup.eta,
        local_steps: cfg.learning.local_steps,
        heuristic: smooth.heuristic,
        f_star,
        initial_gap,
        final_gap,
        breakdown,
    })
}
