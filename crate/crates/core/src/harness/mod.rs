//! Experiment orchestration: configuration, the round loop for each scheme,
//! replication, summaries and file output.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod mnist;
pub mod report;
pub mod selftest;

pub use config::{ExperimentConfig, NormProxyMode, Scheme};
pub use experiment::{replay_round, run_experiment, run_replicate, run_schemes, RoundMetrics};
pub use metrics::{emit_metrics, summarize, Summary};
pub use mnist::ingest_mnist;
pub use report::{bound_report, BoundReport};

use crate::error::{Error, Result};

/// Merged metrics of several schemes on common random numbers plus their summary.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<RoundMetrics>,
    pub summary: Summary,
}

pub fn compare_schemes(cfg: &ExperimentConfig, schemes: &[Scheme]) -> Result<Comparison> {
    if schemes.len() < 2 {
        return Err(Error::InvalidConfig("comparison needs at least two schemes".into()));
    }
    let rows = run_schemes(cfg, schemes)?;
    let bound = if cfg.bound.report { Some(bound_report(cfg)?) } else { None };
    let summary = summarize(&rows, cfg.seeds.master, bound);
    Ok(Comparison { rows, summary })
}

/// Runs the configured scheme and summarizes it.
pub fn run_and_summarize(cfg: &ExperimentConfig) -> Result<Comparison> {
    let rows = run_experiment(cfg)?;
    let bound = if cfg.bound.report { Some(bound_report(cfg)?) } else { None };
    let summary = summarize(&rows, cfg.seeds.master, bound);
    Ok(Comparison { rows, summary })
}
