//! Per-replicate setup and the round loop: channel draw, beamforming design,
//! downlink broadcast, local SGD, uplink aggregation, evaluation.

use std::time::Instant;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetConfig, ExperimentConfig, NormProxyMode, Scheme};
use super::mnist::ingest_mnist;
use crate::airlink::{
    check_downlink_power, check_uplink_power, downlink_broadcast, ideal_aggregate, uplink_aggregate, AggregationMode,
    BeamformingSolution, PowerBudget,
};
use crate::bound::{h_of, q_t, SurrogateScale};
use crate::channel::{draw_channels, gen_topology, DeviceGeometry, NoiseParams};
use crate::error::{Error, Result};
use crate::fl::data::{mixture_means, sample_mixture, MixtureSpec, Partition};
use crate::fl::estimate::smoothness_over_partition;
use crate::fl::{evaluate_accuracy, global_loss, local_update, Dataset, DeviceData, LossSpec, ModelVector};
use crate::linalg::inner;
use crate::optim::{
    jdu_bf_round, jdu_uplink_refine, project_box, random_beamforming, sdu_downlink, sdu_uplink, write_trace_csv,
    RoundContext,
};
use crate::rng::{RngSpec, Stream};

/// One row of the metrics table. Round 0 evaluates the initial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub replicate: usize,
    pub round: usize,
    pub scheme: Scheme,
    pub global_loss: f64,
    pub test_accuracy: f64,
    pub h_value: f64,
    pub phi_value: f64,
    pub min_dl_snr_db: f64,
    pub sum_alpha: f64,
    pub wall_ms: f64,
    pub aborted: bool,
}

/// Everything a replicate needs besides the round index and current model.
#[derive(Debug, Clone)]
pub struct ReplicateSetup {
    pub index: usize,
    pub rng: RngSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    pub spec: LossSpec,
    pub theta0: ModelVector,
    pub geometry: DeviceGeometry,
    /// Smoothness used for the learning rate and the surrogate scale.
    pub l: f64,
    pub eta: f64,
    pub noise: NoiseParams,
    pub budget: PowerBudget,
}

impl ReplicateSetup {
    pub fn surrogate_scale(&self, local_steps: usize) -> Result<SurrogateScale> {
        Ok(SurrogateScale {
            l: self.l,
            q: q_t(self.eta, local_steps, self.l)?,
            dim: self.spec.dim(),
        })
    }
}

fn load_data(cfg: &ExperimentConfig, rng: &RngSpec) -> Result<(Dataset, Dataset)> {
    let l = &cfg.learning;
    match &l.dataset {
        DatasetConfig::Mixture { separation } => {
            let spec = MixtureSpec {
                classes: l.classes,
                feature_dim: l.feature_dim,
                separation: *separation,
            };
            let means = mixture_means(&spec, &mut rng.stream(Stream::Data, 0, 0));
            let train = sample_mixture(&means, l.train_samples, &mut rng.stream(Stream::Data, 1, 0));
            let test = sample_mixture(&means, l.test_samples, &mut rng.stream(Stream::Data, 2, 0));
            Ok((train, test))
        }
        DatasetConfig::Mnist { dir } => {
            if l.classes != 10 || l.feature_dim != 784 {
                return Err(Error::InvalidConfig("MNIST needs classes = 10 and feature_dim = 784".into()));
            }
            let train = ingest_mnist(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
                Some(l.train_samples),
            )?;
            let test = ingest_mnist(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
                Some(l.test_samples),
            )?;
            if train.len() < l.train_samples || test.len() < l.test_samples {
                return Err(Error::InvalidConfig("MNIST files hold fewer samples than requested".into()));
            }
            Ok((train, test))
        }
    }
}

/// Draws the data, partition, initial model and geometry of one replicate.
pub fn setup_replicate(cfg: &ExperimentConfig, index: usize) -> Result<ReplicateSetup> {
    cfg.validate()?;
    let base = RngSpec::new(cfg.seeds.master);
    let rng = base.replicate(index);
    let data_rng = if cfg.seeds.pin_data { base } else { rng };
    let geo_rng = if cfg.seeds.pin_geometry { base } else { rng };
    let (train, test) = load_data(cfg, &data_rng)?;
    let spec = cfg.loss_spec();
    let partition = Partition::build(
        &train,
        cfg.system.devices,
        cfg.learning.partition,
        &mut data_rng.stream(Stream::Data, 3, 0),
    )?;
    let mut init = data_rng.stream(Stream::Init, 0, 0);
    let mut theta0 = if cfg.learning.init_std > 0.0 {
        let nrm = Normal::new(0.0, cfg.learning.init_std).expect("validated std");
        ModelVector((0..spec.dim()).map(|_| nrm.sample(&mut init)).collect())
    } else {
        ModelVector::zeros(spec.dim())
    };
    spec.clear_padding(&mut theta0);
    let s = &cfg.system;
    let geometry = gen_topology(s.devices, (s.d_min_km, s.d_max_km), s.shadow_std_db, &geo_rng)?;
    let l = match cfg.bound.l {
        Some(l) => l,
        None => smoothness_over_partition(&spec, &train, &partition, &mut data_rng.stream(Stream::Estimate, 0, 0))?.l,
    };
    let eta = cfg.eta(l);
    Ok(ReplicateSetup {
        index,
        rng,
        train,
        test,
        partition,
        spec,
        theta0,
        geometry,
        l,
        eta,
        noise: cfg.noise()?,
        budget: cfg.power_budget(),
    })
}

fn evaluate(setup: &ReplicateSetup, theta: &ModelVector) -> Result<(f64, f64)> {
    Ok((
        global_loss(theta, &setup.train, &setup.partition, &setup.spec)?,
        evaluate_accuracy(theta, &setup.test, &setup.spec)?,
    ))
}

/// Row for the initial model.
pub fn initial_row(setup: &ReplicateSetup, scheme: Scheme) -> Result<RoundMetrics> {
    let (loss, acc) = evaluate(setup, &setup.theta0)?;
    Ok(RoundMetrics {
        replicate: setup.index,
        round: 0,
        scheme,
        global_loss: loss,
        test_accuracy: acc,
        h_value: f64::NAN,
        phi_value: f64::NAN,
        min_dl_snr_db: f64::NAN,
        sum_alpha: f64::NAN,
        wall_ms: 0.0,
        aborted: false,
    })
}

fn local_models(setup: &ReplicateSetup, starts: &[ModelVector], round: usize, local_steps: usize, batch: usize) -> Result<Vec<ModelVector>> {
    starts
        .iter()
        .zip(&setup.partition.shards)
        .enumerate()
        .map(|(k, (start, shard))| {
            let dev = DeviceData {
                data: &setup.train,
                shard,
                spec: &setup.spec,
            };
            let mut r = setup.rng.stream(Stream::Minibatch, round as u64, k as u64);
            local_update(start, &dev, setup.eta, local_steps, batch, &mut r).map(|u| u.theta_j)
        })
        .collect()
}

/// What one round produced besides the next model.
struct Transmission {
    theta: ModelVector,
    h_value: f64,
    phi_value: f64,
    min_dl_snr_db: f64,
    sum_alpha: f64,
}

/// Runs round `round` (1-based) from model `theta`. Returns the next model and
/// its metrics row; an aborted round keeps `theta`.
pub fn execute_round(
    cfg: &ExperimentConfig,
    setup: &ReplicateSetup,
    scheme: Scheme,
    round: usize,
    theta: &ModelVector,
) -> Result<(ModelVector, RoundMetrics)> {
    let started = Instant::now();
    let outcome = transmit(cfg, setup, scheme, round, theta);
    let wall_ms = if cfg.timing {
        started.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let (next, tx, aborted) = match outcome {
        Ok(tx) => (tx.theta.clone(), Some(tx), false),
        Err(Error::SingularAggregation(_)) | Err(Error::DegenerateChannel { .. }) => (theta.clone(), None, true),
        Err(e) => return Err(e),
    };
    let (loss, acc) = evaluate(setup, &next)?;
    let pick = |f: fn(&Transmission) -> f64| tx.as_ref().map_or(f64::NAN, f);
    Ok((
        next,
        RoundMetrics {
            replicate: setup.index,
            round,
            scheme,
            global_loss: loss,
            test_accuracy: acc,
            h_value: pick(|t| t.h_value),
            phi_value: pick(|t| t.phi_value),
            min_dl_snr_db: pick(|t| t.min_dl_snr_db),
            sum_alpha: pick(|t| t.sum_alpha),
            wall_ms,
            aborted,
        },
    ))
}

fn transmit(cfg: &ExperimentConfig, setup: &ReplicateSetup, scheme: Scheme, round: usize, theta: &ModelVector) -> Result<Transmission> {
    let j = cfg.learning.local_steps;
    let batch = cfg.learning.batch_size;
    let k = cfg.system.devices;
    if scheme == Scheme::Ideal {
        let locals = local_models(setup, &vec![theta.clone(); k], round, j, batch)?;
        let mut next = ideal_aggregate(&locals)?;
        setup.spec.clear_padding(&mut next);
        return Ok(Transmission {
            theta: next,
            h_value: f64::NAN,
            phi_value: f64::NAN,
            min_dl_snr_db: f64::NAN,
            sum_alpha: f64::NAN,
        });
    }
    let dim = setup.spec.dim();
    let norm_theta = theta.norm_sqr();
    if !(norm_theta > 0.0) {
        return Err(Error::InvalidConfig("cannot broadcast an all-zero model; use init_std > 0".into()));
    }
    let ch = draw_channels(&setup.geometry, cfg.system.antennas, round, &setup.rng)?;
    let scale = setup.surrogate_scale(j)?;
    let mut ctx = RoundContext {
        ch,
        noise: setup.noise,
        budget: setup.budget.clone(),
        norm_theta,
        norm_local: vec![norm_theta; k],
        scale,
    };
    let pgd = &cfg.solver.pgd;
    let ao = &cfg.solver.ao;
    let mut phi_value = f64::NAN;
    let first = match scheme {
        Scheme::Jdu => {
            let out = jdu_bf_round(&ctx, None, ao, pgd)?;
            phi_value = out.phi;
            if let Some(dir) = &cfg.solver.trace_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                write_trace_csv(&out.trace, &dir.join(format!("trace_r{}_t{round}.csv", setup.index)))?;
            }
            out.solution
        }
        Scheme::Sdu => {
            let w_dl = sdu_downlink(&ctx, pgd)?;
            BeamformingSolution {
                w_ul: w_dl.clone(),
                w_dl,
                p: ctx.p_caps(),
            }
        }
        Scheme::Rbf => random_beamforming(&ctx, &mut setup.rng.stream(Stream::Design, round as u64, 0))?,
        Scheme::Ideal => unreachable!("handled above"),
    };
    check_downlink_power(&first.w_dl, norm_theta, dim, &ctx.budget)?;
    let estimates = downlink_broadcast(theta, &first.w_dl, &ctx.ch, &ctx.noise, &setup.rng)?;
    let locals = local_models(setup, &estimates, round, j, batch)?;
    ctx.norm_local = locals.iter().map(ModelVector::norm_sqr).collect();
    if ctx.norm_local.iter().any(|n| !(*n > 0.0)) {
        return Err(Error::InvalidConfig("a local model is all zeros".into()));
    }
    let sol = match scheme {
        Scheme::Jdu => match cfg.solver.norm_proxy_mode {
            NormProxyMode::Refine => jdu_uplink_refine(&ctx, &first, ao, pgd)?.solution,
            NormProxyMode::Proxy => BeamformingSolution {
                p: project_box(&first.p, &ctx.p_caps()),
                ..first
            },
        },
        Scheme::Sdu => {
            let (w_ul, p) = sdu_uplink(&ctx)?;
            BeamformingSolution { w_ul, p, ..first }
        }
        _ => BeamformingSolution {
            p: ctx.p_caps(),
            ..first
        },
    };
    check_uplink_power(&sol.p, &ctx.norm_local, dim, &ctx.budget)?;
    let mode = if scheme == Scheme::Rbf {
        AggregationMode::Raw
    } else {
        AggregationMode::Aligned
    };
    let agg = uplink_aggregate(&locals, &sol, &ctx.ch, &ctx.noise, &setup.rng, mode)?;
    let mut next = agg.theta;
    setup.spec.clear_padding(&mut next);
    let h_value = h_of(&sol, &ctx.ch, &ctx.noise, &ctx.scale).unwrap_or(f64::NAN);
    let min_gain = ctx
        .ch
        .h
        .iter()
        .map(|h| inner(h, &sol.w_dl).norm_sqr())
        .fold(f64::INFINITY, f64::min);
    // average per-entry received SNR of the weakest device
    let min_dl_snr_db = 10.0 * (min_gain * norm_theta / (dim as f64 * ctx.noise.sigma2_dl)).log10();
    let sum_alpha = match mode {
        AggregationMode::Aligned => agg.sum_alpha.re,
        AggregationMode::Raw => agg.sum_alpha.norm(),
    };
    Ok(Transmission {
        theta: next,
        h_value,
        phi_value,
        min_dl_snr_db,
        sum_alpha,
    })
}

/// Metrics rows and the model at the start of every round.
#[derive(Debug, Clone)]
pub struct ReplicateRun {
    pub rows: Vec<RoundMetrics>,
    /// `states[t]` is the model entering round `t + 1`; the last entry is the final model.
    pub states: Vec<ModelVector>,
}

pub fn run_replicate(cfg: &ExperimentConfig, scheme: Scheme, index: usize) -> Result<ReplicateRun> {
    let setup = setup_replicate(cfg, index)?;
    run_setup(cfg, &setup, scheme)
}

pub fn run_setup(cfg: &ExperimentConfig, setup: &ReplicateSetup, scheme: Scheme) -> Result<ReplicateRun> {
    let mut rows = vec![initial_row(setup, scheme)?];
    let mut states = vec![setup.theta0.clone()];
    let mut theta = setup.theta0.clone();
    for t in 1..=cfg.system.rounds {
        let (next, row) = execute_round(cfg, setup, scheme, t, &theta)?;
        rows.push(row);
        theta = next;
        states.push(theta.clone());
    }
    Ok(ReplicateRun { rows, states })
}

/// Re-executes one round of one replicate from the model that entered it.
pub fn replay_round(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    replicate: usize,
    round: usize,
    theta: &ModelVector,
) -> Result<RoundMetrics> {
    if round == 0 {
        return Err(Error::InvalidConfig("round 0 is the initial evaluation".into()));
    }
    let setup = setup_replicate(cfg, replicate)?;
    execute_round(cfg, &setup, scheme, round, theta).map(|(_, row)| row)
}

/// All replicates of one scheme, in replicate order.
pub fn run_scheme(cfg: &ExperimentConfig, scheme: Scheme) -> Result<Vec<RoundMetrics>> {
    let runs: Vec<ReplicateRun> = (0..cfg.seeds.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, scheme, r))
        .collect::<Result<_>>()?;
    Ok(runs.into_iter().flat_map(|r| r.rows).collect())
}

/// Runs the configured scheme.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RoundMetrics>> {
    run_scheme(cfg, cfg.scheme)
}

/// Runs several schemes on identical seeds. Replicates share their data,
/// geometry, channels, noise and mini-batches across schemes.
pub fn run_schemes(cfg: &ExperimentConfig, schemes: &[Scheme]) -> Result<Vec<RoundMetrics>> {
    let setups: Vec<ReplicateSetup> = (0..cfg.seeds.replicates)
        .into_par_iter()
        .map(|r| setup_replicate(cfg, r))
        .collect::<Result<_>>()?;
    let jobs: Vec<(Scheme, &ReplicateSetup)> = schemes.iter().flat_map(|&s| setups.iter().map(move |st| (s, st))).collect();
    let runs: Vec<ReplicateRun> = jobs
        .into_par_iter()
        .map(|(s, st)| run_setup(cfg, st, s))
        .collect::<Result<_>>()?;
    Ok(runs.into_iter().flat_map(|r| r.rows).collect())
}
