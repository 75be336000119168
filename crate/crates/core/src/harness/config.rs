//! Experiment configuration: a versioned JSON document where unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::airlink::PowerBudget;
use crate::channel::{dbm_to_watts, noise_variance, NoiseParams};
use crate::error::{Error, Result};
use crate::fl::data::PartitionKind;
use crate::fl::estimate::DivergenceWeights;
use crate::fl::{LossSpec, Task};
use crate::optim::{AoConfig, PgdConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable that overrides `seeds.master`.
pub const SEED_ENV: &str = "AIRFL_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub devices: usize,
    pub antennas: usize,
    pub rounds: usize,
    pub p_dl_dbm: f64,
    pub p_ul_dbm: f64,
    pub bw_dl_hz: f64,
    pub bw_ul_hz: f64,
    pub n0_dbm_hz: f64,
    /// Device receiver noise figure (downlink).
    pub nf_dev_db: f64,
    /// Base station receiver noise figure (uplink).
    pub nf_bs_db: f64,
    pub d_min_km: f64,
    pub d_max_km: f64,
    pub shadow_std_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum EtaRule {
    /// `eta = 1 / (divisor * J * L)`.
    InverseSmoothness { divisor: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DatasetConfig {
    Mixture {
        separation: f64,
    },
    /// Official IDX files (`train-images-idx3-ubyte` and friends) in `dir`.
    Mnist {
        dir: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningConfig {
    pub task: Task,
    pub classes: usize,
    pub feature_dim: usize,
    pub l2_reg: f64,
    pub local_steps: usize,
    pub batch_size: usize,
    pub eta_rule: EtaRule,
    pub train_samples: usize,
    pub test_samples: usize,
    pub partition: PartitionKind,
    pub dataset: DatasetConfig,
    /// Standard deviation of the random initial model.
    pub init_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Jdu,
    Sdu,
    Rbf,
    Ideal,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Jdu => "jdu",
            Scheme::Sdu => "sdu",
            Scheme::Rbf => "rbf",
            Scheme::Ideal => "ideal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "jdu" => Ok(Scheme::Jdu),
            "sdu" => Ok(Scheme::Sdu),
            "rbf" => Ok(Scheme::Rbf),
            "ideal" => Ok(Scheme::Ideal),
            other => Err(Error::InvalidConfig(format!("unknown scheme {other:?}"))),
        }
    }
}

/// How the uplink design learns `||theta^J_k||^2`, which only exists after local training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormProxyMode {
    /// Design once with `||theta_t||^2` as the proxy, then clip powers to the true caps.
    Proxy,
    /// Design with the proxy, then re-solve the uplink blocks with the true norms.
    Refine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub pgd: PgdConfig,
    #[serde(default)]
    pub ao: AoConfig,
    pub norm_proxy_mode: NormProxyMode,
    /// Dumps per-round solver traces as CSV when set.
    #[serde(default)]
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceMode {
    DataProportional,
    SimplexVertices,
}

impl DivergenceMode {
    pub fn weights(self) -> DivergenceWeights {
        match self {
            DivergenceMode::DataProportional => DivergenceWeights::DataProportional,
            DivergenceMode::SimplexVertices => DivergenceWeights::SimplexVertices,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    #[serde(default)]
    pub l: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    pub divergence: DivergenceMode,
    /// Attach a bound report to `summary.json`.
    pub report: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub master: u64,
    pub replicates: usize,
    /// Reuse one geometry for every replicate.
    #[serde(default)]
    pub pin_geometry: bool,
    /// Reuse one dataset, partition and initial model for every replicate.
    #[serde(default)]
    pub pin_data: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub system: SystemConfig,
    pub learning: LearningConfig,
    pub scheme: Scheme,
    pub solver: SolverConfig,
    pub bound: BoundConfig,
    pub seeds: SeedConfig,
    /// Record real solver wall times; off by default so outputs are reproducible.
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentConfig {
    /// K=10, N=8, T=50, 4-class mixture in 20 dimensions, 4000 samples on even
    /// shards, ridge logistic regression, J=5, batch 16, eta = 1/(10 J L).
    pub fn desk_preset() -> Self {
        Self {
            version: CONFIG_VERSION,
            system: SystemConfig {
                devices: 10,
                antennas: 8,
                rounds: 50,
                p_dl_dbm: 47.0,
                p_ul_dbm: 23.0,
                bw_dl_hz: 10e6,
                bw_ul_hz: 1e6,
                n0_dbm_hz: -174.0,
                nf_dev_db: 8.0,
                nf_bs_db: 2.0,
                d_min_km: 1.0,
                d_max_km: 1.5,
                shadow_std_db: 8.0,
            },
            learning: LearningConfig {
                task: Task::Logistic,
                classes: 4,
                feature_dim: 20,
                l2_reg: 0.01,
                local_steps: 5,
                batch_size: 16,
                eta_rule: EtaRule::InverseSmoothness { divisor: 10.0 },
                train_samples: 4000,
                test_samples: 2000,
                partition: PartitionKind::RandomEven,
                dataset: DatasetConfig::Mixture { separation: 3.0 },
                init_std: 0.1,
            },
            scheme: Scheme::Jdu,
            solver: SolverConfig {
                pgd: PgdConfig::default(),
                ao: AoConfig::default(),
                norm_proxy_mode: NormProxyMode::Refine,
                trace_dir: None,
            },
            bound: BoundConfig {
                l: None,
                lambda: None,
                mu: None,
                delta: None,
                divergence: DivergenceMode::SimplexVertices,
                report: false,
            },
            seeds: SeedConfig {
                master: 2024,
                replicates: 10,
                pin_geometry: false,
                pin_data: false,
            },
            timing: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.seeds.master = seed
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let s = &self.system;
        let positive = [
            ("bw_dl_hz", s.bw_dl_hz),
            ("bw_ul_hz", s.bw_ul_hz),
            ("d_min_km", s.d_min_km),
            ("d_max_km", s.d_max_km),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let finite = [
            ("p_dl_dbm", s.p_dl_dbm),
            ("p_ul_dbm", s.p_ul_dbm),
            ("n0_dbm_hz", s.n0_dbm_hz),
            ("nf_dev_db", s.nf_dev_db),
            ("nf_bs_db", s.nf_bs_db),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        if !(s.shadow_std_db >= 0.0) || s.d_min_km > s.d_max_km {
            return Err(Error::InvalidConfig("bad shadowing or distance range".into()));
        }
        if s.devices == 0 || s.antennas == 0 {
            return Err(Error::InvalidConfig("need at least one device and one antenna".into()));
        }
        let l = &self.learning;
        self.loss_spec().validate()?;
        if l.local_steps == 0 || l.batch_size == 0 || l.train_samples < s.devices || l.test_samples == 0 {
            return Err(Error::InvalidConfig("bad local steps, batch size or sample counts".into()));
        }
        if l.batch_size > l.train_samples / s.devices {
            return Err(Error::InvalidConfig(format!(
                "batch size {} exceeds the smallest shard {}",
                l.batch_size,
                l.train_samples / s.devices
            )));
        }
        match l.eta_rule {
            EtaRule::InverseSmoothness { divisor } if !(divisor > 0.0) => {
                return Err(Error::InvalidConfig("eta divisor must be positive".into()))
            }
            EtaRule::Constant { value } if !(value > 0.0) => {
                return Err(Error::InvalidConfig("eta must be positive".into()))
            }
            _ => {}
        }
        if let DatasetConfig::Mixture { separation } = l.dataset {
            if !(separation >= 0.0) {
                return Err(Error::InvalidConfig("separation must be nonnegative".into()));
            }
        }
        if !(l.init_std >= 0.0) {
            return Err(Error::InvalidConfig("init_std must be nonnegative".into()));
        }
        self.solver.pgd.validate()?;
        if self.solver.ao.max_outer == 0 || !(self.solver.ao.tol > 0.0) {
            return Err(Error::InvalidConfig("bad AO settings".into()));
        }
        let b = &self.bound;
        for (name, v) in [("l", b.l), ("lambda", b.lambda)] {
            if matches!(v, Some(x) if !(x > 0.0)) {
                return Err(Error::InvalidConfig(format!("bound override {name} must be positive")));
            }
        }
        for (name, v) in [("mu", b.mu), ("delta", b.delta)] {
            if matches!(v, Some(x) if !(x >= 0.0)) {
                return Err(Error::InvalidConfig(format!("bound override {name} must be nonnegative")));
            }
        }
        if self.seeds.replicates == 0 {
            return Err(Error::InvalidConfig("need at least one replicate".into()));
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        let l = &self.learning;
        LossSpec {
            task: l.task,
            l2_reg: l.l2_reg,
            classes: l.classes,
            feature_dim: l.feature_dim,
            bias: true,
        }
    }

    pub fn noise(&self) -> Result<NoiseParams> {
        let s = &self.system;
        NoiseParams::new(
            noise_variance(s.n0_dbm_hz, s.bw_dl_hz, s.nf_dev_db)?,
            noise_variance(s.n0_dbm_hz, s.bw_ul_hz, s.nf_bs_db)?,
        )
    }

    pub fn power_budget(&self) -> PowerBudget {
        PowerBudget {
            p_dl: dbm_to_watts(self.system.p_dl_dbm),
            p_ul: vec![dbm_to_watts(self.system.p_ul_dbm); self.system.devices],
        }
    }

    /// Learning rate for a given smoothness constant.
    pub fn eta(&self, l: f64) -> f64 {
        match self.learning.eta_rule {
            EtaRule::InverseSmoothness { divisor } => 1.0 / (divisor * self.learning.local_steps as f64 * l),
            EtaRule::Constant { value } => value,
        }
    }
}
