//! Device geometry, large-scale path gain, per-round Rayleigh fading and
//! receiver noise levels.
//!
//! Powers and variances are linear watts internally; dB and dBm appear only
//! at the configuration boundary.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cn01, CVec};
use crate::rng::{RngSpec, Stream};

/// Per-device distance and shadowing. Shadowing is static across rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceGeometry {
    pub distances_km: Vec<f64>,
    pub shadow_db: Vec<f64>,
}

impl DeviceGeometry {
    pub fn len(&self) -> usize {
        self.distances_km.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances_km.is_empty()
    }

    /// Linear path gains `G_k`.
    pub fn linear_gains(&self) -> Result<Vec<f64>> {
        self.distances_km
            .iter()
            .zip(&self.shadow_db)
            .map(|(&d, &s)| path_gain_db(d, s).map(db_to_linear))
            .collect()
    }
}

/// Channel vectors for one round; the same `h` serves downlink and uplink.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub h: Vec<CVec>,
    pub round: usize,
}

impl ChannelState {
    pub fn devices(&self) -> usize {
        self.h.len()
    }

    pub fn antennas(&self) -> usize {
        self.h.first().map_or(0, |v| v.len())
    }
}

/// Complex noise-element variances (W). Real and imaginary parts each carry half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigma2_dl: f64,
    pub sigma2_ul: f64,
}

impl NoiseParams {
    pub fn new(sigma2_dl: f64, sigma2_ul: f64) -> Result<Self> {
        if !(sigma2_dl >= 0.0 && sigma2_ul >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise variances must be nonnegative, got ({sigma2_dl}, {sigma2_ul})"
            )));
        }
        Ok(Self {
            sigma2_dl,
            sigma2_ul,
        })
    }

    pub fn noiseless() -> Self {
        Self {
            sigma2_dl: 0.0,
            sigma2_ul: 0.0,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Draws device distances uniformly on `d_range` and zero-mean normal shadowing.
pub fn gen_topology(
    devices: usize,
    d_range: (f64, f64),
    shadow_std_db: f64,
    rng: &RngSpec,
) -> Result<DeviceGeometry> {
    let (lo, hi) = d_range;
    if devices == 0 {
        return Err(Error::InvalidConfig("need at least one device".into()));
    }
    if !(lo > 0.0 && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidConfig(format!(
            "distance range ({lo}, {hi}) km is empty or inverted"
        )));
    }
    if !(shadow_std_db >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "shadowing std must be nonnegative, got {shadow_std_db}"
        )));
    }
    let mut r = rng.stream(Stream::Geometry, 0, 0);
    let distances_km: Vec<f64> = (0..devices).map(|_| r.gen_range(lo..=hi)).collect();
    let shadow = Normal::new(0.0, shadow_std_db).expect("validated std");
    let shadow_db = (0..devices).map(|_| shadow.sample(&mut r)).collect();
    Ok(DeviceGeometry {
        distances_km,
        shadow_db,
    })
}

/// `-139.2 - 35 log10(d) - shadow` in dB.
pub fn path_gain_db(d_km: f64, shadow_db: f64) -> Result<f64> {
    if !(d_km > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {d_km} km")));
    }
    Ok(-139.2 - 35.0 * d_km.log10() - shadow_db)
}

/// `h_k = sqrt(G_k) * hbar_k` with `hbar_k ~ CN(0, I_N)`, one sub-stream per `(t, k)`.
pub fn draw_channels(
    geom: &DeviceGeometry,
    antennas: usize,
    round: usize,
    rng: &RngSpec,
) -> Result<ChannelState> {
    if antennas == 0 {
        return Err(Error::InvalidConfig("need at least one antenna".into()));
    }
    let gains = geom.linear_gains()?;
    let h = gains
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let mut r = rng.stream(Stream::Fading, round as u64, k as u64);
            let amp = g.sqrt();
            (0..antennas).map(|_| cn01(&mut r) * amp).collect()
        })
        .collect();
    Ok(ChannelState { h, round })
}

/// Thermal noise power `n0 + 10 log10(bw) + nf` (dBm) in watts.
pub fn noise_variance(n0_dbm_hz: f64, bandwidth_hz: f64, nf_db: f64) -> Result<f64> {
    if !(bandwidth_hz > 0.0) {
        return Err(Error::Domain(format!(
            "bandwidth must be positive, got {bandwidth_hz} Hz"
        )));
    }
    Ok(dbm_to_watts(n0_dbm_hz + 10.0 * bandwidth_hz.log10() + nf_db))
}
