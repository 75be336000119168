//! Analog model transmission: real/complex packing, multicast downlink with
//! receiver post-scaling, and over-the-air uplink aggregation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelState, NoiseParams};
use crate::error::{Error, Result};
use crate::fl::ModelVector;
use crate::linalg::{cn01, inner, norm_sqr, CVec};
use crate::rng::{RngSpec, Stream};

/// Floor on `|h^H w|` below which a link is treated as degenerate.
pub const CHANNEL_FLOOR: f64 = 1e-12;

/// Relative slack allowed on power constraints.
pub const POWER_SLACK: f64 = 1e-9;

/// `theta[..D/2] + j theta[D/2..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexModel(pub Vec<Complex64>);

pub fn pack_complex(theta: &ModelVector) -> Result<ComplexModel> {
    let d = theta.dim();
    if d % 2 != 0 {
        return Err(Error::DimensionMismatch {
            expected: d + 1,
            got: d,
        });
    }
    let (re, im) = theta.0.split_at(d / 2);
    Ok(ComplexModel(
        re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect(),
    ))
}

pub fn unpack_real(c: &ComplexModel) -> ModelVector {
    let mut out = Vec::with_capacity(2 * c.0.len());
    out.extend(c.0.iter().map(|z| z.re));
    out.extend(c.0.iter().map(|z| z.im));
    ModelVector(out)
}

/// Downlink beamformer, unit-norm uplink receive beamformer, device power scalings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformingSolution {
    #[serde(with = "complex_vec")]
    pub w_dl: CVec,
    #[serde(with = "complex_vec")]
    pub w_ul: CVec,
    pub p: Vec<f64>,
}

/// Per-channel-use power limits (W).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerBudget {
    pub p_dl: f64,
    pub p_ul: Vec<f64>,
}

impl PowerBudget {
    /// Largest admissible `||w_dl||^2` for a model of squared norm `norm_theta`.
    pub fn dl_norm_cap(&self, dim: usize, norm_theta: f64) -> f64 {
        dim as f64 * self.p_dl / norm_theta
    }

    /// Largest admissible `p_k` for each device given `||theta^J_k||^2`.
    pub fn ul_caps(&self, dim: usize, norm_local: &[f64]) -> Vec<f64> {
        self.p_ul
            .iter()
            .zip(norm_local)
            .map(|(p, n)| dim as f64 * p / n)
            .collect()
    }
}

/// Aggregation rule at the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Device weights phase-align every effective channel to a real positive value.
    Aligned,
    /// No transmit phase alignment; effective channels stay complex.
    Raw,
}

/// Enforces `||w_dl||^2 ||theta_t||^2 <= D P_dl`.
pub fn check_downlink_power(w_dl: &[Complex64], norm_theta: f64, dim: usize, budget: &PowerBudget) -> Result<()> {
    let used = norm_sqr(w_dl) * norm_theta;
    let limit = dim as f64 * budget.p_dl;
    if used > limit * (1.0 + POWER_SLACK) {
        return Err(Error::PowerViolation(format!(
            "downlink uses {used:e} of {limit:e}"
        )));
    }
    Ok(())
}

/// Enforces `p_k ||theta^J_k||^2 <= D P_ul_k` for every device.
pub fn check_uplink_power(p: &[f64], norm_local: &[f64], dim: usize, budget: &PowerBudget) -> Result<()> {
    for (k, ((pk, nk), cap)) in p.iter().zip(norm_local).zip(&budget.p_ul).enumerate() {
        let used = pk * nk;
        let limit = dim as f64 * cap;
        if *pk < 0.0 || used > limit * (1.0 + POWER_SLACK) {
            return Err(Error::PowerViolation(format!(
                "device {k} uses {used:e} of {limit:e}"
            )));
        }
    }
    Ok(())
}

/// Every device's estimate `theta_hat_k = theta_t + n_hat_k` after post-scaling
/// the received multicast by `h_k^H w / |h_k^H w|^2`.
///
/// Device `k` draws its receiver noise from the `(DlNoise, round, k)` stream.
pub fn downlink_broadcast(
    theta: &ModelVector,
    w_dl: &[Complex64],
    ch: &ChannelState,
    noise: &NoiseParams,
    rng: &RngSpec,
) -> Result<Vec<ModelVector>> {
    let packed = pack_complex(theta)?;
    let sigma = noise.sigma2_dl.sqrt();
    ch.h
        .iter()
        .enumerate()
        .map(|(k, hk)| {
            let gain = inner(hk, w_dl);
            if gain.norm() < CHANNEL_FLOOR {
                return Err(Error::DegenerateChannel {
                    device: k,
                    gain: gain.norm(),
                });
            }
            if sigma == 0.0 {
                return Ok(theta.clone());
            }
            let post = gain / gain.norm_sqr();
            let mut r = rng.stream(Stream::DlNoise, ch.round as u64, k as u64);
            let est = packed
                .0
                .iter()
                .map(|&x| x + post * (cn01(&mut r) * sigma))
                .collect();
            Ok(unpack_real(&ComplexModel(est)))
        })
        .collect()
}

/// `sqrt(p_k) |h_k^H w_ul|`.
pub fn effective_alpha(p_k: f64, h_k: &[Complex64], w_ul: &[Complex64]) -> f64 {
    p_k.max(0.0).sqrt() * inner(h_k, w_ul).norm()
}

/// Result of one uplink aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub theta: ModelVector,
    /// Post-processing weights; real in aligned mode, summing to one.
    pub rho: Vec<Complex64>,
    pub sum_alpha: Complex64,
    /// Receiver noise after scaling, unpacked to real form.
    pub noise: ModelVector,
}

/// Over-the-air aggregation `theta_{t+1} = sum_k rho_k theta^J_k + n_ul / sum alpha`.
///
/// Receiver noise comes from the `(UlNoise, round, 0)` stream.
pub fn uplink_aggregate(
    models: &[ModelVector],
    sol: &BeamformingSolution,
    ch: &ChannelState,
    noise: &NoiseParams,
    rng: &RngSpec,
    mode: AggregationMode,
) -> Result<Aggregate> {
    if models.len() != ch.devices() || sol.p.len() != ch.devices() {
        return Err(Error::DimensionMismatch {
            expected: ch.devices(),
            got: models.len(),
        });
    }
    let alphas: Vec<Complex64> = ch
        .h
        .iter()
        .zip(&sol.p)
        .map(|(hk, &pk)| match mode {
            AggregationMode::Aligned => Complex64::new(effective_alpha(pk, hk, &sol.w_ul), 0.0),
            // (w^H h_k) sqrt(p_k): conjugate of h_k^H w
            AggregationMode::Raw => inner(hk, &sol.w_ul).conj() * pk.max(0.0).sqrt(),
        })
        .collect();
    let sum_alpha: Complex64 = alphas.iter().sum();
    match mode {
        AggregationMode::Aligned if !(sum_alpha.re > CHANNEL_FLOOR) => {
            return Err(Error::SingularAggregation(sum_alpha.re));
        }
        AggregationMode::Raw if !(sum_alpha.norm() > CHANNEL_FLOOR) => {
            return Err(Error::SingularAggregation(sum_alpha.norm()));
        }
        _ => {}
    }
    let rho: Vec<Complex64> = alphas.iter().map(|a| a / sum_alpha).collect();
    let packed: Vec<ComplexModel> = models.iter().map(pack_complex).collect::<Result<_>>()?;
    let half = packed[0].0.len();
    let mut acc = vec![Complex64::new(0.0, 0.0); half];
    for (pk, rk) in packed.iter().zip(&rho) {
        if pk.0.len() != half {
            return Err(Error::DimensionMismatch {
                expected: half,
                got: pk.0.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(&pk.0) {
            *a += rk * x;
        }
    }
    let sigma = noise.sigma2_ul.sqrt();
    let mut n = vec![Complex64::new(0.0, 0.0); half];
    if sigma > 0.0 {
        let mut r = rng.stream(Stream::UlNoise, ch.round as u64, 0);
        let inv = sum_alpha.inv();
        for (a, ni) in acc.iter_mut().zip(n.iter_mut()) {
            *ni = cn01(&mut r) * sigma * inv;
            *a += *ni;
        }
    }
    Ok(Aggregate {
        theta: unpack_real(&ComplexModel(acc)),
        rho,
        sum_alpha,
        noise: unpack_real(&ComplexModel(n)),
    })
}

/// Error-free average `(1/K) sum_k theta^J_k`.
pub fn ideal_aggregate(models: &[ModelVector]) -> Result<ModelVector> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidConfig("no local models to aggregate".into()))?;
    let k = models.len() as f64;
    let mut out = vec![0.0; first.dim()];
    for m in models {
        if m.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                got: m.dim(),
            });
        }
        for (o, x) in out.iter_mut().zip(&m.0) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= k);
    Ok(ModelVector(out))
}

mod complex_vec {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let raw: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn packing_layout() {
        let p = pack_complex(&ModelVector(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(p.0, vec![c(1.0, 3.0), c(2.0, 4.0)]);
        assert!(pack_complex(&ModelVector(vec![1.0, 2.0, 3.0])).is_err());
    }

    proptest! {
        #[test]
        fn packing_round_trip(v in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let mut v = v;
            if v.len() % 2 == 1 { v.push(0.5); }
            let theta = ModelVector(v);
            let packed = pack_complex(&theta).unwrap();
            prop_assert_eq!(&unpack_real(&packed), &theta);
            prop_assert_eq!(pack_complex(&unpack_real(&packed)).unwrap(), packed.clone());
            let ns: f64 = packed.0.iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((ns - theta.norm_sqr()).abs() <= 1e-12 * theta.norm_sqr().max(1.0));
        }
    }

    fn single_channel(h: Vec<Complex64>) -> ChannelState {
        ChannelState { h: vec![h], round: 0 }
    }

    #[test]
    fn noiseless_broadcast_is_exact() {
        let theta = ModelVector(vec![0.1, -2.0, 3.5, 4.25]);
        let ch = ChannelState {
            h: vec![vec![c(0.3, 0.1)], vec![c(-1.0, 2.0)]],
            round: 4,
        };
        let est = downlink_broadcast(&theta, &[c(1.0, 0.0)], &ch, &NoiseParams::noiseless(), &RngSpec::new(1)).unwrap();
        assert!(est.iter().all(|e| *e == theta));
    }

    #[test]
    fn degenerate_downlink_is_rejected() {
        let theta = ModelVector(vec![1.0, 1.0]);
        let ch = single_channel(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let err = downlink_broadcast(&theta, &[c(0.0, 0.0), c(1.0, 0.0)], &ch, &NoiseParams::noiseless(), &RngSpec::new(1));
        assert!(matches!(err, Err(Error::DegenerateChannel { device: 0, .. })));
    }

    #[test]
    fn broadcast_noise_variance() {
        // |h^H w|^2 = 2, sigma_d^2 = 0.5 -> 0.125 per real entry
        let d = 10_000;
        let theta = ModelVector(vec![0.0; d]);
        let ch = single_channel(vec![c(1.0, 1.0)]);
        let noise = NoiseParams::new(0.5, 0.0).unwrap();
        let est = downlink_broadcast(&theta, &[c(1.0, 0.0)], &ch, &noise, &RngSpec::new(2)).unwrap();
        let mean = est[0].0.iter().sum::<f64>() / d as f64;
        let var = est[0].0.iter().map(|x| x * x).sum::<f64>() / d as f64;
        assert!((var / 0.125 - 1.0).abs() < 0.05, "{var}");
        assert!(mean.abs() < 3.0 * (0.125f64 / d as f64).sqrt());
    }

    #[test]
    fn alpha_values() {
        assert_relative_eq!(effective_alpha(4.0, &[c(0.5, 0.0)], &[c(1.0, 0.0)]), 1.0);
        assert_eq!(effective_alpha(0.0, &[c(0.5, 0.0)], &[c(1.0, 0.0)]), 0.0);
        let h = vec![c(1.0, 2.0), c(-0.5, 0.3)];
        let n = norm_sqr(&h).sqrt();
        let w: Vec<_> = h.iter().map(|x| x / n).collect();
        assert_relative_eq!(effective_alpha(1.0, &h, &w), n, max_relative = 1e-15);
    }

    #[test]
    fn symmetric_aligned_average() {
        let ch = ChannelState {
            h: vec![vec![c(1.0, 0.0)], vec![c(0.0, 1.0)]],
            round: 0,
        };
        let sol = BeamformingSolution {
            w_dl: vec![c(1.0, 0.0)],
            w_ul: vec![c(1.0, 0.0)],
            p: vec![1.0, 1.0],
        };
        let models = vec![ModelVector(vec![1.0, 0.0]), ModelVector(vec![3.0, 0.0])];
        let agg = uplink_aggregate(&models, &sol, &ch, &NoiseParams::noiseless(), &RngSpec::new(0), AggregationMode::Aligned).unwrap();
        assert_relative_eq!(agg.theta.0[0], 2.0, epsilon = 1e-15);
        let sum: Complex64 = agg.rho.iter().sum();
        assert_relative_eq!(sum.re, 1.0, epsilon = 1e-15);
        assert_eq!(agg.theta, ideal_aggregate(&models).unwrap());
    }

    #[test]
    fn three_equal_devices_get_third_weights() {
        let ch = ChannelState {
            h: vec![vec![c(1.0, 0.0)], vec![c(0.0, -1.0)], vec![c(-1.0, 0.0)]],
            round: 0,
        };
        let sol = BeamformingSolution {
            w_dl: vec![c(1.0, 0.0)],
            w_ul: vec![c(1.0, 0.0)],
            p: vec![2.0; 3],
        };
        let models = vec![ModelVector(vec![1.0, 1.0]); 3];
        let agg = uplink_aggregate(&models, &sol, &ch, &NoiseParams::noiseless(), &RngSpec::new(0), AggregationMode::Aligned).unwrap();
        for r in &agg.rho {
            assert_relative_eq!(r.re, 1.0 / 3.0, epsilon = 1e-15);
            assert_eq!(r.im, 0.0);
        }
    }

    #[test]
    fn uplink_noise_variance() {
        // sigma_u^2 = 1, sum alpha = 2 -> 1/8 per real entry
        let d = 10_000;
        let ch = single_channel(vec![c(2.0, 0.0)]);
        let sol = BeamformingSolution {
            w_dl: vec![c(1.0, 0.0)],
            w_ul: vec![c(1.0, 0.0)],
            p: vec![1.0],
        };
        let models = vec![ModelVector(vec![0.0; d])];
        let noise = NoiseParams::new(0.0, 1.0).unwrap();
        let agg = uplink_aggregate(&models, &sol, &ch, &noise, &RngSpec::new(3), AggregationMode::Aligned).unwrap();
        let var = agg.theta.0.iter().map(|x| x * x).sum::<f64>() / d as f64;
        assert!((var / 0.125 - 1.0).abs() < 0.05, "{var}");
        assert_eq!(agg.theta, agg.noise);
    }

    #[test]
    fn singular_aggregation_is_reported() {
        let ch = ChannelState {
            h: vec![vec![c(1.0, 0.0)], vec![c(-1.0, 0.0)]],
            round: 0,
        };
        let sol = BeamformingSolution {
            w_dl: vec![c(1.0, 0.0)],
            w_ul: vec![c(1.0, 0.0)],
            p: vec![1.0, 1.0],
        };
        let models = vec![ModelVector(vec![1.0, 1.0]); 2];
        let raw = uplink_aggregate(&models, &sol, &ch, &NoiseParams::noiseless(), &RngSpec::new(0), AggregationMode::Raw);
        assert!(matches!(raw, Err(Error::SingularAggregation(_))));
        let zero = BeamformingSolution {
            p: vec![0.0, 0.0],
            ..sol
        };
        let aligned = uplink_aggregate(&models, &zero, &ch, &NoiseParams::noiseless(), &RngSpec::new(0), AggregationMode::Aligned);
        assert!(matches!(aligned, Err(Error::SingularAggregation(_))));
    }

    #[test]
    fn raw_mode_uses_complex_weights() {
        let ch = ChannelState {
            h: vec![vec![c(1.0, 0.0)], vec![c(0.0, 1.0)]],
            round: 0,
        };
        let sol = BeamformingSolution {
            w_dl: vec![c(1.0, 0.0)],
            w_ul: vec![c(1.0, 0.0)],
            p: vec![1.0, 1.0],
        };
        let models = vec![ModelVector(vec![1.0, 0.0]), ModelVector(vec![0.0, 0.0])];
        let agg = uplink_aggregate(&models, &sol, &ch, &NoiseParams::noiseless(), &RngSpec::new(0), AggregationMode::Raw).unwrap();
        // received gain w^H h_k: alpha = [1, j]; rho_1 = 1 / (1 + j) = (1 - j) / 2
        assert_relative_eq!(agg.rho[0].re, 0.5, epsilon = 1e-15);
        assert_relative_eq!(agg.rho[0].im, -0.5, epsilon = 1e-15);
        assert_relative_eq!(agg.theta.0[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(agg.theta.0[1], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn ideal_average() {
        let one = vec![ModelVector(vec![1.5, -2.0])];
        assert_eq!(ideal_aggregate(&one).unwrap(), one[0]);
        let two = vec![ModelVector(vec![0.0, 0.0]), ModelVector(vec![2.0, 2.0])];
        assert_eq!(ideal_aggregate(&two).unwrap().0, vec![1.0, 1.0]);
        assert!(ideal_aggregate(&[]).is_err());
    }

    #[test]
    fn power_checks() {
        let budget = PowerBudget {
            p_dl: 1.0,
            p_ul: vec![1.0, 2.0],
        };
        assert!(check_downlink_power(&[c(1.0, 0.0)], 2.0, 2, &budget).is_ok());
        assert!(check_downlink_power(&[c(1.1, 0.0)], 2.0, 2, &budget).is_err());
        assert!(check_uplink_power(&[1.0, 2.0], &[2.0, 2.0], 2, &budget).is_ok());
        assert!(check_uplink_power(&[1.0, 2.1], &[2.0, 2.0], 2, &budget).is_err());
        assert_eq!(budget.ul_caps(2, &[2.0, 1.0]), vec![1.0, 4.0]);
    }
}
