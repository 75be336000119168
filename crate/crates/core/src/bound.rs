//! Convergence-bound quantities: the per-round contraction and drift terms,
//! the noise-to-signal surrogate `H` and its real-lifted form, the horizon
//! objective, the full bound, and a Monte Carlo check of the per-round
//! recursion behind it.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::airlink::{downlink_broadcast, uplink_aggregate, AggregationMode, BeamformingSolution, CHANNEL_FLOOR};
use crate::channel::{ChannelState, NoiseParams};
use crate::error::{Error, Result};
use crate::fl::{global_loss, local_update, Dataset, DeviceData, LossSpec, ModelVector, Partition};
use crate::linalg::{inner, CVec};
use crate::rng::{RngSpec, Stream};

/// Constants of the bound. `eta` holds one learning rate per round, so `T = eta.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub l: f64,
    pub lambda: f64,
    pub mu: f64,
    pub delta: f64,
    pub eta: Vec<f64>,
    pub local_steps: usize,
    pub phi: Vec<f64>,
    /// `E[F(theta_0)] - F*`.
    pub gamma: f64,
    pub f_star: f64,
}

impl BoundParams {
    pub fn rounds(&self) -> usize {
        self.eta.len()
    }

    /// Checks `1/(10L) <= eta_t J < 1/(2L)` for every round and that `phi` is a
    /// probability vector.
    pub fn validate(&self) -> Result<()> {
        let j = self.local_steps as f64;
        for (t, &eta) in self.eta.iter().enumerate() {
            let x = eta * j * self.l;
            // 1/(10JL) computed in floating point may land an ulp below 0.1
            if !(x >= 0.1 * (1.0 - 1e-12) && x < 0.5) {
                return Err(Error::Admissibility(format!(
                    "round {t}: eta*J*L = {x} is outside [0.1, 0.5)"
                )));
            }
        }
        let sum: f64 = self.phi.iter().sum();
        if self.phi.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("phi must be a probability vector".into()));
        }
        Ok(())
    }
}

/// `Q = 1 - 4 eta^2 J^2 L^2`; errors unless positive.
pub fn q_t(eta: f64, local_steps: usize, l: f64) -> Result<f64> {
    let x = eta * local_steps as f64 * l;
    let q = 1.0 - 4.0 * x * x;
    if !(q > 0.0) || !(eta > 0.0 && l > 0.0 && local_steps > 0) {
        return Err(Error::Admissibility(format!("Q = {q} for eta*J*L = {x}")));
    }
    Ok(q)
}

/// Per-round contraction factor `G_t`.
pub fn g_t(q: f64, eta: f64, local_steps: usize, lambda: f64) -> f64 {
    let a = 1.0 - q;
    a / (4.0 * eta * local_steps as f64 * lambda * q) * (5.0 * a + 4.0 * a.sqrt() - 1.0) + 1.0
}

/// Per-round drift `C_t` from mini-batch variance and gradient divergence.
pub fn c_t(q: f64, eta: f64, local_steps: usize, l: f64, mu: f64, delta: f64) -> f64 {
    let a = 1.0 - q;
    let ej = eta * local_steps as f64;
    ej / 2.0 * ((delta + mu) / q + (delta - mu) / 2.0)
        + a / (2.0 * l * l * q) * ((a + q / local_steps as f64) * mu + 4.0 * delta)
}

/// Scale constants shared by `H` and `Phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateScale {
    pub l: f64,
    pub q: f64,
    pub dim: usize,
}

impl SurrogateScale {
    /// Coefficients `(c1, c2)` of the two noise-to-signal terms.
    pub fn coefficients(&self) -> (f64, f64) {
        let half = self.l * self.dim as f64 / 2.0;
        let a = 1.0 - self.q;
        (half * (a + a.sqrt()) / self.q, half)
    }
}

/// Combines downlink gains `g_k = |h_k^H w_dl|^2` and uplink amplitudes
/// `s_k = sqrt(p_k) |h_k^H w_ul|` into the surrogate value.
pub(crate) fn surrogate(gains: &[f64], amps: &[f64], noise: &NoiseParams, scale: &SurrogateScale) -> f64 {
    let (c1, c2) = scale.coefficients();
    let a: f64 = amps.iter().sum();
    let b1: f64 = amps.iter().zip(gains).map(|(s, g)| s / g).sum();
    let b2: f64 = amps.iter().zip(gains).map(|(s, g)| s * s / g).sum();
    c1 * noise.sigma2_dl * b1 / a + c2 * (noise.sigma2_dl * b2 + noise.sigma2_ul / 2.0) / (a * a)
}

fn check_domain(gains: &[f64], amps: &[f64]) -> Result<()> {
    if let Some(k) = gains.iter().position(|&g| !(g.sqrt() > CHANNEL_FLOOR)) {
        return Err(Error::Evaluation(format!("downlink gain of device {k} below the floor")));
    }
    let a: f64 = amps.iter().sum();
    if !(a > CHANNEL_FLOOR) {
        return Err(Error::Evaluation(format!("sum of effective uplink channels is {a:e}")));
    }
    Ok(())
}

/// The per-round surrogate `H(w_dl, w_ul, p)` evaluated from complex beamformers.
pub fn h_of(sol: &BeamformingSolution, ch: &ChannelState, noise: &NoiseParams, scale: &SurrogateScale) -> Result<f64> {
    let gains: Vec<f64> = ch.h.iter().map(|hk| inner(hk, &sol.w_dl).norm_sqr()).collect();
    let amps: Vec<f64> = ch
        .h
        .iter()
        .zip(&sol.p)
        .map(|(hk, &pk)| pk.max(0.0).sqrt() * inner(hk, &sol.w_ul).norm())
        .collect();
    check_domain(&gains, &amps)?;
    Ok(surrogate(&gains, &amps, noise, scale))
}

/// Real-valued forms of the beamformers and channel covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct RealLift {
    pub x_dl: Vec<f64>,
    pub x_ul: Vec<f64>,
    /// `2N x 2N` row-major blocks `[[Re A, -Im A], [Im A, Re A]]` with `A = h h^H`.
    pub hk: Vec<Vec<f64>>,
}

/// `[Re w; Im w]`.
pub fn lift_vector(w: &[Complex64]) -> Vec<f64> {
    w.iter().map(|z| z.re).chain(w.iter().map(|z| z.im)).collect()
}

/// Inverse of [`lift_vector`].
pub fn unlift_vector(x: &[f64]) -> CVec {
    let n = x.len() / 2;
    (0..n).map(|i| Complex64::new(x[i], x[n + i])).collect()
}

/// Real `2N x 2N` matrix with `x^T H x = |h^H w|^2`.
pub fn lift_channel(h: &[Complex64]) -> Vec<f64> {
    let n = h.len();
    let m = 2 * n;
    let mut out = vec![0.0; m * m];
    for i in 0..n {
        for j in 0..n {
            let a = h[i] * h[j].conj();
            out[i * m + j] = a.re;
            out[i * m + n + j] = -a.im;
            out[(n + i) * m + j] = a.im;
            out[(n + i) * m + n + j] = a.re;
        }
    }
    out
}

pub fn lift(w_dl: &[Complex64], w_ul: &[Complex64], ch: &ChannelState) -> RealLift {
    RealLift {
        x_dl: lift_vector(w_dl),
        x_ul: lift_vector(w_ul),
        hk: ch.h.iter().map(|h| lift_channel(h)).collect(),
    }
}

/// `x^T H x` for a row-major square `H`.
pub fn quad_form(h: &[f64], x: &[f64]) -> f64 {
    let m = x.len();
    (0..m)
        .map(|i| x[i] * h[i * m..(i + 1) * m].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// `H y` for a row-major square `H`.
pub fn mat_vec(h: &[f64], x: &[f64]) -> Vec<f64> {
    let m = x.len();
    (0..m)
        .map(|i| h[i * m..(i + 1) * m].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `Phi(x_dl, x_ul, p)`: the surrogate with every `|h_k^H w|` replaced by `(x^T H_k x)^(1/2)`.
pub fn phi_of(lifted: &RealLift, p: &[f64], noise: &NoiseParams, scale: &SurrogateScale) -> Result<f64> {
    let gains: Vec<f64> = lifted.hk.iter().map(|h| quad_form(h, &lifted.x_dl)).collect();
    let amps: Vec<f64> = lifted
        .hk
        .iter()
        .zip(p)
        .map(|(h, &pk)| (pk.max(0.0) * quad_form(h, &lifted.x_ul).max(0.0)).sqrt())
        .collect();
    check_domain(&gains, &amps)?;
    Ok(surrogate(&gains, &amps, noise, scale))
}

/// Horizon objective `sum_{t<T-1} H_t prod_{s>t} G_s + H_{T-1}`.
pub fn psi_of(h: &[f64], g: &[f64]) -> f64 {
    discounted_sum(h, g)
}

fn discounted_sum(terms: &[f64], g: &[f64]) -> f64 {
    debug_assert_eq!(terms.len(), g.len());
    terms
        .iter()
        .enumerate()
        .map(|(t, x)| x * g[t + 1..].iter().product::<f64>())
        .sum()
}

/// Every term of the bound on `E[F(theta_T)] - F*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub q: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    /// `Gamma prod_t G_t`.
    pub initial_term: f64,
    /// Weighted sum of the `C_t`.
    pub drift_term: f64,
    pub psi: f64,
    pub total: f64,
}

/// `Gamma prod G_t + Lambda + Psi`.
pub fn proposition_bound(params: &BoundParams, h: &[f64]) -> Result<BoundBreakdown> {
    params.validate()?;
    if h.len() != params.rounds() {
        return Err(Error::DimensionMismatch {
            expected: params.rounds(),
            got: h.len(),
        });
    }
    let j = params.local_steps;
    let q: Vec<f64> = params.eta.iter().map(|&e| q_t(e, j, params.l)).collect::<Result<_>>()?;
    let g: Vec<f64> = q.iter().zip(&params.eta).map(|(&q, &e)| g_t(q, e, j, params.lambda)).collect();
    let c: Vec<f64> = q
        .iter()
        .zip(&params.eta)
        .map(|(&q, &e)| c_t(q, e, j, params.l, params.mu, params.delta))
        .collect();
    let initial_term = params.gamma * g.iter().product::<f64>();
    let drift_term = discounted_sum(&c, &g);
    let psi = psi_of(h, &g);
    Ok(BoundBreakdown {
        total: initial_term + drift_term + psi,
        q,
        g,
        c,
        h: h.to_vec(),
        initial_term,
        drift_term,
        psi,
    })
}

/// A strongly convex learning problem with a known optimum.
#[derive(Debug, Clone)]
pub struct ToyProblem<'a> {
    pub data: &'a Dataset,
    pub partition: &'a Partition,
    pub spec: &'a LossSpec,
    pub f_star: f64,
    pub theta0: ModelVector,
    pub batch_size: usize,
}

/// Channel and beamformers applied in one round.
#[derive(Debug, Clone)]
pub struct RoundDesign {
    pub ch: ChannelState,
    pub sol: BeamformingSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionRound {
    pub round: usize,
    /// Estimated `E[F(theta_{t+1})] - F*`.
    pub lhs: f64,
    /// `G_t (E[F(theta_t)] - F*) + H_t + C_t` with the estimated gap.
    pub rhs: f64,
    pub margin: f64,
    pub std_error: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionReport {
    pub rounds: Vec<RecursionRound>,
    /// Measured `E[F(theta_0)] - F*`.
    pub initial_gap: f64,
    /// Measured `E[F(theta_T)] - F*`.
    pub final_gap: f64,
    pub final_gap_std_error: f64,
    /// Full bound evaluated with `Gamma` set to the measured initial gap.
    pub bound_total: f64,
    pub violations: usize,
}

/// Monte Carlo check of the per-round recursion
/// `E[F(theta_{t+1})] - F* <= G_t (E[F(theta_t)] - F*) + H_t + C_t`.
///
/// Each of `n_mc` replicates runs the full round-trip pipeline over the given
/// designs with its own noise and mini-batch streams. A round is flagged when
/// the margin falls below minus three standard errors.
pub fn check_recursion(
    toy: &ToyProblem<'_>,
    designs: &[RoundDesign],
    params: &BoundParams,
    noise: &NoiseParams,
    n_mc: usize,
    rng: &RngSpec,
) -> Result<RecursionReport> {
    params.validate()?;
    if designs.len() != params.rounds() {
        return Err(Error::DimensionMismatch {
            expected: params.rounds(),
            got: designs.len(),
        });
    }
    if n_mc < 2 {
        return Err(Error::InvalidConfig("need at least two Monte Carlo replicates".into()));
    }
    let t_len = designs.len();
    let dim = toy.spec.dim();
    // losses[m][t] = F(theta_t) for replicate m
    let losses: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..n_mc)
            .into_par_iter()
            .map(|m| {
                let rep = rng.replicate(m);
                let mut theta = toy.theta0.clone();
                let mut out = Vec::with_capacity(t_len + 1);
                out.push(global_loss(&theta, toy.data, toy.partition, toy.spec)?);
                for (t, design) in designs.iter().enumerate() {
                    let est = downlink_broadcast(&theta, &design.sol.w_dl, &design.ch, noise, &rep)?;
                    let locals: Vec<ModelVector> = est
                        .iter()
                        .zip(&toy.partition.shards)
                        .enumerate()
                        .map(|(k, (start, shard))| {
                            let dev = DeviceData {
                                data: toy.data,
                                shard,
                                spec: toy.spec,
                            };
                            let mut r = rep.stream(Stream::Minibatch, design.ch.round as u64, k as u64);
                            local_update(start, &dev, params.eta[t], params.local_steps, toy.batch_size, &mut r)
                                .map(|u| u.theta_j)
                        })
                        .collect::<Result<_>>()?;
                    let agg = uplink_aggregate(&locals, &design.sol, &design.ch, noise, &rep, AggregationMode::Aligned)?;
                    theta = agg.theta;
                    toy.spec.clear_padding(&mut theta);
                    out.push(global_loss(&theta, toy.data, toy.partition, toy.spec)?);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?
    };
    let n = n_mc as f64;
    let mean_gap = |t: usize| losses.iter().map(|l| l[t]).sum::<f64>() / n - toy.f_star;
    let j = params.local_steps;
    let mut rounds = Vec::with_capacity(t_len);
    let mut h_values = Vec::with_capacity(t_len);
    for (t, design) in designs.iter().enumerate() {
        let q = q_t(params.eta[t], j, params.l)?;
        let g = g_t(q, params.eta[t], j, params.lambda);
        let c = c_t(q, params.eta[t], j, params.l, params.mu, params.delta);
        let h = h_of(&design.sol, &design.ch, noise, &SurrogateScale { l: params.l, q, dim })?;
        h_values.push(h);
        let lhs = mean_gap(t + 1);
        let rhs = g * mean_gap(t) + h + c;
        let diffs: Vec<f64> = losses.iter().map(|l| l[t + 1] - g * l[t]).collect();
        let dm = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - dm).powi(2)).sum::<f64>() / (n - 1.0);
        let std_error = (var / n).sqrt();
        let margin = rhs - lhs;
        rounds.push(RecursionRound {
            round: t,
            lhs,
            rhs,
            margin,
            std_error,
            violated: margin < -3.0 * std_error,
        });
    }
    let initial_gap = mean_gap(0);
    let final_gap = mean_gap(t_len);
    let finals: Vec<f64> = losses.iter().map(|l| l[t_len]).collect();
    let fm = finals.iter().sum::<f64>() / n;
    let final_gap_std_error = (finals.iter().map(|f| (f - fm).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let measured = BoundParams {
        gamma: initial_gap,
        ..params.clone()
    };
    let bound_total = proposition_bound(&measured, &h_values)?.total;
    Ok(RecursionReport {
        violations: rounds.iter().filter(|r| r.violated).count(),
        rounds,
        initial_gap,
        final_gap,
        final_gap_std_error,
        bound_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn q_values() {
        let (j, l) = (30, 10.0);
        assert_relative_eq!(q_t(1.0 / (10.0 * j as f64 * l), j, l).unwrap(), 0.96, epsilon = 1e-12);
        assert_relative_eq!(q_t(0.25 / (j as f64 * l), j, l).unwrap(), 0.75, epsilon = 1e-12);
        assert!(q_t(0.5 / (j as f64 * l), j, l).is_err());
        assert!(q_t(0.6 / (j as f64 * l), j, l).is_err());
    }

    #[test]
    fn g_and_c_values() {
        // eta J = 0.01 with L = 10, J = 30 gives Q = 0.96
        let eta = 0.01 / 30.0;
        assert_relative_eq!(g_t(0.96, eta, 30, 0.01), 1.0, epsilon = 1e-12);
        // 0.005 * (2 / 0.96) + 0.04 / 192 * (0.072 + 4)
        let expected = 0.005 * 2.0 / 0.96 + 0.04 / 192.0 * 4.072;
        assert_relative_eq!(c_t(0.96, eta, 30, 10.0, 1.0, 1.0), expected, max_relative = 1e-12);
        assert_relative_eq!(c_t(0.96, eta, 30, 10.0, 1.0, 1.0), 0.011265, epsilon = 5e-7);
        assert_eq!(c_t(0.96, eta, 30, 10.0, 0.0, 0.0), 0.0);
    }

    fn unit_instance() -> (BeamformingSolution, ChannelState, NoiseParams, SurrogateScale) {
        (
            BeamformingSolution {
                w_dl: vec![c(1.0, 0.0)],
                w_ul: vec![c(1.0, 0.0)],
                p: vec![1.0],
            },
            ChannelState {
                h: vec![vec![c(1.0, 0.0)]],
                round: 0,
            },
            NoiseParams::new(1.0, 1.0).unwrap(),
            SurrogateScale { l: 10.0, q: 0.96, dim: 2 },
        )
    }

    #[test]
    fn unit_surrogate() {
        let (sol, ch, noise, scale) = unit_instance();
        assert_relative_eq!(h_of(&sol, &ch, &noise, &scale).unwrap(), 17.5, epsilon = 1e-10);
        let lifted = lift(&sol.w_dl, &sol.w_ul, &ch);
        assert_relative_eq!(phi_of(&lifted, &sol.p, &noise, &scale).unwrap(), 17.5, epsilon = 1e-10);
        assert_eq!(h_of(&sol, &ch, &NoiseParams::noiseless(), &scale).unwrap(), 0.0);
    }

    #[test]
    fn uplink_noise_enters_second_term_only() {
        let (sol, ch, noise, scale) = unit_instance();
        let base = h_of(&sol, &ch, &noise, &scale).unwrap();
        let doubled = h_of(&sol, &ch, &NoiseParams::new(1.0, 2.0).unwrap(), &scale).unwrap();
        // L D sigma_u^2 delta / (2 (sum alpha)^2) with the 1/2 inside: 10 * 2 * 1 / 2 / 2 = 5
        assert_relative_eq!(doubled - base, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_inputs_error() {
        let (mut sol, ch, noise, scale) = unit_instance();
        sol.p = vec![0.0];
        assert!(h_of(&sol, &ch, &noise, &scale).is_err());
        let (mut sol, ch, noise, scale) = unit_instance();
        sol.w_dl = vec![c(0.0, 0.0)];
        assert!(h_of(&sol, &ch, &noise, &scale).is_err());
    }

    #[test]
    fn lift_of_real_vector() {
        let w = vec![c(1.0, 0.0), c(-2.0, 0.0)];
        assert_eq!(lift_vector(&w), vec![1.0, -2.0, 0.0, 0.0]);
        let w = vec![c(0.3, -1.0), c(2.0, 0.5)];
        let x = lift_vector(&w);
        assert_relative_eq!(
            x.iter().map(|v| v * v).sum::<f64>(),
            crate::linalg::norm_sqr(&w),
            max_relative = 1e-15
        );
        assert_eq!(unlift_vector(&x), w);
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi_of(&[3.0, 5.0], &[7.0, 2.0]), 11.0);
        assert_eq!(psi_of(&[4.0], &[9.0]), 4.0);
        assert_eq!(psi_of(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), 6.0);
    }

    fn params(t: usize) -> BoundParams {
        let (l, j) = (10.0, 30);
        BoundParams {
            l,
            lambda: 0.01,
            mu: 1.0,
            delta: 1.0,
            eta: vec![1.0 / (10.0 * j as f64 * l); t],
            local_steps: j,
            phi: vec![0.5, 0.5],
            gamma: 2.0,
            f_star: 0.0,
        }
    }

    #[test]
    fn bound_single_round() {
        let p = params(1);
        let b = proposition_bound(&p, &[0.7]).unwrap();
        assert_relative_eq!(b.total, p.gamma * b.g[0] + b.c[0] + 0.7, max_relative = 1e-14);
    }

    #[test]
    fn bound_default_rate_sums_terms() {
        let p = params(4);
        let h = [0.1, 0.2, 0.3, 0.4];
        let b = proposition_bound(&p, &h).unwrap();
        let c_sum: f64 = b.c.iter().sum();
        assert_relative_eq!(b.total, p.gamma + c_sum + 1.0, max_relative = 1e-12);
    }

    #[test]
    fn bound_without_noise_or_drift() {
        let mut p = params(3);
        p.mu = 0.0;
        p.delta = 0.0;
        p.eta = vec![0.2 / (30.0 * 10.0); 3];
        let b = proposition_bound(&p, &[0.0; 3]).unwrap();
        assert_relative_eq!(b.total, p.gamma * b.g.iter().product::<f64>(), max_relative = 1e-14);
        assert!(b.g.iter().all(|&g| g > 1.0));
    }

    #[test]
    fn inadmissible_rates_rejected() {
        let mut p = params(2);
        p.eta[1] = 0.05 / 300.0;
        assert!(matches!(proposition_bound(&p, &[0.0, 0.0]), Err(Error::Admissibility(_))));
        let mut p = params(2);
        p.phi = vec![0.7, 0.7];
        assert!(proposition_bound(&p, &[0.0, 0.0]).is_err());
    }
}
