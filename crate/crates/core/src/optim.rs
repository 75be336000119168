//! Beamforming design for one round: analytic gradients of the lifted
//! surrogate, closed-form projections, a backtracking projected-gradient
//! engine, the alternating joint design, and the separate and random
//! baselines.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::airlink::{BeamformingSolution, PowerBudget, CHANNEL_FLOOR};
use crate::bound::{lift_channel, lift_vector, mat_vec, quad_form, surrogate, unlift_vector, SurrogateScale};
use crate::channel::{ChannelState, NoiseParams};
use crate::error::{Error, Result};
use crate::linalg::{cn01_vec, dominant_eigvec, norm, scale, weighted_outer_sum, CVec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgdConfig {
    /// First trial step, relative: the first move has length `beta0 * ||x||`.
    pub beta0: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
    pub max_iters: usize,
    /// Stop once the relative objective change drops below this.
    pub tol: f64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 80,
            max_iters: 500,
            tol: 1e-8,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0 && self.tol > 0.0 && self.shrink > 0.0 && self.shrink < 1.0 && self.sufficient_decrease >= 0.0)
            || self.max_iters == 0
        {
            return Err(Error::InvalidConfig(format!("bad PGD settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AoConfig {
    pub max_outer: usize,
    pub tol: f64,
    /// Wall-clock cap for one call, in seconds; `None` disables it.
    pub budget_secs: Option<f64>,
    /// Also start from each device's matched filter and from the default point
    /// with each device switched off, keeping the lowest `Phi`.
    pub multi_start: bool,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self {
            max_outer: 50,
            tol: 1e-6,
            budget_secs: Some(10.0),
            multi_start: true,
        }
    }
}

/// Everything the per-round design needs to know.
#[derive(Debug, Clone)]
pub struct RoundContext {
    pub ch: ChannelState,
    pub noise: NoiseParams,
    pub budget: PowerBudget,
    /// `||theta_t||^2`.
    pub norm_theta: f64,
    /// `||theta^J_k||^2`, or a stand-in when the local models do not exist yet.
    pub norm_local: Vec<f64>,
    pub scale: SurrogateScale,
}

impl RoundContext {
    pub fn validate(&self) -> Result<()> {
        let k = self.ch.devices();
        if k == 0 || self.norm_local.len() != k || self.budget.p_ul.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: self.norm_local.len(),
            });
        }
        if !(self.norm_theta > 0.0) || self.norm_local.iter().any(|n| !(*n > 0.0)) {
            return Err(Error::InvalidConfig("model norms must be positive".into()));
        }
        Ok(())
    }

    pub fn dl_cap(&self) -> f64 {
        self.budget.dl_norm_cap(self.scale.dim, self.norm_theta)
    }

    pub fn p_caps(&self) -> Vec<f64> {
        self.budget.ul_caps(self.scale.dim, &self.norm_local)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Dl,
    Ul,
    P,
}

/// A point of the lifted problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPoint {
    pub x_dl: Vec<f64>,
    pub x_ul: Vec<f64>,
    pub p: Vec<f64>,
}

impl LiftedPoint {
    pub fn from_solution(sol: &BeamformingSolution) -> Self {
        Self {
            x_dl: lift_vector(&sol.w_dl),
            x_ul: lift_vector(&sol.w_ul),
            p: sol.p.clone(),
        }
    }

    pub fn to_solution(&self) -> BeamformingSolution {
        BeamformingSolution {
            w_dl: unlift_vector(&self.x_dl),
            w_ul: unlift_vector(&self.x_ul),
            p: self.p.clone(),
        }
    }

    fn block(&self, b: Block) -> &[f64] {
        match b {
            Block::Dl => &self.x_dl,
            Block::Ul => &self.x_ul,
            Block::P => &self.p,
        }
    }

    fn with_block(&self, b: Block, v: Vec<f64>) -> Self {
        let mut out = self.clone();
        match b {
            Block::Dl => out.x_dl = v,
            Block::Ul => out.x_ul = v,
            Block::P => out.p = v,
        }
        out
    }
}

/// Lifted problem data for one round.
struct Lifted<'a> {
    ctx: &'a RoundContext,
    hk: Vec<Vec<f64>>,
    dl_cap: f64,
    p_caps: Vec<f64>,
}

impl<'a> Lifted<'a> {
    fn new(ctx: &'a RoundContext) -> Self {
        Self {
            hk: ctx.ch.h.iter().map(|h| lift_channel(h)).collect(),
            dl_cap: ctx.dl_cap(),
            p_caps: ctx.p_caps(),
            ctx,
        }
    }

    fn gains(&self, x: &[f64]) -> Vec<f64> {
        self.hk.iter().map(|h| quad_form(h, x)).collect()
    }

    /// `Phi`, or `+inf` outside its domain.
    fn phi(&self, pt: &LiftedPoint) -> f64 {
        let g = self.gains(&pt.x_dl);
        let u = self.gains(&pt.x_ul);
        let s: Vec<f64> = u.iter().zip(&pt.p).map(|(u, p)| (p.max(0.0) * u.max(0.0)).sqrt()).collect();
        if g.iter().any(|&g| !(g.sqrt() > CHANNEL_FLOOR)) || !(s.iter().sum::<f64>() > CHANNEL_FLOOR) {
            return f64::INFINITY;
        }
        surrogate(&g, &s, &self.ctx.noise, &self.ctx.scale)
    }

    fn grad(&self, b: Block, pt: &LiftedPoint) -> Result<Vec<f64>> {
        let g = self.gains(&pt.x_dl);
        if let Some(k) = g.iter().position(|&g| !(g.sqrt() > CHANNEL_FLOOR)) {
            return Err(Error::GradientDomain(format!("downlink gain of device {k} at the floor")));
        }
        let u = self.gains(&pt.x_ul);
        let s: Vec<f64> = u.iter().zip(&pt.p).map(|(u, p)| (p.max(0.0) * u.max(0.0)).sqrt()).collect();
        let a: f64 = s.iter().sum();
        if !(a > CHANNEL_FLOOR) {
            return Err(Error::GradientDomain(format!("sum of effective channels is {a:e}")));
        }
        let (c1, c2) = self.ctx.scale.coefficients();
        let sd = self.ctx.noise.sigma2_dl;
        let su = self.ctx.noise.sigma2_ul;
        let b1: f64 = s.iter().zip(&g).map(|(s, g)| s / g).sum();
        let b2: f64 = s.iter().zip(&g).map(|(s, g)| s * s / g).sum();
        let num2 = sd * b2 + su / 2.0;
        match b {
            Block::Dl => {
                let mut out = vec![0.0; pt.x_dl.len()];
                for (k, h) in self.hk.iter().enumerate() {
                    let dg = -c1 * sd * s[k] / (a * g[k] * g[k]) - c2 * sd * s[k] * s[k] / (a * a * g[k] * g[k]);
                    if dg == 0.0 {
                        continue;
                    }
                    for (o, hx) in out.iter_mut().zip(mat_vec(h, &pt.x_dl)) {
                        *o += 2.0 * dg * hx;
                    }
                }
                Ok(out)
            }
            Block::Ul | Block::P => {
                let ds: Vec<f64> = (0..s.len())
                    .map(|k| {
                        c1 * sd * (1.0 / (g[k] * a) - b1 / (a * a))
                            + c2 * (2.0 * sd * s[k] / (g[k] * a * a) - 2.0 * num2 / (a * a * a))
                    })
                    .collect();
                if b == Block::Ul {
                    let mut out = vec![0.0; pt.x_ul.len()];
                    for (k, h) in self.hk.iter().enumerate() {
                        // |h^H w| is not differentiable at 0; use the zero subgradient there
                        if !(u[k].sqrt() > CHANNEL_FLOOR) || pt.p[k] <= 0.0 {
                            continue;
                        }
                        let coef = ds[k] * pt.p[k].sqrt() / u[k].sqrt();
                        for (o, hx) in out.iter_mut().zip(mat_vec(h, &pt.x_ul)) {
                            *o += coef * hx;
                        }
                    }
                    Ok(out)
                } else {
                    Ok((0..s.len())
                        .map(|k| {
                            // sqrt(p) has unbounded slope at 0; evaluate just inside the box
                            let pk = pt.p[k].max(1e-12 * self.p_caps[k]);
                            ds[k] * u[k].max(0.0).sqrt() / (2.0 * pk.sqrt())
                        })
                        .collect())
                }
            }
        }
    }

    fn project(&self, b: Block, x: &[f64]) -> Result<Vec<f64>> {
        match b {
            Block::Dl => Ok(project_ball(x, self.dl_cap)),
            Block::Ul => project_sphere(x),
            Block::P => Ok(project_box(x, &self.p_caps)),
        }
    }
}

/// Rescales onto `||x||^2 <= cap` when outside, identity otherwise.
pub fn project_ball(x: &[f64], cap: f64) -> Vec<f64> {
    let n2: f64 = x.iter().map(|v| v * v).sum();
    if n2 <= cap {
        x.to_vec()
    } else {
        let s = (cap / n2).sqrt();
        x.iter().map(|v| v * s).collect()
    }
}

/// `x / ||x||`.
pub fn project_sphere(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return Err(Error::ProjectionUndefined("zero vector has no direction".into()));
    }
    Ok(x.iter().map(|v| v / n).collect())
}

/// Clamps each coordinate to `[0, cap_k]`.
pub fn project_box(p: &[f64], caps: &[f64]) -> Vec<f64> {
    p.iter().zip(caps).map(|(v, c)| v.clamp(0.0, *c)).collect()
}

/// Analytic gradient of `Phi` with respect to one block.
pub fn grad_phi(block: Block, point: &LiftedPoint, ctx: &RoundContext) -> Result<Vec<f64>> {
    Lifted::new(ctx).grad(block, point)
}

/// `Phi` at a lifted point (`+inf` outside its domain).
pub fn phi_at(point: &LiftedPoint, ctx: &RoundContext) -> f64 {
    Lifted::new(ctx).phi(point)
}

/// Closed-form projection of one block onto its feasible set.
pub fn project(block: Block, x: &[f64], ctx: &RoundContext) -> Result<Vec<f64>> {
    Lifted::new(ctx).project(block, x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iters: usize,
    /// No step satisfied the decrease test before convergence.
    pub stalled: bool,
    /// `(value, accepted step)` after each accepted iteration.
    pub trace: Vec<(f64, f64)>,
}

/// Projected gradient descent with backtracking.
///
/// Each iteration tries `x+ = P(x - beta grad f(x))`, halving `beta` until
/// `f(x+) <= f(x) - c ||x+ - x||^2 / beta`. The first trial step is scaled so
/// the move has length `beta0 * ||x||`; later iterations start from the
/// Barzilai-Borwein step, or twice the last accepted step when the observed
/// curvature is not positive. `f` may return `+inf` to reject a point. The result is
/// never worse than `x0`.
pub fn pgd_minimize<F, G, P>(mut f: F, mut grad: G, mut project: P, x0: Vec<f64>, cfg: &PgdConfig) -> Result<PgdResult>
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut x = x0;
    let mut fx = f(&x);
    let mut beta: Option<f64> = None;
    let mut prev_grad: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut trace = Vec::new();
    let mut stalled = false;
    let mut iters = 0;
    while iters < cfg.max_iters {
        iters += 1;
        let g = grad(&x)?;
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(gn > 0.0) || !gn.is_finite() {
            break;
        }
        // Barzilai-Borwein trial when curvature is positive, else twice the last step
        let bb = prev_grad.as_ref().and_then(|(px, pg)| {
            let ss: f64 = x.iter().zip(px).map(|(a, b)| (a - b).powi(2)).sum();
            let sy: f64 = x.iter().zip(px).zip(g.iter().zip(pg)).map(|((a, b), (c, d))| (a - b) * (c - d)).sum();
            (sy > 0.0 && (ss / sy).is_finite()).then(|| ss / sy)
        });
        let mut step = match (bb, beta) {
            (Some(s), _) => s,
            (None, Some(b)) => 2.0 * b,
            (None, None) => {
                let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                cfg.beta0 * if xn > 0.0 { xn } else { 1.0 } / gn
            }
        };
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let cand = project(&trial)?;
            let moved: f64 = cand.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
            if moved == 0.0 {
                // projection returns the same point: stationary
                accepted = Some((cand, fx));
                break;
            }
            let fc = f(&cand);
            if fc.is_finite() && fc <= fx - cfg.sufficient_decrease * moved / step && fc < fx {
                accepted = Some((cand, fc));
                break;
            }
            step *= cfg.shrink;
        }
        match accepted {
            None => {
                stalled = true;
                break;
            }
            Some((cand, fc)) => {
                let stationary = cand == x;
                let change = (fx - fc).abs();
                let prev = fx;
                prev_grad = Some((std::mem::replace(&mut x, cand), g));
                fx = fc;
                beta = Some(step);
                trace.push((fx, step));
                if stationary || change <= cfg.tol * prev.abs() {
                    break;
                }
            }
        }
    }
    Ok(PgdResult {
        x,
        value: fx,
        iters,
        stalled,
        trace,
    })
}

/// One recorded step of the joint design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub outer: usize,
    pub block: Block,
    pub phi: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JduOutcome {
    pub solution: BeamformingSolution,
    pub phi: f64,
    pub outer_iters: usize,
    /// Some inner solve stalled or the time budget ran out.
    pub stalled: bool,
    /// Steps of the run that produced `solution`.
    pub trace: Vec<TraceEntry>,
}

/// Default starting point: receive beam on the dominant eigenvector of
/// `sum_k h_k h_k^H`, the same direction at full downlink power, full device power.
pub fn default_init(ctx: &RoundContext) -> BeamformingSolution {
    let n = ctx.ch.antennas();
    let a = weighted_outer_sum(&ctx.ch.h, &vec![1.0; ctx.ch.devices()]);
    let (v, _) = dominant_eigvec(&a, n, 1e-10, 10_000);
    BeamformingSolution {
        w_dl: scale(&v, ctx.dl_cap().sqrt()),
        w_ul: v,
        p: ctx.p_caps(),
    }
}

/// Alternating minimization of `Phi` over the downlink beam, the receive beam
/// and the device powers, each block solved by projected gradient descent.
pub fn jdu_bf_round(
    ctx: &RoundContext,
    init: Option<&BeamformingSolution>,
    ao: &AoConfig,
    pgd: &PgdConfig,
) -> Result<JduOutcome> {
    const ALL: [Block; 3] = [Block::Dl, Block::Ul, Block::P];
    let mut best = run_ao(ctx, init, ao, pgd, &ALL)?;
    if !ao.multi_start || init.is_some() {
        return Ok(best);
    }
    let base = default_init(ctx);
    let mut starts = Vec::new();
    for (k, h) in ctx.ch.h.iter().enumerate() {
        let len = norm(h);
        if len > 0.0 {
            let v = scale(h, 1.0 / len);
            starts.push(BeamformingSolution {
                w_dl: scale(&v, ctx.dl_cap().sqrt()),
                w_ul: v,
                p: ctx.p_caps(),
            });
        }
        if ctx.ch.devices() > 1 {
            let mut off = base.clone();
            off.p[k] = 0.0;
            starts.push(off);
        }
    }
    let prob = Lifted::new(ctx);
    for start in &starts {
        if !prob.phi(&LiftedPoint::from_solution(start)).is_finite() {
            continue;
        }
        let out = run_ao(ctx, Some(start), ao, pgd, &ALL)?;
        if out.phi < best.phi {
            best = out;
        }
    }
    Ok(best)
}

/// Re-solves only the uplink blocks (receive beam, powers) with the downlink
/// beam held fixed; `sol.p` is first clipped to the context's power caps.
pub fn jdu_uplink_refine(ctx: &RoundContext, sol: &BeamformingSolution, ao: &AoConfig, pgd: &PgdConfig) -> Result<JduOutcome> {
    let clipped = BeamformingSolution {
        p: project_box(&sol.p, &ctx.p_caps()),
        ..sol.clone()
    };
    run_ao(ctx, Some(&clipped), ao, pgd, &[Block::Ul, Block::P])
}

/// Relative amplitude below which a device counts as silent.
const SILENT_DEVICE: f64 = 1e-6;

fn run_ao(
    ctx: &RoundContext,
    init: Option<&BeamformingSolution>,
    ao: &AoConfig,
    pgd: &PgdConfig,
    blocks: &[Block],
) -> Result<JduOutcome> {
    ctx.validate()?;
    let started = Instant::now();
    let prob = Lifted::new(ctx);
    let start = init.cloned().unwrap_or_else(|| default_init(ctx));
    let mut pt = LiftedPoint::from_solution(&start);
    let mut phi = prob.phi(&pt);
    if !phi.is_finite() {
        return Err(Error::Evaluation("starting point outside the surrogate's domain".into()));
    }
    let mut trace = vec![];
    let mut stalled = false;
    let mut outer = 0;
    if phi == 0.0 {
        return Ok(JduOutcome {
            solution: pt.to_solution(),
            phi,
            outer_iters: 0,
            stalled,
            trace,
        });
    }
    while outer < ao.max_outer {
        outer += 1;
        let before = phi;
        for &b in blocks {
            let res = pgd_minimize(
                |x| prob.phi(&pt.with_block(b, x.to_vec())),
                |x| prob.grad(b, &pt.with_block(b, x.to_vec())),
                |x| prob.project(b, x),
                pt.block(b).to_vec(),
                pgd,
            )?;
            stalled |= res.stalled;
            let mut last = phi;
            for &(value, step) in &res.trace {
                if value > last * (1.0 + 1e-12) {
                    return Err(Error::NonMonotone { before: last, after: value });
                }
                last = value;
                trace.push(TraceEntry {
                    outer,
                    block: b,
                    phi: value,
                    step,
                });
            }
            if res.value > phi * (1.0 + 1e-12) {
                return Err(Error::NonMonotone { before: phi, after: res.value });
            }
            pt = pt.with_block(b, res.x);
            phi = res.value;
        }
        // A device nulled by the receive beam but still at positive power pins
        // the beam in place; switching it off frees the beam for the others.
        let mut dropped = false;
        if blocks.contains(&Block::P) {
            let u = prob.gains(&pt.x_ul);
            let amps: Vec<f64> = u.iter().zip(&pt.p).map(|(u, p)| (p.max(0.0) * u.max(0.0)).sqrt()).collect();
            let total: f64 = amps.iter().sum();
            let mut p = pt.p.clone();
            for (pk, s) in p.iter_mut().zip(&amps) {
                if *pk > 0.0 && *s <= SILENT_DEVICE * total {
                    *pk = 0.0;
                    dropped = true;
                }
            }
            if dropped {
                let cand = pt.with_block(Block::P, p);
                let value = prob.phi(&cand);
                if value <= phi {
                    pt = cand;
                    phi = value;
                    trace.push(TraceEntry {
                        outer,
                        block: Block::P,
                        phi,
                        step: 0.0,
                    });
                } else {
                    dropped = false;
                }
            }
        }
        if !dropped && (before - phi).abs() <= ao.tol * before.abs() {
            break;
        }
        if let Some(limit) = ao.budget_secs {
            if started.elapsed().as_secs_f64() > limit {
                stalled = true;
                break;
            }
        }
    }
    Ok(JduOutcome {
        solution: pt.to_solution(),
        phi,
        outer_iters: outer,
        stalled,
        trace,
    })
}

/// Writes a solver trace as CSV (`iter,outer,block,phi,step`).
pub fn write_trace_csv(trace: &[TraceEntry], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "iter,outer,block,phi,step").map_err(|e| Error::io(path, e))?;
    for (i, t) in trace.iter().enumerate() {
        let block = match t.block {
            Block::Dl => "dl",
            Block::Ul => "ul",
            Block::P => "p",
        };
        writeln!(f, "{i},{},{block},{:e},{:e}", t.outer, t.phi, t.step).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Max-min fair multicast beam: projected gradient ascent on a softmin of the
/// normalized gains with the temperature halved per stage. Returns a beam at
/// full power.
pub fn sdu_downlink(ctx: &RoundContext, pgd: &PgdConfig) -> Result<CVec> {
    ctx.validate()?;
    let cap = ctx.dl_cap();
    let hk: Vec<Vec<f64>> = ctx.ch.h.iter().map(|h| lift_channel(h)).collect();
    let norm_scale = cap * ctx.ch.h.iter().map(|h| crate::linalg::norm_sqr(h)).fold(0.0, f64::max);
    if !(norm_scale > 0.0) {
        return Err(Error::Evaluation("all channels are zero".into()));
    }
    let gains = |x: &[f64]| -> Vec<f64> { hk.iter().map(|h| quad_form(h, x) / norm_scale).collect() };
    let hard_min = |x: &[f64]| gains(x).into_iter().fold(f64::INFINITY, f64::min);
    let to_boundary = |x: Vec<f64>| -> Vec<f64> {
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.into_iter().map(|v| v * cap.sqrt() / n).collect()
    };

    // candidate starts: each matched filter, their sum and the normalized dominant direction
    let n = ctx.ch.antennas();
    let mut starts: Vec<CVec> = ctx.ch.h.iter().map(|h| scale(h, 1.0 / norm(h).max(f64::MIN_POSITIVE))).collect();
    let combined = starts.iter().fold(vec![num_complex::Complex64::new(0.0, 0.0); n], |acc, v| {
        acc.iter().zip(v).map(|(a, b)| a + b).collect()
    });
    if norm(&combined) > 0.0 {
        starts.push(combined);
    }
    let inv: Vec<f64> = ctx.ch.h.iter().map(|h| 1.0 / crate::linalg::norm_sqr(h).max(f64::MIN_POSITIVE)).collect();
    starts.push(dominant_eigvec(&weighted_outer_sum(&ctx.ch.h, &inv), n, 1e-10, 10_000).0);
    let mut x = starts
        .into_iter()
        .map(|w| to_boundary(lift_vector(&w)))
        .max_by(|a, b| hard_min(a).total_cmp(&hard_min(b)))
        .expect("at least one device");
    let mut best = x.clone();
    let mut best_min = hard_min(&x);
    let mut tau = 1.0;
    let mut last_min = best_min;
    for _ in 0..60 {
        let softmax_neg = |x: &[f64]| -> f64 {
            let v = gains(x);
            let m = v.iter().cloned().fold(f64::INFINITY, f64::min);
            m - tau * v.iter().map(|vk| (-(vk - m) / tau).exp()).sum::<f64>().ln()
        };
        let res = pgd_minimize(
            |x| -softmax_neg(x),
            |x| {
                let v = gains(x);
                let m = v.iter().cloned().fold(f64::INFINITY, f64::min);
                let w: Vec<f64> = v.iter().map(|vk| (-(vk - m) / tau).exp()).collect();
                let total: f64 = w.iter().sum();
                let mut out = vec![0.0; x.len()];
                for (h, wk) in hk.iter().zip(&w) {
                    for (o, hx) in out.iter_mut().zip(mat_vec(h, x)) {
                        *o -= 2.0 * wk / total * hx / norm_scale;
                    }
                }
                Ok(out)
            },
            |x| Ok(project_ball(x, cap)),
            x.clone(),
            pgd,
        )?;
        x = to_boundary(res.x);
        let cur = hard_min(&x);
        if cur > best_min {
            best_min = cur;
            best = x.clone();
        }
        let change = (cur - last_min).abs() / cur.abs().max(f64::MIN_POSITIVE);
        last_min = cur;
        tau *= 0.5;
        if (change < 1e-6 && tau < 1e-3) || tau < 1e-9 {
            break;
        }
    }
    Ok(unlift_vector(&best))
}

/// Full device power and the receive beam maximizing `sum_k p_k |h_k^H w|^2`.
pub fn sdu_uplink(ctx: &RoundContext) -> Result<(CVec, Vec<f64>)> {
    ctx.validate()?;
    let p = ctx.p_caps();
    let a = weighted_outer_sum(&ctx.ch.h, &p);
    let (w, _) = dominant_eigvec(&a, ctx.ch.antennas(), 1e-10, 100_000);
    Ok((w, p))
}

/// Isotropic random beams (downlink at full power), full device power.
/// Intended for raw (non-aligned) aggregation.
pub fn random_beamforming<R: Rng + ?Sized>(ctx: &RoundContext, rng: &mut R) -> Result<BeamformingSolution> {
    ctx.validate()?;
    let n = ctx.ch.antennas();
    let mut draw = || loop {
        let v = cn01_vec(rng, n);
        let nv = norm(&v);
        if nv > 0.0 {
            return scale(&v, 1.0 / nv);
        }
    };
    let dl = draw();
    let ul = draw();
    Ok(BeamformingSolution {
        w_dl: scale(&dl, ctx.dl_cap().sqrt()),
        w_ul: ul,
        p: ctx.p_caps(),
    })
}
