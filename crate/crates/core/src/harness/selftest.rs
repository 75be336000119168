//! Built-in checks run by the `selftest` command: analytic gradients against
//! central differences, projection idempotence, packing round trips and a
//! closed-form single-device optimum.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::airlink::{pack_complex, unpack_real, PowerBudget};
use crate::bound::{lift_vector, SurrogateScale};
use crate::channel::{ChannelState, NoiseParams};
use crate::fl::data::{mixture_means, sample_mixture, MixtureSpec};
use crate::fl::{local_grad, local_loss, LossSpec, ModelVector, Task};
use crate::linalg::{cn01, cn01_vec, norm_sqr, CVec};
use crate::optim::{
    grad_phi, jdu_bf_round, phi_at, project, project_ball, project_sphere, AoConfig, Block, LiftedPoint, PgdConfig,
    RoundContext,
};
use crate::rng::{RngSpec, Stream};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// A random design instance with moderate gains, noise and budgets.
pub fn random_context(antennas: usize, devices: usize, seed: u64) -> RoundContext {
    let mut r = RngSpec::new(seed).stream(Stream::Estimate, 7, 0);
    let h: Vec<CVec> = (0..devices)
        .map(|_| {
            let g: f64 = r.gen_range(0.2..2.0);
            (0..antennas).map(|_| cn01(&mut r) * g).collect()
        })
        .collect();
    let l = r.gen_range(1.0..10.0);
    RoundContext {
        ch: ChannelState { h, round: 0 },
        noise: NoiseParams::new(r.gen_range(0.1..1.0), r.gen_range(0.1..1.0)).expect("positive"),
        budget: PowerBudget {
            p_dl: r.gen_range(0.5..2.0),
            p_ul: (0..devices).map(|_| r.gen_range(0.5..2.0)).collect(),
        },
        norm_theta: r.gen_range(0.5..2.0),
        norm_local: (0..devices).map(|_| r.gen_range(0.5..2.0)).collect(),
        scale: SurrogateScale {
            l,
            q: r.gen_range(0.75..0.96),
            dim: 2 * r.gen_range(1..50),
        },
    }
}

/// A random feasible point strictly inside the power box.
pub fn random_feasible_point(ctx: &RoundContext, seed: u64) -> LiftedPoint {
    let mut r = RngSpec::new(seed).stream(Stream::Estimate, 8, 0);
    let n = ctx.ch.antennas();
    let dl = lift_vector(&cn01_vec(&mut r, n));
    let dl_scale = r.gen_range(0.3..1.0) * ctx.dl_cap().sqrt() / dl.iter().map(|v| v * v).sum::<f64>().sqrt();
    LiftedPoint {
        x_dl: dl.iter().map(|v| v * dl_scale).collect(),
        x_ul: project_sphere(&lift_vector(&cn01_vec(&mut r, n))).expect("nonzero draw"),
        p: ctx.p_caps().iter().map(|c| c * r.gen_range(0.1..0.95)).collect(),
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(a.iter().map(|v| v * v).sum::<f64>().sqrt());
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let h = step * x[i].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

/// Worst relative error of every block gradient of the surrogate over `points` random instances.
pub fn phi_gradient_error(points: usize, seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..points {
        let s = seed.wrapping_add(i as u64);
        let n = 1 + (i % 4);
        let k = 1 + (i % 5);
        let ctx = random_context(n, k, s);
        let pt = random_feasible_point(&ctx, s);
        for b in [Block::Dl, Block::Ul, Block::P] {
            let g = grad_phi(b, &pt, &ctx).expect("interior point");
            let base = pt.clone();
            let fd = central_diff(
                |x| {
                    let mut q = base.clone();
                    match b {
                        Block::Dl => q.x_dl = x.to_vec(),
                        Block::Ul => q.x_ul = x.to_vec(),
                        Block::P => q.p = x.to_vec(),
                    }
                    phi_at(&q, &ctx)
                },
                match b {
                    Block::Dl => &pt.x_dl,
                    Block::Ul => &pt.x_ul,
                    Block::P => &pt.p,
                },
                1e-6,
            );
            worst = worst.max(rel_err(&g, &fd));
        }
    }
    worst
}

/// Worst relative error of the local-loss gradient over `points` random
/// parameters, cycling through binary, multiclass and MLP models.
pub fn loss_gradient_error(points: usize, seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..points {
        let s = seed.wrapping_add(i as u64);
        let mut r = RngSpec::new(s).stream(Stream::Estimate, 9, 0);
        let classes = [2, 3, 4][i % 3];
        let spec = LossSpec {
            task: if i % 2 == 0 { Task::Logistic } else { Task::Mlp { hidden: 3 } },
            l2_reg: r.gen_range(0.0..0.1),
            classes,
            feature_dim: 3,
            bias: i % 4 != 1,
        };
        let means = mixture_means(
            &MixtureSpec {
                classes,
                feature_dim: 3,
                separation: 2.0,
            },
            &mut r,
        );
        let data = sample_mixture(&means, 12, &mut r);
        let batch: Vec<usize> = (0..12).collect();
        let nrm = Normal::new(0.0, 0.7).expect("valid");
        let mut theta = ModelVector((0..spec.dim()).map(|_| nrm.sample(&mut r)).collect());
        spec.clear_padding(&mut theta);
        let g = local_grad(&theta, &data, &batch, &spec).expect("valid shapes");
        let raw = spec.raw_dim();
        let fd = central_diff(
            |x| {
                let mut t = x.to_vec();
                t.extend(std::iter::repeat(0.0).take(spec.dim() - raw));
                local_loss(&ModelVector(t), &data, &batch, &spec).expect("valid shapes")
            },
            &theta.0[..raw],
            1e-6,
        );
        worst = worst.max(rel_err(&g.0[..raw], &fd));
    }
    worst
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

/// Runs every suite.
pub fn run_selftest() -> Vec<CheckResult> {
    let mut out = Vec::new();

    let e = phi_gradient_error(100, 1);
    out.push(check("surrogate gradients", e < 1e-5, format!("max relative error {e:.3e}")));
    let e = loss_gradient_error(100, 1);
    out.push(check("loss gradients", e < 1e-5, format!("max relative error {e:.3e}")));

    let mut worst: f64 = 0.0;
    for s in 0..50 {
        let ctx = random_context(3, 2, s);
        let pt = random_feasible_point(&ctx, s);
        let far: Vec<f64> = pt.x_dl.iter().map(|v| 5.0 * v - 1.0).collect();
        for (b, x) in [(Block::Dl, far.clone()), (Block::Ul, far.clone()), (Block::P, vec![-1.0, 1e6])] {
            let once = project(b, &x, &ctx).expect("nonzero");
            let twice = project(b, &once, &ctx).expect("nonzero");
            worst = worst.max(rel_err(&twice, &once));
        }
        let inside = project_ball(&pt.x_dl, ctx.dl_cap());
        worst = worst.max(rel_err(&inside, &pt.x_dl));
    }
    out.push(check("projection idempotence", worst < 1e-12, format!("max relative change {worst:.3e}")));

    let mut r = RngSpec::new(5).stream(Stream::Estimate, 10, 0);
    let mut exact = true;
    for d in [2usize, 4, 10, 84] {
        let theta = ModelVector((0..d).map(|_| r.gen_range(-1e3..1e3)).collect());
        exact &= unpack_real(&pack_complex(&theta).expect("even")) == theta;
    }
    out.push(check("packing round trip", exact, "bit-exact over D = 2, 4, 10, 84".into()));

    let mut worst: f64 = 0.0;
    for s in 0..20 {
        let ctx = random_context(1 + (s as usize % 4), 1, 100 + s);
        let h = &ctx.ch.h[0];
        // aligned beams at full power are optimal for a single device
        let g = ctx.dl_cap() * norm_sqr(h);
        let s2 = ctx.p_caps()[0] * norm_sqr(h);
        let (c1, c2) = ctx.scale.coefficients();
        let optimum = c1 * ctx.noise.sigma2_dl / g + c2 * (ctx.noise.sigma2_dl / g + ctx.noise.sigma2_ul / (2.0 * s2));
        let got = jdu_bf_round(&ctx, None, &AoConfig::default(), &PgdConfig::default())
            .expect("solvable")
            .phi;
        worst = worst.max((got - optimum).abs() / optimum);
    }
    out.push(check("single-device optimum", worst < 1e-6, format!("max relative gap {worst:.3e}")));
    out
}
