//! Projected gradient descent on the H2 norm under a spectral-radius cap.

use super::h2::{adjoint, analytic_partials, h2_value};
use crate::dynamics::{build_matrices, ProtocolParams};
use crate::linalg;
use crate::topology::{build_graph_quantities, TopologySpec};
use crate::{Error, Result};

/// Which parameters the optimizer may move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeParams {
    pub kappa1: bool,
    pub kappa2: bool,
    pub p: bool,
    pub tau: bool,
    /// All edge weights, differentiated numerically.
    pub alpha: bool,
}

impl Default for FreeParams {
    fn default() -> Self {
        FreeParams { kappa1: true, kappa2: true, p: true, tau: false, alpha: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub rho_star: f64,
    pub max_iter: usize,
    pub free: FreeParams,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions { rho_star: 0.999, max_iter: 200, free: FreeParams::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub f: f64,
    pub rho: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub params: ProtocolParams,
    /// Topology with the final edge weights (unchanged unless `alpha` is free).
    pub topo: TopologySpec,
    pub f: f64,
    pub rho: f64,
    /// Starting point after the stabilising pre-phase, then every accepted
    /// iterate.
    pub log: Vec<IterRecord>,
}

const P_MARGIN: f64 = 1e-6;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Decision vector `[kappa1, kappa2, p, tau, alpha_1..alpha_m]`.
#[derive(Debug, Clone, PartialEq)]
struct Point {
    theta: Vec<f64>,
}

impl Point {
    fn from(params: &ProtocolParams, topo: &TopologySpec) -> Self {
        let mut theta = vec![params.kappa1, params.kappa2, params.p, params.tau];
        theta.extend(topo.edges().iter().map(|e| e.alpha));
        Point { theta }
    }

    fn params(&self) -> ProtocolParams {
        ProtocolParams {
            kappa1: self.theta[0],
            kappa2: self.theta[1],
            p: self.theta[2],
            tau: self.theta[3],
        }
    }

    fn topo(&self, base: &TopologySpec) -> Result<TopologySpec> {
        base.with_alphas(&self.theta[4..])
    }
}

fn structural_ok(p: &ProtocolParams) -> bool {
    let dk = p.delta_kappa();
    p.p > 0.0 && p.p < 2.0 && dk > 0.0 && 2.0 * p.kappa1 / (3.0 * p.p) > dk && p.tau > 0.0
}

/// Pulls a point back into conditions (i)-(ii) and positivity.
fn project(mut pt: Point) -> Point {
    let th = &mut pt.theta;
    th[2] = th[2].clamp(P_MARGIN, 2.0 - P_MARGIN);
    th[3] = th[3].max(1e-9);
    for a in th[4..].iter_mut() {
        *a = a.max(1e-12);
    }
    let upper = 2.0 * th[0] / (3.0 * th[2]);
    let dk = th[0] - th[1];
    if upper > 0.0 {
        let lo = 1e-9 * upper;
        let hi = upper * (1.0 - 1e-9);
        if dk < lo {
            th[1] = th[0] - lo;
        } else if dk > hi {
            th[1] = th[0] - hi;
        }
    }
    pt
}

struct Eval {
    f: f64,
    rho: f64,
}

fn evaluate(pt: &Point, base: &TopologySpec, rho_star: f64) -> Option<Eval> {
    let params = pt.params();
    if !structural_ok(&params) {
        return None;
    }
    let topo = pt.topo(base).ok()?;
    let gq = build_graph_quantities(&topo).ok()?;
    let m = build_matrices(&topo, &params, &gq).ok()?;
    let rho = linalg::spectral_radius(&m.a_hat);
    if rho.is_nan() || rho > rho_star {
        return None;
    }
    let f = super::h2::h2_norm(&m).ok()?.f;
    f.is_finite().then_some(Eval { f, rho })
}

fn gradient(pt: &Point, base: &TopologySpec, free: &FreeParams) -> Result<Vec<f64>> {
    let params = pt.params();
    let topo = pt.topo(base)?;
    let gq = build_graph_quantities(&topo)?;
    let m = build_matrices(&topo, &params, &gq)?;
    let adj = adjoint(&m)?;
    let an = analytic_partials(&topo, &m, &adj);
    let mut g = vec![0.0; pt.theta.len()];
    let mask = [free.kappa1, free.kappa2, free.p, free.tau];
    for i in 0..4 {
        if mask[i] {
            g[i] = an[i];
        }
    }
    if free.alpha {
        for k in 0..topo.m() {
            let a0 = pt.theta[4 + k];
            let h = 1e-6 * a0;
            let mut alphas = pt.theta[4..].to_vec();
            alphas[k] = a0 + h;
            let fp = h2_value(&topo.with_alphas(&alphas)?, &params)?;
            alphas[k] = a0 - h;
            let fm = h2_value(&topo.with_alphas(&alphas)?, &params)?;
            g[4 + k] = (fp - fm) / (2.0 * h);
        }
    }
    Ok(g)
}

/// Minimises the H2 norm over the free parameters, keeping every accepted
/// iterate inside conditions (i)-(ii) and below `rho_star`.
///
/// An infeasible start is first stabilised by halving both `kappa`s.
pub fn optimize_params(
    topo: &TopologySpec,
    init: &ProtocolParams,
    opts: &OptimizeOptions,
) -> Result<OptimizeOutcome> {
    if !(opts.rho_star > 0.0 && opts.rho_star < 1.0) {
        return Err(Error::InvalidParams("rho_star must lie in (0, 1)".into()));
    }
    let mut pt = Point::from(init, topo);
    if !structural_ok(&pt.params()) {
        pt = project(pt);
    }
    let mut cur = None;
    for _ in 0..60 {
        if let Some(e) = evaluate(&pt, topo, opts.rho_star) {
            cur = Some(e);
            break;
        }
        pt.theta[0] *= 0.5;
        pt.theta[1] *= 0.5;
    }
    let mut cur = cur.ok_or(Error::NoStableStart)?;
    let record = |iter: usize, pt: &Point, e: &Eval| IterRecord {
        iter,
        f: e.f,
        rho: e.rho,
        kappa1: pt.theta[0],
        kappa2: pt.theta[1],
        p: pt.theta[2],
    };
    let mut log = vec![record(0, &pt, &cur)];
    let mut step: f64 = 1.0;

    for iter in 1..=opts.max_iter {
        let g = match gradient(&pt, topo, &opts.free) {
            Ok(g) => g,
            Err(Error::ZeroNorm) => break,
            Err(e) => return Err(e),
        };
        // steepest descent in relative coordinates
        let dir: Vec<f64> = g
            .iter()
            .zip(&pt.theta)
            .map(|(gi, th)| -gi * th * th)
            .collect();
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if slope.is_nan() || slope >= 0.0 {
            break;
        }
        let rel = dir
            .iter()
            .zip(&pt.theta)
            .map(|(d, th)| (d / th).abs())
            .fold(0.0, f64::max);
        let mut t = step.min(0.25 / rel);
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = project(Point {
                theta: pt.theta.iter().zip(&dir).map(|(th, d)| th + t * d).collect(),
            });
            if trial != pt {
                if let Some(e) = evaluate(&trial, topo, opts.rho_star) {
                    let actual: f64 =
                        trial.theta.iter().zip(&pt.theta).zip(&g).map(|((a, b), gi)| (a - b) * gi).sum();
                    if e.f <= cur.f + ARMIJO * actual.min(0.0) && e.f < cur.f {
                        accepted = Some((trial, e));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let Some((next, e)) = accepted else { break };
        let improvement = (cur.f - e.f) / cur.f;
        pt = next;
        cur = e;
        log.push(record(iter, &pt, &cur));
        step = (2.0 * t).min(1e6);
        if improvement < 1e-13 {
            break;
        }
    }

    Ok(OptimizeOutcome {
        params: pt.params(),
        topo: pt.topo(topo)?,
        f: cur.f,
        rho: cur.rho,
        log,
    })
}
