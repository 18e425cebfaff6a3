//! Measurement jitter, clock wander and constant bias: how they move the
//! collective frequency and the per-node offsets, and the H2 performance of
//! the closed loop.

mod h2;
mod optimize;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analysis::oracle_verdict;
use crate::dynamics::{projector, ProtocolParams};
use crate::linalg::{self, Vector};
use crate::topology::{GraphQuantities, TopologySpec};
use crate::{Error, Result};

pub use h2::{h2_gradient, h2_norm, h2_value, H2Gradient, H2Result};
pub use optimize::{optimize_params, FreeParams, IterRecord, OptimizeOptions, OptimizeOutcome};

/// Error added to one offset measurement, in seconds (before the edge gain).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum JitterModel {
    #[default]
    None,
    /// Two-way measurement where each direction gets a delay drawn uniformly
    /// from `{0, grid, 2 grid, ..., max}`; the offset error is half their
    /// difference.
    UniformGrid { max: f64, grid: f64 },
    Gaussian { sigma: f64 },
    /// Constant bias.
    Constant { bias: f64 },
}

impl JitterModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            JitterModel::None => true,
            JitterModel::UniformGrid { max, grid } => max >= 0.0 && grid > 0.0 && max.is_finite(),
            JitterModel::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
            JitterModel::Constant { bias } => bias.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScenario(format!("invalid jitter model {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JitterModel::None => 0.0,
            JitterModel::UniformGrid { max, grid } => {
                let levels = (max / grid + 1e-9).floor() as u64;
                let fwd = rng.random_range(0..=levels) as f64 * grid;
                let bwd = rng.random_range(0..=levels) as f64 * grid;
                0.5 * (fwd - bwd)
            }
            JitterModel::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
            JitterModel::Constant { bias } => bias,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            JitterModel::Constant { bias } => bias,
            _ => 0.0,
        }
    }

    /// Exact standard deviation of [`JitterModel::sample`].
    pub fn std_dev(&self) -> f64 {
        match *self {
            JitterModel::UniformGrid { max, grid } => {
                let k = (max / grid + 1e-9).floor() + 1.0;
                grid * ((k * k - 1.0) / 24.0).sqrt()
            }
            JitterModel::Gaussian { sigma } => sigma,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum WanderModel {
    #[default]
    None,
    /// White skew noise with standard deviation `sigma` per step.
    Gaussian { sigma: f64 },
}

impl WanderModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            WanderModel::None => 0.0,
            WanderModel::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseSpec {
    /// Model for edges without an override.
    pub jitter: JitterModel,
    /// Per-edge overrides keyed by `(from, to)`.
    pub edge_jitter: BTreeMap<(usize, usize), JitterModel>,
    pub wander: WanderModel,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        NoiseSpec::default()
    }

    pub fn jitter_for(&self, from: usize, to: usize) -> &JitterModel {
        self.edge_jitter.get(&(from, to)).unwrap_or(&self.jitter)
    }

    pub fn validate(&self) -> Result<()> {
        self.jitter.validate()?;
        for j in self.edge_jitter.values() {
            j.validate()?;
        }
        if let WanderModel::Gaussian { sigma } = self.wander {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidScenario("wander sigma must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Per-edge mean errors `w_bar` for `topo`, in edge order.
    pub fn mean_errors(&self, topo: &TopologySpec) -> Vec<f64> {
        topo.edges()
            .iter()
            .map(|e| self.jitter_for(e.from, e.to).mean())
            .collect()
    }
}

/// `B- diag(alpha * gw) w_bar`, one entry per node.
fn weighted_bias(topo: &TopologySpec, wbar: &[f64]) -> Result<Vector> {
    if wbar.len() != topo.m() {
        return Err(Error::Dimension(format!(
            "expected {} edge biases, got {}",
            topo.m(),
            wbar.len()
        )));
    }
    let scaled = Vector::from_iterator(
        topo.m(),
        topo.edges().iter().zip(wbar).map(|(e, w)| e.alpha * e.gw * w),
    );
    Ok(topo.incidence_minus() * scaled)
}

/// Per-step growth of the collective skew `s~` under constant measurement
/// bias: `(kappa1 - kappa2) * w~` with `w~ = -xi^T B- diag(alpha gw) w_bar`.
pub fn drift_rate(
    topo: &TopologySpec,
    gq: &GraphQuantities,
    params: &ProtocolParams,
    wbar: &[f64],
) -> Result<f64> {
    let wt = -gq.xi.dot(&weighted_bias(topo, wbar)?);
    Ok(params.delta_kappa() * wt)
}

/// Limit of the deviations `x - x~ 1` under constant bias:
/// `N1 L^+ dw` with `dw = -N2 B- diag(alpha gw) w_bar`.
pub fn steady_state_offsets(
    topo: &TopologySpec,
    gq: &GraphQuantities,
    params: &ProtocolParams,
    wbar: &[f64],
) -> Result<Vec<f64>> {
    if gq.leader.is_none() {
        return Err(Error::NoLeader);
    }
    let v = oracle_verdict(topo, params);
    if !v.stable {
        return Err(Error::NotSynchronizing(v.reasons.join("; ")));
    }
    let n = topo.n();
    let nmat = projector(topo, gq);
    let n1 = nmat.view((0, 0), (n, n));
    let n2 = nmat.view((n, n), (n, n));
    let dw = -(n2 * weighted_bias(topo, wbar)?);
    let lp = linalg::pseudo_inverse(&gq.laplacian, 1e-10);
    Ok((n1 * (lp * dw)).iter().copied().collect())
}
