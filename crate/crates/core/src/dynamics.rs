//! One-step dynamics of the protocol, per node and in stacked matrix form.
//!
//! The stacked state is `z = (x, s, y)` of length `3n`. All times are in
//! seconds.

use nalgebra::{Matrix3, Vector3};

use crate::linalg::{Mat, Vector};
use crate::topology::{GraphQuantities, TopologySpec};
use crate::{Error, Result};

/// Gains and poll interval of the update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub kappa1: f64,
    pub kappa2: f64,
    pub p: f64,
    /// Poll interval in seconds.
    pub tau: f64,
}

impl ProtocolParams {
    pub fn new(kappa1: f64, kappa2: f64, p: f64, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidParams(format!("tau must be positive, got {tau}")));
        }
        if ![kappa1, kappa2, p].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParams("gains must be finite".into()));
        }
        Ok(ProtocolParams { kappa1, kappa2, p, tau })
    }

    /// Default gains `kappa1 = 1.1`, `kappa2 = 1.0`, `p = 0.99`.
    pub fn defaults(tau: f64) -> Self {
        ProtocolParams { kappa1: 1.1, kappa2: 1.0, p: 0.99, tau }
    }

    pub fn delta_kappa(&self) -> f64 {
        self.kappa1 - self.kappa2
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}

/// Per-node clock state at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub k: u64,
}

impl SystemState {
    pub fn new(x: Vec<f64>, s: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != s.len() || x.len() != y.len() {
            return Err(Error::Dimension("x, s and y must have equal length".into()));
        }
        Ok(SystemState { x, s, y, k: 0 })
    }

    pub fn zeros(n: usize) -> Self {
        SystemState { x: vec![0.0; n], s: vec![0.0; n], y: vec![0.0; n], k: 0 }
    }

    /// Every node at time estimate `x0` with `s_i = 1 / r_i` and `y = 0`.
    pub fn ideal(topo: &TopologySpec, x0: f64) -> Self {
        SystemState {
            x: vec![x0; topo.n()],
            s: topo.skews().iter().map(|r| 1.0 / r).collect(),
            y: vec![0.0; topo.n()],
            k: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn to_vector(&self) -> Vector {
        Vector::from_iterator(
            3 * self.n(),
            self.x.iter().chain(&self.s).chain(&self.y).copied(),
        )
    }

    pub fn from_vector(z: &Vector, k: u64) -> Result<Self> {
        if !z.len().is_multiple_of(3) {
            return Err(Error::Dimension("state length must be a multiple of 3".into()));
        }
        let n = z.len() / 3;
        let sl = z.as_slice();
        Ok(SystemState {
            x: sl[..n].to_vec(),
            s: sl[n..2 * n].to_vec(),
            y: sl[2 * n..].to_vec(),
            k,
        })
    }
}

/// Matrices of the stacked linear model `z' = A z + B e`, `v = C z`.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub a: Mat,
    /// Projector onto the deviation subspace, `blockdiag(N1, N2, N2)`.
    pub projector: Mat,
    pub a_hat: Mat,
    pub a_tilde: Matrix3<f64>,
    pub bw: Mat,
    pub bd: Mat,
    pub c: Mat,
    /// Node the outputs are measured against.
    pub reference: usize,
}

impl SystemMatrices {
    pub fn b(&self) -> Mat {
        let (rows, m, n) = (self.bw.nrows(), self.bw.ncols(), self.bd.ncols());
        let mut b = Mat::zeros(rows, m + n);
        b.columns_mut(0, m).copy_from(&self.bw);
        b.columns_mut(m, n).copy_from(&self.bd);
        b
    }

    pub fn b_hat(&self) -> Mat {
        &self.projector * self.b()
    }
}

/// The `3n x 3n` one-step matrix.
pub fn system_matrix(topo: &TopologySpec, params: &ProtocolParams) -> Mat {
    let n = topo.n();
    let l = topo.laplacian();
    let mut a = Mat::zeros(3 * n, 3 * n);
    for i in 0..n {
        a[(i, i)] = 1.0;
        a[(i, n + i)] = params.tau * topo.skews()[i];
        a[(n + i, n + i)] = 1.0;
        a[(n + i, 2 * n + i)] = -params.kappa2;
        a[(2 * n + i, 2 * n + i)] = 1.0 - params.p;
    }
    a.view_mut((n, 0), (n, n)).copy_from(&(&l * -params.kappa1));
    a.view_mut((2 * n, 0), (n, n)).copy_from(&(&l * -params.p));
    a
}

#[rustfmt::skip]
pub fn collective_matrix(params: &ProtocolParams) -> Matrix3<f64> {
    Matrix3::new(
        1.0, params.tau, 0.0,
        0.0, 1.0, -params.kappa2,
        0.0, 0.0, 1.0 - params.p,
    )
}

/// `blockdiag(N1, N2, N2)` with `N1 = I - gamma 1 xi^T R^-1` and
/// `N2 = I - gamma R^-1 1 xi^T`.
pub fn projector(topo: &TopologySpec, gq: &GraphQuantities) -> Mat {
    let n = topo.n();
    let r = topo.skews();
    let mut n1 = Mat::identity(n, n);
    let mut n2 = Mat::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            n1[(i, j)] -= gq.gamma * gq.xi[j] / r[j];
            n2[(i, j)] -= gq.gamma * gq.xi[j] / r[i];
        }
    }
    let mut big = Mat::zeros(3 * n, 3 * n);
    big.view_mut((0, 0), (n, n)).copy_from(&n1);
    big.view_mut((n, n), (n, n)).copy_from(&n2);
    big.view_mut((2 * n, 2 * n), (n, n)).copy_from(&n2);
    big
}

/// Jitter input matrix `[0; -kappa1 B- diag(a gw); -p B- diag(a gw)]`.
pub fn jitter_input(topo: &TopologySpec, params: &ProtocolParams) -> Mat {
    let n = topo.n();
    let m = topo.m();
    let bm = topo.incidence_minus();
    let mut bw = Mat::zeros(3 * n, m);
    for (k, e) in topo.edges().iter().enumerate() {
        let w = e.alpha * e.gw;
        for i in 0..n {
            bw[(n + i, k)] = -params.kappa1 * bm[(i, k)] * w;
            bw[(2 * n + i, k)] = -params.p * bm[(i, k)] * w;
        }
    }
    bw
}

/// Wander input matrix `[0; diag(gd); 0]`.
pub fn wander_input(topo: &TopologySpec) -> Mat {
    let n = topo.n();
    let mut bd = Mat::zeros(3 * n, n);
    for (i, g) in topo.wander_gains().iter().enumerate() {
        bd[(n + i, i)] = *g;
    }
    bd
}

/// Output map `v_i = x_i - x_ref` for every `i != ref`.
pub fn output_map(n: usize, reference: usize) -> Mat {
    let mut c = Mat::zeros(n.saturating_sub(1), 3 * n);
    for (row, i) in (0..n).filter(|&i| i != reference).enumerate() {
        c[(row, i)] = 1.0;
        c[(row, reference)] = -1.0;
    }
    c
}

/// Builds all system matrices. Outputs are referenced to the leader, or to
/// node 0 when the topology has none.
pub fn build_matrices(
    topo: &TopologySpec,
    params: &ProtocolParams,
    gq: &GraphQuantities,
) -> Result<SystemMatrices> {
    if gq.xi.len() != topo.n() {
        return Err(Error::Dimension("graph quantities do not match topology".into()));
    }
    let a = system_matrix(topo, params);
    let projector = projector(topo, gq);
    let a_hat = &projector * &a;
    let reference = gq.leader.unwrap_or(0);
    Ok(SystemMatrices {
        a_tilde: collective_matrix(params),
        bw: jitter_input(topo, params),
        bd: wander_input(topo),
        c: output_map(topo.n(), reference),
        projector,
        a_hat,
        a,
        reference,
    })
}

/// Noiseless `z' = A z`.
pub fn step_matrix(z: &SystemState, m: &SystemMatrices) -> Result<SystemState> {
    if 3 * z.n() != m.a.nrows() {
        return Err(Error::Dimension(format!(
            "state has {} nodes, matrices have {}",
            z.n(),
            m.a.nrows() / 3
        )));
    }
    SystemState::from_vector(&(&m.a * z.to_vector()), z.k + 1)
}

/// True offsets `D_ij = x_j - x_i`, one per edge in topology order.
pub fn noiseless_offsets(z: &SystemState, topo: &TopologySpec) -> Vec<f64> {
    topo.edges().iter().map(|e| z.x[e.to] - z.x[e.from]).collect()
}

/// Weighted sums `sum_j a_ij D_ij` per node.
fn weighted_offsets(topo: &TopologySpec, offsets: &[f64]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; topo.n()];
    for (k, e) in topo.edges().iter().enumerate() {
        match offsets.get(k) {
            Some(d) if d.is_finite() => acc[e.from] += e.alpha * d,
            _ => return Err(Error::MissingOffset { from: e.from, to: e.to }),
        }
    }
    Ok(acc)
}

/// Per-node update with measured offsets (one per edge, topology order).
pub fn step_algorithm1(
    z: &SystemState,
    topo: &TopologySpec,
    params: &ProtocolParams,
    offsets: &[f64],
) -> Result<SystemState> {
    check_len(z, topo)?;
    let d = weighted_offsets(topo, offsets)?;
    let r = topo.skews();
    let mut next = z.clone();
    for i in 0..topo.n() {
        next.x[i] = z.x[i] + params.tau * r[i] * z.s[i];
        next.s[i] = z.s[i] + params.kappa1 * d[i] - params.kappa2 * z.y[i];
        next.y[i] = params.p * d[i] + (1.0 - params.p) * z.y[i];
    }
    next.k += 1;
    Ok(next)
}

/// Offset-only skew correction `u_s = kappa1 * sum a_ij D_ij`; `y` is unused.
pub fn step_naive(
    z: &SystemState,
    topo: &TopologySpec,
    params: &ProtocolParams,
) -> Result<SystemState> {
    check_len(z, topo)?;
    let d = weighted_offsets(topo, &noiseless_offsets(z, topo))?;
    let r = topo.skews();
    let mut next = z.clone();
    for i in 0..topo.n() {
        next.x[i] = z.x[i] + params.tau * r[i] * z.s[i];
        next.s[i] = z.s[i] + params.kappa1 * d[i];
    }
    next.k += 1;
    Ok(next)
}

/// `2n x 2n` matrix of the offset-only rule acting on `(x, s)`.
pub fn naive_matrix(topo: &TopologySpec, params: &ProtocolParams) -> Mat {
    let n = topo.n();
    let mut a = Mat::identity(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = params.tau * topo.skews()[i];
    }
    a.view_mut((n, 0), (n, n)).copy_from(&(topo.laplacian() * -params.kappa1));
    a
}

fn check_len(z: &SystemState, topo: &TopologySpec) -> Result<()> {
    if z.n() != topo.n() || z.s.len() != topo.n() || z.y.len() != topo.n() {
        return Err(Error::Dimension(format!(
            "state has {} nodes, topology has {}",
            z.n(),
            topo.n()
        )));
    }
    Ok(())
}

/// Splits a state into collective `(x~, s~, y~)` and deviations `dz`.
pub fn decompose(
    z: &SystemState,
    topo: &TopologySpec,
    gq: &GraphQuantities,
) -> (Vector3<f64>, SystemState) {
    let r = topo.skews();
    let g = gq.gamma;
    let xi = &gq.xi;
    let xt = g * (0..z.n()).map(|i| xi[i] * z.x[i] / r[i]).sum::<f64>();
    let st = g * (0..z.n()).map(|i| xi[i] * z.s[i]).sum::<f64>();
    let yt = g * (0..z.n()).map(|i| xi[i] * z.y[i]).sum::<f64>();
    let dz = SystemState {
        x: z.x.iter().map(|x| x - xt).collect(),
        s: z.s.iter().zip(r).map(|(s, r)| s - st / r).collect(),
        y: z.y.iter().zip(r).map(|(y, r)| y - yt / r).collect(),
        k: z.k,
    };
    (Vector3::new(xt, st, yt), dz)
}

/// Inverse of [`decompose`].
pub fn recompose(tilde: &Vector3<f64>, dz: &SystemState, topo: &TopologySpec) -> SystemState {
    let r = topo.skews();
    SystemState {
        x: dz.x.iter().map(|d| d + tilde[0]).collect(),
        s: dz.s.iter().zip(r).map(|(d, r)| d + tilde[1] / r).collect(),
        y: dz.y.iter().zip(r).map(|(d, r)| d + tilde[2] / r).collect(),
        k: dz.k,
    }
}
