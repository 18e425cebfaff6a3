use crate::dynamics::{build_matrices, ProtocolParams, SystemMatrices};
use crate::linalg::{self, Mat, Vector};
use crate::topology::{build_graph_quantities, TopologySpec};
use crate::{Error, Result};

/// H2 norm of `dz' = A_hat dz + B_hat e`, `v = C dz` under unit white `e`.
#[derive(Debug, Clone)]
pub struct H2Result {
    pub f: f64,
    /// Observability Gramian, `X = A^T X A + C^T C`.
    pub x: Mat,
    /// Controllability Gramian, `Y = A Y A^T + B B^T`.
    pub y: Mat,
    pub rho: f64,
}

impl H2Result {
    /// `sqrt(trace(C Y C^T))`; equals `f` up to solver accuracy.
    pub fn f_from_y(&self, c: &Mat) -> f64 {
        (c * &self.y * c.transpose()).trace().max(0.0).sqrt()
    }
}

pub fn h2_norm(m: &SystemMatrices) -> Result<H2Result> {
    let rho = linalg::spectral_radius(&m.a_hat);
    if rho >= 1.0 {
        return Err(Error::UnstablePlant(rho));
    }
    let bh = m.b_hat();
    let bbt = &bh * bh.transpose();
    let x = linalg::dlyap_observability(&m.a_hat, &(m.c.transpose() * &m.c))?;
    let y = linalg::dlyap_controllability(&m.a_hat, &bbt)?;
    let f = (&x * &bbt).trace().max(0.0).sqrt();
    Ok(H2Result { f, x, y, rho })
}

/// H2 norm for a topology and parameter set.
pub fn h2_value(topo: &TopologySpec, params: &ProtocolParams) -> Result<f64> {
    let gq = build_graph_quantities(topo)?;
    let m = build_matrices(topo, params, &gq)?;
    Ok(h2_norm(&m)?.f)
}

/// Partial derivatives of the H2 norm.
///
/// Gains, poll interval and `(kappa1, kappa2, p)` enter `A` and `B` affinely
/// and are differentiated analytically; edge weights also move the projector
/// through `xi` and are differentiated by central differences.
#[derive(Debug, Clone)]
pub struct H2Gradient {
    pub f: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub p: f64,
    pub tau: f64,
    pub alpha: Vec<f64>,
    pub gw: Vec<f64>,
    pub gd: Vec<f64>,
}

fn inner(a: &Mat, b: &Mat) -> f64 {
    a.component_mul(b).sum()
}

/// Sensitivities `d f / d A_hat` and `d f / d B_hat`.
pub(crate) struct AdjointData {
    pub f: f64,
    pub grad_a: Mat,
    pub grad_b: Mat,
}

pub(crate) fn adjoint(m: &SystemMatrices) -> Result<AdjointData> {
    let h = h2_norm(m)?;
    if h.f == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let grad_a = &h.x * &m.a_hat * &h.y / h.f;
    let grad_b = &h.x * m.b_hat() / h.f;
    Ok(AdjointData { f: h.f, grad_a, grad_b })
}

/// Analytic partials `(kappa1, kappa2, p, tau)` from adjoint data.
pub(crate) fn analytic_partials(
    topo: &TopologySpec,
    m: &SystemMatrices,
    adj: &AdjointData,
) -> [f64; 4] {
    let n = topo.n();
    let mm = topo.m();
    let l = topo.laplacian();
    let nmat = &m.projector;
    let bm = topo.incidence_minus();

    // dB_w / d kappa1 and / d p are B_w with the other gain zeroed and unit factor
    let mut db_k1 = Mat::zeros(3 * n, mm + n);
    let mut db_p = Mat::zeros(3 * n, mm + n);
    for (k, e) in topo.edges().iter().enumerate() {
        let w = e.alpha * e.gw;
        for i in 0..n {
            db_k1[(n + i, k)] = -bm[(i, k)] * w;
            db_p[(2 * n + i, k)] = -bm[(i, k)] * w;
        }
    }

    let mut da_k1 = Mat::zeros(3 * n, 3 * n);
    da_k1.view_mut((n, 0), (n, n)).copy_from(&(-&l));
    let mut da_k2 = Mat::zeros(3 * n, 3 * n);
    let mut da_p = Mat::zeros(3 * n, 3 * n);
    da_p.view_mut((2 * n, 0), (n, n)).copy_from(&(-&l));
    let mut da_tau = Mat::zeros(3 * n, 3 * n);
    for i in 0..n {
        da_k2[(n + i, 2 * n + i)] = -1.0;
        da_p[(2 * n + i, 2 * n + i)] = -1.0;
        da_tau[(i, n + i)] = topo.skews()[i];
    }
    let ga = &adj.grad_a;
    let gb = &adj.grad_b;
    [
        inner(ga, &(nmat * da_k1)) + inner(gb, &(nmat * db_k1)),
        inner(ga, &(nmat * da_k2)),
        inner(ga, &(nmat * da_p)) + inner(gb, &(nmat * db_p)),
        inner(ga, &(nmat * da_tau)),
    ]
}

pub fn h2_gradient(topo: &TopologySpec, params: &ProtocolParams) -> Result<H2Gradient> {
    let gq = build_graph_quantities(topo)?;
    let m = build_matrices(topo, params, &gq)?;
    let adj = adjoint(&m)?;
    let [kappa1, kappa2, p, tau] = analytic_partials(topo, &m, &adj);

    let n = topo.n();
    let mm = topo.m();
    let bm = topo.incidence_minus();
    // B_hat is linear in each gain; its derivative is the unit-gain column
    let gw = topo
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let mut col = Vector::zeros(3 * n);
            for i in 0..n {
                col[n + i] = -params.kappa1 * bm[(i, k)] * e.alpha;
                col[2 * n + i] = -params.p * bm[(i, k)] * e.alpha;
            }
            adj.grad_b.column(k).dot(&(&m.projector * col))
        })
        .collect();
    let gd = (0..n)
        .map(|i| adj.grad_b.column(mm + i).dot(&m.projector.column(n + i)))
        .collect();

    let alpha = (0..mm)
        .map(|k| {
            let a0 = topo.edges()[k].alpha;
            let h = 1e-6 * a0;
            let eval = |a: f64| -> Result<f64> {
                let mut alphas: Vec<f64> = topo.edges().iter().map(|e| e.alpha).collect();
                alphas[k] = a;
                h2_value(&topo.with_alphas(&alphas)?, params)
            };
            Ok((eval(a0 + h)? - eval(a0 - h)?) / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;

    Ok(H2Gradient { f: adj.f, kappa1, kappa2, p, tau, alpha, gw, gd })
}
