//! Convergence analysis: characteristic factors, Jordan chains, fixed point
//! prediction, closed-form parameter conditions and the spectral oracle.

use crate::dynamics::{build_matrices, ProtocolParams, SystemMatrices, SystemState};
use crate::linalg::{self, cubic_roots, Vector, C64};
use crate::topology::{build_graph_quantities, is_connected, GraphQuantities, TopologySpec};
use crate::{Error, Result};

/// Spectral radii within this distance of 1 are reported as marginal.
pub const MARGINAL_BAND: f64 = 1e-6;

/// Relative imaginary-part threshold for calling a spectrum real.
const REAL_SPECTRUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SyncVerdict {
    pub stable: bool,
    /// `|rho_j2 - 1| <= MARGINAL_BAND`; the verdict is not numerically decidable.
    pub marginal: bool,
    /// Spectral radius of the deviation dynamics (NaN when not connected).
    pub rho_j2: f64,
    pub reasons: Vec<String>,
    /// Eigenvalues of `tau L R`.
    pub nu: Vec<C64>,
    /// Largest admissible poll interval; only for real spectra.
    pub tau_max: Option<f64>,
    pub connected: bool,
    pub real_spectrum: bool,
}

impl SyncVerdict {
    fn disconnected(nu: Vec<C64>) -> Self {
        SyncVerdict {
            stable: false,
            marginal: false,
            rho_j2: f64::NAN,
            reasons: vec!["not connected".into()],
            nu,
            tau_max: None,
            connected: false,
            real_spectrum: false,
        }
    }
}

/// Monic cubic `g(l) = l^3 + a2 l^2 + a1 l + a0` attached to one eigenvalue
/// `nu` of `tau L R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicFactor {
    pub nu: C64,
    /// `[a2, a1, a0]`.
    pub coeffs: [C64; 3],
}

impl CubicFactor {
    pub fn new(nu: C64, params: &ProtocolParams) -> Self {
        let p = params.p;
        let k1 = params.kappa1;
        let dk = params.delta_kappa();
        // (l-1)^2 (l-1+p) + [(l-1) k1 + p dk] nu, expanded in l
        let a2 = C64::new(p - 3.0, 0.0);
        let a1 = nu * k1 + (3.0 - 2.0 * p);
        let a0 = nu * (p * dk - k1) + (p - 1.0);
        CubicFactor { nu, coeffs: [a2, a1, a0] }
    }

    pub fn eval(&self, l: C64) -> C64 {
        let [a2, a1, a0] = self.coeffs;
        ((l + a2) * l + a1) * l + a0
    }

    pub fn roots(&self) -> [C64; 3] {
        let [a2, a1, a0] = self.coeffs;
        cubic_roots(a2, a1, a0)
    }

    pub fn max_root_modulus(&self) -> f64 {
        self.roots().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Eigenvalues of `tau L R`, the one closest to zero placed last.
pub fn nu_values(topo: &TopologySpec, params: &ProtocolParams) -> Vec<C64> {
    let lr = topo.laplacian() * topo.skew_matrix() * params.tau;
    let mut nu = linalg::eigenvalues(&lr);
    if let Some(i) = nu
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(i, _)| i)
    {
        let z = nu.remove(i);
        nu.push(z);
    }
    nu
}

/// One cubic factor per eigenvalue of `tau L R`; their product is the
/// characteristic polynomial of the system matrix.
pub fn characteristic_factors(topo: &TopologySpec, params: &ProtocolParams) -> Vec<CubicFactor> {
    nu_values(topo, params)
        .into_iter()
        .map(|nu| CubicFactor::new(nu, params))
        .collect()
}

/// Spectral radius of `A_hat = N A` and whether it is below one.
///
/// The three structural zero eigenvalues of `A_hat` replace the eigenvalues
/// `{1, 1, 1 - p}` of `A`, so this is the radius of the remaining modes.
pub fn stability_oracle(m: &SystemMatrices) -> (f64, bool) {
    let rho = linalg::spectral_radius(&m.a_hat);
    (rho, rho < 1.0)
}

fn structural_reasons(params: &ProtocolParams) -> Vec<String> {
    let mut reasons = Vec::new();
    if !(params.p > 0.0 && params.p < 2.0) {
        reasons.push(format!("(i) p = {} outside (0, 2)", params.p));
    }
    if params.kappa1 == params.kappa2 {
        reasons.push("(ii) delta_kappa = 0".into());
    }
    reasons
}

fn is_real_spectrum(topo: &TopologySpec) -> bool {
    let lr = topo.laplacian() * topo.skew_matrix();
    let scale = linalg::norm_inf(&lr).max(f64::MIN_POSITIVE);
    linalg::eigenvalues(&lr)
        .iter()
        .all(|z| z.im.abs() < REAL_SPECTRUM_TOL * scale)
}

/// Verdict from the spectral radius of the deviation dynamics alone.
pub fn oracle_verdict(topo: &TopologySpec, params: &ProtocolParams) -> SyncVerdict {
    let nu = nu_values(topo, params);
    let gq = match build_graph_quantities(topo) {
        Ok(gq) => gq,
        Err(_) => return SyncVerdict::disconnected(nu),
    };
    let m = build_matrices(topo, params, &gq).expect("dimensions agree");
    let (rho, below) = stability_oracle(&m);
    let mut reasons = structural_reasons(params);
    if !below {
        reasons.push(format!("spectral radius {rho:.9} >= 1"));
    }
    SyncVerdict {
        stable: reasons.is_empty(),
        marginal: (rho - 1.0).abs() <= MARGINAL_BAND,
        rho_j2: rho,
        reasons,
        nu,
        tau_max: None,
        connected: true,
        real_spectrum: is_real_spectrum(topo),
    }
}

/// `p (kappa2 - dk p) / (mu (kappa1 - dk p)^2)`.
pub fn tau_max_for(params: &ProtocolParams, mu_max: f64) -> f64 {
    let dk = params.delta_kappa();
    let p = params.p;
    let num = p * (params.kappa2 - dk * p);
    let den = mu_max * (params.kappa1 - dk * p).powi(2);
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Closed-form conditions (i)-(iii) for real-spectrum Laplacians, with the
/// spectral oracle as fallback for complex spectra.
pub fn check_theorem2(topo: &TopologySpec, params: &ProtocolParams) -> SyncVerdict {
    let mut verdict = oracle_verdict(topo, params);
    if !verdict.connected || !verdict.real_spectrum {
        return verdict;
    }
    let p = params.p;
    let dk = params.delta_kappa();
    let mut reasons = Vec::new();
    if !(p > 0.0 && p < 2.0) {
        reasons.push(format!("(i) p = {p} outside (0, 2)"));
    }
    if dk == 0.0 {
        reasons.push("(ii) delta_kappa = 0".into());
    } else if !(dk > 0.0 && 2.0 * params.kappa1 / (3.0 * p) > dk) {
        reasons.push(format!(
            "(ii) need 2*kappa1/(3p) = {:.6} > delta_kappa = {dk:.6} > 0",
            2.0 * params.kappa1 / (3.0 * p)
        ));
    }
    let mu_max = verdict
        .nu
        .iter()
        .map(|z| z.re / params.tau)
        .fold(0.0, f64::max);
    let tau_max = tau_max_for(params, mu_max);
    if reasons.is_empty() && params.tau >= tau_max {
        reasons.push(format!("(iii) tau = {} >= tau_max = {tau_max:.9}", params.tau));
    }
    verdict.stable = reasons.is_empty();
    verdict.reasons = reasons;
    verdict.tau_max = Some(tau_max);
    verdict
}

/// Interlacing test on the bilinear image of `g(l; nu)`, for real `nu > 0`.
pub fn hermite_biehler_stable(nu: f64, params: &ProtocolParams) -> Result<bool> {
    let dkp = params.delta_kappa() * params.p;
    if dkp == 0.0 {
        return Err(Error::DegenerateTransform);
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidParams(format!("nu must be positive, got {nu}")));
    }
    let (p, k1, dk) = (params.p, params.kappa1, params.delta_kappa());
    let lead = 2.0 * k1 / dkp - 3.0;
    if lead <= 0.0 {
        return Ok(false);
    }
    let omega_r = (4.0 * (2.0 - p) / (dkp * nu) + 2.0 * k1 / dkp - 1.0) / lead;
    let omega_i = 4.0 / (dk * nu) + 3.0 - 4.0 * k1 / dkp;
    Ok(0.0 < omega_r && omega_r < omega_i)
}

/// Coefficients `[a3, a2, a1, a0]` of `(s-1)^3 g((s+1)/(s-1)) / (dk p nu)`.
pub fn bilinear_coefficients(nu: f64, params: &ProtocolParams) -> [f64; 4] {
    let dkp = params.delta_kappa() * params.p;
    let (p, k1, dk) = (params.p, params.kappa1, params.delta_kappa());
    [
        1.0,
        2.0 * k1 / dkp - 3.0,
        4.0 / (dk * nu) + 3.0 - 4.0 * k1 / dkp,
        4.0 * (2.0 - p) / (dkp * nu) + 2.0 * k1 / dkp - 1.0,
    ]
}

/// Poll interval bound valid for every connected real-spectrum graph.
pub fn tau_bound_topology_free(
    params: &ProtocolParams,
    alpha_max: f64,
    r_hat_max: f64,
) -> Result<f64> {
    let reasons = structural_reasons(params);
    let dk = params.delta_kappa();
    let mut reasons: Vec<String> = reasons;
    if dk != 0.0 && !(dk > 0.0 && 2.0 * params.kappa1 / (3.0 * params.p) > dk) {
        reasons.push("(ii) need 2*kappa1/(3p) > delta_kappa > 0".into());
    }
    if !reasons.is_empty() {
        return Err(Error::InvalidParams(reasons.join("; ")));
    }
    Ok(tau_max_for(params, 2.0 * alpha_max * r_hat_max))
}

/// Right chain `zeta1..3` and left chain `eta1..3` for the eigenvalues
/// `1` (double) and `1 - p`.
#[derive(Debug, Clone)]
pub struct JordanData {
    pub zeta: [Vector; 3],
    pub eta: [Vector; 3],
}

pub fn jordan_vectors(
    topo: &TopologySpec,
    params: &ProtocolParams,
    gq: &GraphQuantities,
) -> Result<JordanData> {
    if params.kappa1 == params.kappa2 {
        return Err(Error::InvalidParams("kappa1 == kappa2".into()));
    }
    if params.p.is_nan() || params.p <= 0.0 {
        return Err(Error::InvalidParams("p must be positive".into()));
    }
    if !is_connected(topo) {
        return Err(Error::NotConnected);
    }
    let n = topo.n();
    let (tau, k2, p, g) = (params.tau, params.kappa2, params.p, gq.gamma);
    let r = topo.skews();
    let xi = &gq.xi;
    let stack = |f: &dyn Fn(usize, usize) -> f64| {
        Vector::from_fn(3 * n, |row, _| f(row / n, row % n))
    };
    let zeta = [
        stack(&|b, _| if b == 0 { 1.0 } else { 0.0 }),
        stack(&|b, i| match b {
            0 => 1.0,
            1 => 1.0 / (tau * r[i]),
            _ => 0.0,
        }),
        stack(&|b, i| match b {
            0 => -tau * k2 / (p * p),
            1 => k2 / (p * r[i]),
            _ => 1.0 / r[i],
        }),
    ];
    let eta = [
        stack(&|b, i| {
            g * match b {
                0 => xi[i] / r[i],
                1 => -tau * xi[i],
                _ => tau * k2 * (1.0 / p + 1.0 / (p * p)) * xi[i],
            }
        }),
        stack(&|b, i| {
            g * match b {
                0 => 0.0,
                1 => tau * xi[i],
                _ => -tau * k2 / p * xi[i],
            }
        }),
        stack(&|b, i| if b == 2 { g * xi[i] } else { 0.0 }),
    ];
    Ok(JordanData { zeta, eta })
}

/// Asymptotic offset `x*` and rate `r*` from the initial state, without any
/// stability check.
pub fn fixed_point_formula(
    z0: &SystemState,
    topo: &TopologySpec,
    params: &ProtocolParams,
    gq: &GraphQuantities,
) -> (f64, f64) {
    let (k2, p, tau) = (params.kappa2, params.p, params.tau);
    let r = topo.skews();
    let mut xs = 0.0;
    let mut rs = 0.0;
    for (i, ri) in r.iter().enumerate() {
        xs += gq.xi[i] * (z0.x[i] / ri + tau * k2 / (p * p) * z0.y[i]);
        rs += gq.xi[i] * (z0.s[i] - k2 / p * z0.y[i]);
    }
    (gq.gamma * xs, gq.gamma * rs)
}

/// `(x*, r*)` such that every `x_i(t_k) -> x* + r* k tau`.
pub fn predict_fixed_point(
    z0: &SystemState,
    topo: &TopologySpec,
    params: &ProtocolParams,
    gq: &GraphQuantities,
) -> Result<(f64, f64)> {
    if z0.n() != topo.n() {
        return Err(Error::Dimension("state does not match topology".into()));
    }
    let v = oracle_verdict(topo, params);
    if !v.stable {
        return Err(Error::NotSynchronizing(v.reasons.join("; ")));
    }
    Ok(fixed_point_formula(z0, topo, params, gq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{client_server, leader_loop, Edge};

    fn defaults(tau: f64) -> ProtocolParams {
        ProtocolParams::defaults(tau)
    }

    #[test]
    fn zero_nu_factor() {
        let f = CubicFactor::new(C64::new(0.0, 0.0), &defaults(1.0));
        let mut roots: Vec<f64> = f.roots().iter().map(|z| z.re).collect();
        roots.sort_by(f64::total_cmp);
        assert!((roots[0] - 0.01).abs() < 1e-9);
        assert!((roots[1] - 1.0).abs() < 1e-6 && (roots[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn client_server_factor_roots() {
        let f = CubicFactor::new(C64::new(0.7, 0.0), &defaults(1.0));
        assert!(f.max_root_modulus() < 1.0);
        let f = CubicFactor::new(C64::new(0.7 * 1.3, 0.0), &defaults(1.3));
        assert!(f.max_root_modulus() >= 1.0);
    }

    #[test]
    fn oracle_examples() {
        let cs = client_server(0.7);
        let gq = build_graph_quantities(&cs).unwrap();
        let m = build_matrices(&cs, &defaults(1.0), &gq).unwrap();
        assert!(stability_oracle(&m).1);
        let lp = leader_loop(0.7);
        let gq = build_graph_quantities(&lp).unwrap();
        let m = build_matrices(&lp, &defaults(1.0), &gq).unwrap();
        assert!(!stability_oracle(&m).1);
        let m = build_matrices(&lp, &defaults(0.5), &gq).unwrap();
        assert!(stability_oracle(&m).1);
    }

    #[test]
    fn theorem2_tau_max() {
        let v = check_theorem2(&client_server(0.7), &defaults(1.0));
        assert!(v.stable);
        assert!((v.tau_max.unwrap() - 1.2717).abs() < 1e-3);
        let v = check_theorem2(&leader_loop(0.7), &defaults(1.0));
        assert!(!v.stable);
        assert!((v.tau_max.unwrap() - 0.8478).abs() < 1e-3);
        let eq = ProtocolParams::new(1.0, 1.0, 0.99, 1.0).unwrap();
        let v = check_theorem2(&client_server(0.7), &eq);
        assert!(!v.stable);
        assert!(v.reasons.iter().any(|r| r.contains("(ii) delta_kappa = 0")));
    }

    #[test]
    fn disconnected_verdict() {
        let t = TopologySpec::new(3, vec![Edge::new(1, 0, 1.0)]).unwrap();
        let v = check_theorem2(&t, &defaults(1.0));
        assert!(!v.stable && !v.connected);
        assert_eq!(v.reasons, vec!["not connected".to_string()]);
    }

    #[test]
    fn hermite_biehler_examples() {
        let p = defaults(1.0);
        assert!(hermite_biehler_stable(0.7, &p).unwrap());
        let bound = tau_max_for(&p, 1.0);
        assert!(!hermite_biehler_stable(bound * (1.0 + 1e-6), &p).unwrap());
        assert!(hermite_biehler_stable(bound * (1.0 - 1e-6), &p).unwrap());
        assert!(!hermite_biehler_stable(1.05, &p).unwrap());
        let eq = ProtocolParams::new(1.0, 1.0, 0.99, 1.0).unwrap();
        assert_eq!(hermite_biehler_stable(0.5, &eq), Err(Error::DegenerateTransform));
    }

    #[test]
    fn bilinear_transform_matches_direct_evaluation() {
        let params = ProtocolParams::new(1.3, 1.1, 0.7, 1.0).unwrap();
        let nu = 0.37;
        let f = CubicFactor::new(C64::new(nu, 0.0), &params);
        let c = bilinear_coefficients(nu, &params);
        let scale = params.delta_kappa() * params.p * nu;
        for s in [0.3, -2.0, 4.5, 0.0] {
            let s = C64::new(s, 0.2);
            let lam = (s + 1.0) / (s - 1.0);
            let lhs = (s - 1.0).powi(3) * f.eval(lam) / scale;
            let rhs = ((s * c[0] + c[1]) * s + c[2]) * s + c[3];
            assert!((lhs - rhs).norm() < 1e-10 * rhs.norm().max(1.0));
        }
    }

    #[test]
    fn topology_free_bound() {
        let t = tau_bound_topology_free(&defaults(1.0), 0.7, 1.0).unwrap();
        assert!((t - 0.6359).abs() < 1e-4);
        let t2 = tau_bound_topology_free(&defaults(1.0), 1.4, 1.0).unwrap();
        assert!((t2 - t / 2.0).abs() < 1e-15);
        // kappa2 = dk * p
        let (k1, p) = (1.1, 0.99);
        let k2 = k1 * p / (1.0 + p);
        let zero = tau_bound_topology_free(&ProtocolParams::new(k1, k2, p, 1.0).unwrap(), 0.7, 1.0)
            .unwrap();
        assert!(zero.abs() < 1e-15);
        let bad = ProtocolParams::new(1.0, 1.1, 2.5, 1.0).unwrap();
        let err = tau_bound_topology_free(&bad, 0.7, 1.0).unwrap_err().to_string();
        assert!(err.contains("(i)") && err.contains("(ii)"));
    }

    #[test]
    fn jordan_first_columns() {
        let t = leader_loop(0.7);
        let gq = build_graph_quantities(&t).unwrap();
        let j = jordan_vectors(&t, &defaults(0.5), &gq).unwrap();
        let n = 3;
        for i in 0..n {
            assert_eq!(j.zeta[0][i], 1.0);
            assert_eq!(j.zeta[0][n + i], 0.0);
            assert_eq!(j.zeta[0][2 * n + i], 0.0);
            assert_eq!(j.eta[2][i], 0.0);
            assert_eq!(j.eta[2][n + i], 0.0);
            assert!((j.eta[2][2 * n + i] - gq.gamma * gq.xi[i]).abs() < 1e-15);
        }
        let eq = ProtocolParams::new(1.0, 1.0, 0.99, 1.0).unwrap();
        assert!(jordan_vectors(&t, &eq, &gq).is_err());
    }

    #[test]
    fn leader_fixed_point() {
        let t = client_server(0.7).with_skews(vec![1.0 + 3e-5, 1.0 - 1e-5]).unwrap();
        let gq = build_graph_quantities(&t).unwrap();
        let t0 = 1234.5;
        let r1 = t.skews()[0];
        let z0 = SystemState::new(vec![t0, t0 + 0.01], vec![1.0 / r1, 1.0], vec![0.0, 1e-3])
            .unwrap();
        let (xs, rs) = predict_fixed_point(&z0, &t, &defaults(1.0), &gq).unwrap();
        assert!((xs - t0).abs() <= 4.0 * f64::EPSILON * t0);
        assert!((rs - 1.0).abs() <= 4.0 * f64::EPSILON);
        let unstable = predict_fixed_point(&z0, &t, &defaults(2.0), &gq);
        assert!(matches!(unstable, Err(Error::NotSynchronizing(_))));
    }

    #[test]
    fn identical_nodes_fixed_point() {
        let t = leader_loop(0.7).with_skews(vec![1.0002, 0.9999, 1.00003]).unwrap();
        let gq = build_graph_quantities(&t).unwrap();
        let sigma = 1.0 + 1e-4;
        let z0 = SystemState::new(
            vec![42.0; 3],
            t.skews().iter().map(|r| sigma / r).collect(),
            vec![0.0; 3],
        )
        .unwrap();
        let (xs, rs) = fixed_point_formula(&z0, &t, &defaults(0.5), &gq);
        assert!((xs - 42.0).abs() < 1e-12);
        assert!((rs - sigma).abs() < 1e-14);
    }
}
