//! Dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{Complex, DMatrix, DVector};

use crate::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type C64 = Complex<f64>;

/// Eigenvalues of a general real square matrix. If the QR iteration fails
/// every entry is NaN.
pub fn eigenvalues(m: &Mat) -> Vec<C64> {
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    // nalgebra's Schur iteration can stall on clustered spectra
    let f = faer::Mat::<f64>::from_fn(n, m.ncols(), |i, j| m[(i, j)]);
    match f.eigenvalues() {
        Ok(ev) => ev.into_iter().map(|z| C64::new(z.re, z.im)).collect(),
        Err(_) => vec![C64::new(f64::NAN, f64::NAN); n],
    }
}

/// NaN when the eigenvalues could not be computed.
pub fn spectral_radius(m: &Mat) -> f64 {
    let ev = eigenvalues(m);
    if ev.iter().any(|z| z.re.is_nan()) {
        return f64::NAN;
    }
    ev.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest absolute row sum.
pub fn norm_inf(m: &Mat) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Numerical rank via singular values with threshold `rel_tol * sigma_max`.
pub fn numerical_rank(m: &Mat, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Moore-Penrose pseudo-inverse; singular values below `rel_tol * sigma_max`
/// are treated as zero.
pub fn pseudo_inverse(m: &Mat, rel_tol: f64) -> Mat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Mat::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Mat::zeros(c, r);
    }
    let eps = rel_tol * smax;
    svd.pseudo_inverse(eps)
        .expect("both singular vector sets were computed")
}

/// Solves the discrete Lyapunov equation `S = M^T S M + Q` by the doubling
/// iteration `S <- S + M_k^T S M_k`, `M_{k+1} = M_k^2`.
///
/// Requires `rho(M) < 1`; stops when the update is below `1e-14 * |S|`.
pub fn dlyap_observability(m: &Mat, q: &Mat) -> Result<Mat> {
    let mut s = q.clone();
    let mut mk = m.clone();
    for _ in 0..80 {
        let upd = mk.transpose() * &s * &mk;
        let un = max_abs(&upd);
        s += &upd;
        if un <= 1e-14 * max_abs(&s) || un == 0.0 {
            return Ok(s);
        }
        mk = &mk * &mk;
        if !mk.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::NoConvergence("Lyapunov doubling iteration".into()))
}

/// Solves `S = M S M^T + Q`.
pub fn dlyap_controllability(m: &Mat, q: &Mat) -> Result<Mat> {
    dlyap_observability(&m.transpose(), q)
}

/// Roots of the monic cubic `z^3 + a2 z^2 + a1 z + a0` with complex
/// coefficients, by Cardano's formula followed by Newton polishing.
pub fn cubic_roots(a2: C64, a1: C64, a0: C64) -> [C64; 3] {
    let eval = |z: C64| ((z + a2) * z + a1) * z + a0;
    let deriv = |z: C64| (z * 3.0 + a2 * 2.0) * z + a1;

    // depressed cubic t^3 + p t + q with z = t - a2/3
    let shift = a2 / 3.0;
    let p = a1 - a2 * a2 / 3.0;
    let q = a2 * a2 * a2 * (2.0 / 27.0) - a2 * a1 / 3.0 + a0;
    let disc = (q * q / 4.0 + p * p * p / 27.0).sqrt();
    let mut u3 = -q / 2.0 + disc;
    if u3.norm() < (-q / 2.0 - disc).norm() {
        u3 = -q / 2.0 - disc;
    }
    let omega = C64::new(-0.5, 3f64.sqrt() / 2.0);
    let mut roots = [C64::new(0.0, 0.0); 3];
    if u3.norm() == 0.0 {
        // p == 0 and q == 0: triple root
        roots = [-shift; 3];
    } else {
        let u = u3.powf(1.0 / 3.0);
        let mut w = C64::new(1.0, 0.0);
        for r in roots.iter_mut() {
            let uk = u * w;
            *r = uk - p / (uk * 3.0) - shift;
            w *= omega;
        }
    }
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let d = deriv(*r);
            if d.norm() < 1e-300 {
                break;
            }
            let step = eval(*r) / d;
            if !step.re.is_finite() || !step.im.is_finite() {
                break;
            }
            let cand = *r - step;
            if eval(cand).norm() <= eval(*r).norm() {
                *r = cand;
            } else {
                break;
            }
        }
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn cubic_recovers_known_roots() {
        // (z-1)(z-2)(z+3) = z^3 - 7z + 6
        let mut r: Vec<f64> = cubic_roots(c(0.0), c(-7.0), c(6.0))
            .iter()
            .map(|z| {
                assert!(z.im.abs() < 1e-12);
                z.re
            })
            .collect();
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((r[0] + 3.0).abs() < 1e-12);
        assert!((r[1] - 1.0).abs() < 1e-12);
        assert!((r[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_handles_repeated_and_complex_roots() {
        // (z-1)^2 (z - 0.01)
        let roots = cubic_roots(c(-2.01), c(1.02), c(-0.01));
        let mut mods: Vec<f64> = roots.iter().map(|z| (*z - c(1.0)).norm()).collect();
        mods.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(mods[0] < 1e-6 && mods[1] < 1e-6);
        // z^3 + 1
        for z in cubic_roots(c(0.0), c(0.0), c(1.0)) {
            assert!((z * z * z + c(1.0)).norm() < 1e-12);
        }
        // triple root
        let roots = cubic_roots(c(-3.0), c(3.0), c(-1.0));
        for z in roots {
            assert!((z - c(1.0)).norm() < 1e-5);
        }
    }

    #[test]
    fn lyapunov_scalar() {
        let m = Mat::from_element(1, 1, 0.5);
        let q = Mat::from_element(1, 1, 1.0);
        let s = dlyap_observability(&m, &q).unwrap();
        assert!((s[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_matches_residual() {
        let m = Mat::from_row_slice(3, 3, &[0.9, 0.3, 0.0, -0.2, 0.5, 0.1, 0.0, 0.4, -0.7]);
        let q = Mat::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 0.5]);
        let s = dlyap_observability(&m, &q).unwrap();
        let res = &s - m.transpose() * &s * &m - &q;
        assert!(max_abs(&res) < 1e-12);
        let y = dlyap_controllability(&m, &q).unwrap();
        let res = &y - &m * &y * m.transpose() - &q;
        assert!(max_abs(&res) < 1e-12);
    }

    #[test]
    fn pinv_of_rank_deficient() {
        let l = Mat::from_row_slice(2, 2, &[0.0, 0.0, -0.7, 0.7]);
        let lp = pseudo_inverse(&l, 1e-10);
        let back = &l * &lp * &l;
        assert!(max_abs(&(back - &l)) < 1e-14);
        assert_eq!(numerical_rank(&l, 1e-9), 1);
    }
}
