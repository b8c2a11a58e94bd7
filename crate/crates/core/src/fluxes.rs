//! Numerical flux formulas: logarithmic mean, truncation map, solid
//! cross-diffusion flux, implicit Stefan-Maxwell gas flux and the truncated
//! mass-action interface fluxes, together with their analytic derivatives.
//!
//! All fluxes are per unit length: bulk fluxes carry the `1/dx` gradient
//! scaling, interface fluxes are plain exchange rates.

use nalgebra::{DMatrix, DVector};

use crate::model::{ModelParams, Phase};
use crate::{Error, Result};

/// Relative spread below which the log-mean derivatives switch to their
/// series form: the closed-form derivatives lose `|a-b|/a` digits to
/// cancellation, the cubic series loses `(|a-b|/a)^3`, and they cross near
/// the fourth root of machine epsilon.
const LOG_MEAN_SERIES_TOL: f64 = 1e-4;

/// Band around a unit positive-part sum where the truncation map returns the
/// averaged one-sided derivative (the map is only piecewise smooth there).
const DIAMOND_KINK_BAND: f64 = 1e-9;

/// Logarithmic mean with the zero-extension used by the scheme:
/// `0` if `min(a,b) <= 0`, `a` if `a == b > 0`, `(a-b)/(log a - log b)` else.
///
/// The quotient is evaluated as `(a-b)/ln_1p((a-b)/b)`, which is the same
/// expression without the catastrophic cancellation of `log a - log b` for
/// nearby arguments; the two analytic branches agree to roundoff.
pub fn log_mean(a: f64, b: f64) -> f64 {
    if a.min(b) <= 0.0 {
        return 0.0;
    }
    if a == b {
        return a;
    }
    let diff = a - b;
    diff / (diff / b).ln_1p()
}

/// Logarithmic mean and its partial derivatives `(value, d/da, d/db)`.
pub fn log_mean_with_grad(a: f64, b: f64) -> (f64, f64, f64) {
    if a.min(b) <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let val = log_mean(a, b);
    let diff = b - a;
    if diff.abs() <= LOG_MEAN_SERIES_TOL * a.max(b) {
        let r = diff / a;
        let da = 0.5 + r / 6.0 - r * r / 24.0;
        let db = 0.5 - r / 6.0 + r * r / 8.0;
        (val, da, db)
    } else {
        let l = a.ln() - b.ln();
        let da = (1.0 - val / a) / l;
        let db = (val / b - 1.0) / l;
        (val, da, db)
    }
}

/// Truncation/normalization map `x_i -> x_i^+ / max(1, sum_j x_j^+)`.
///
/// Entries land in [0,1], admissible vectors are fixed, and on unit-sum
/// inputs an entry maps to zero exactly when it is nonpositive.
pub fn diamond(x: &[f64]) -> Vec<f64> {
    let s: f64 = x.iter().map(|v| v.max(0.0)).sum();
    let denom = s.max(1.0);
    x.iter().map(|v| v.max(0.0) / denom).collect()
}

/// Generalized Jacobian of [`diamond`].
///
/// The map is piecewise smooth with a kink where the positive-part sum
/// crosses one; inside a narrow band around that kink the two one-sided
/// derivatives are averaged, which is both a valid semismooth-Newton choice
/// and the limit a central difference quotient sees at the kink.
pub fn diamond_jacobian(x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let s: f64 = x.iter().map(|v| v.max(0.0)).sum();
    let active: Vec<f64> = x.iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut jac = DMatrix::zeros(n, n);
    if (s - 1.0).abs() <= DIAMOND_KINK_BAND {
        for i in 0..n {
            for j in 0..n {
                let identity = if i == j { active[i] } else { 0.0 };
                let quotient = identity / s - x[i].max(0.0) * active[j] / (s * s);
                jac[(i, j)] = 0.5 * (identity + quotient);
            }
        }
    } else if s > 1.0 {
        for i in 0..n {
            for j in 0..n {
                let identity = if i == j { active[i] } else { 0.0 };
                jac[(i, j)] = identity / s - x[i].max(0.0) * active[j] / (s * s);
            }
        }
    } else {
        for i in 0..n {
            jac[(i, i)] = active[i];
        }
    }
    jac
}

/// A mesh edge: the two adjacent cell vectors and their per-species
/// logarithmic means.
#[derive(Debug, Clone)]
pub struct EdgeState {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub edge_conc: Vec<f64>,
}

impl EdgeState {
    pub fn new(left: &[f64], right: &[f64]) -> Self {
        let edge_conc = left.iter().zip(right).map(|(a, b)| log_mean(*a, *b)).collect();
        Self { left: left.to_vec(), right: right.to_vec(), edge_conc }
    }
}

/// Solid TPFA flux across an edge:
/// `dx J_i = -kappa_min D_i - sum_j kbar_ij (u_j D_i - u_i D_j)` with
/// `D = right - left` and `u` the edge log-means.
pub fn solid_flux(left: &[f64], right: &[f64], dx: f64, params: &ModelParams) -> Vec<f64> {
    let n = left.len();
    let kbar = params.kappa_bar(Phase::Solid);
    let kmin = params.kappa_min(Phase::Solid);
    let u: Vec<f64> = left.iter().zip(right).map(|(a, b)| log_mean(*a, *b)).collect();
    let mut flux = vec![0.0; n];
    for i in 0..n {
        let di = right[i] - left[i];
        let mut acc = kmin * di;
        for j in 0..n {
            if j == i {
                continue;
            }
            let dj = right[j] - left[j];
            acc += kbar[(i, j)] * (u[j] * di - u[i] * dj);
        }
        flux[i] = -acc / dx;
    }
    flux
}

/// Solid flux and its derivatives with respect to the two cell vectors.
pub fn solid_flux_with_jacobian(
    left: &[f64],
    right: &[f64],
    dx: f64,
    params: &ModelParams,
) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = left.len();
    let kbar = params.kappa_bar(Phase::Solid);
    let kmin = params.kappa_min(Phase::Solid);
    let grads: Vec<(f64, f64, f64)> =
        left.iter().zip(right).map(|(a, b)| log_mean_with_grad(*a, *b)).collect();
    let u: Vec<f64> = grads.iter().map(|g| g.0).collect();
    let d: Vec<f64> = right.iter().zip(left).map(|(b, a)| b - a).collect();

    let mut flux = vec![0.0; n];
    // row sums reused by the derivative terms
    let mut sum_ku = vec![0.0; n];
    let mut sum_kd = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            sum_ku[i] += kbar[(i, j)] * u[j];
            sum_kd[i] += kbar[(i, j)] * d[j];
        }
        flux[i] = -(kmin * d[i] + sum_ku[i] * d[i] - u[i] * sum_kd[i]) / dx;
    }

    let mut dl = DMatrix::zeros(n, n);
    let mut dr = DMatrix::zeros(n, n);
    for i in 0..n {
        for m in 0..n {
            let delta = if i == m { 1.0 } else { 0.0 };
            let kim = if i == m { 0.0 } else { kbar[(i, m)] };
            let db_da = -kmin * delta - delta * sum_ku[i] + kim * grads[m].1 * d[i]
                - delta * grads[i].1 * sum_kd[i]
                + kim * u[i];
            let db_db = kmin * delta + delta * sum_ku[i] + kim * grads[m].2 * d[i]
                - delta * grads[i].2 * sum_kd[i]
                - kim * u[i];
            dl[(i, m)] = -db_da / dx;
            dr[(i, m)] = -db_db / dx;
        }
    }
    (flux, dl, dr)
}

/// Gas TPFA flux across an edge, defined implicitly by the linear system
/// `dx (kappa_min I + A_bar_g(u)) J = -(right - left)`.
pub fn gas_flux(left: &[f64], right: &[f64], dx: f64, params: &ModelParams) -> Result<Vec<f64>> {
    let u: Vec<f64> = left.iter().zip(right).map(|(a, b)| log_mean(*a, *b)).collect();
    let m = params.gas_flux_system_matrix(&u);
    let rhs = DVector::from_iterator(left.len(), right.iter().zip(left).map(|(b, a)| -(b - a) / dx));
    m.lu()
        .solve(&rhs)
        .map(|j| j.iter().copied().collect())
        .ok_or_else(|| Error::Numerical("singular gas flux system".into()))
}

/// Gas flux and its derivatives with respect to the two cell vectors.
pub fn gas_flux_with_jacobian(
    left: &[f64],
    right: &[f64],
    dx: f64,
    params: &ModelParams,
) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = left.len();
    let kbar = params.kappa_bar(Phase::Gas);
    let grads: Vec<(f64, f64, f64)> =
        left.iter().zip(right).map(|(a, b)| log_mean_with_grad(*a, *b)).collect();
    let u: Vec<f64> = grads.iter().map(|g| g.0).collect();
    let sys = params.gas_flux_system_matrix(&u);
    let lu = sys.lu();
    let rhs = DVector::from_iterator(n, right.iter().zip(left).map(|(b, a)| -(b - a) / dx));
    let j = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular gas flux system".into()))?;

    // d/du_m of the system matrix applied to J: row m collects -kbar_ms J_s,
    // every other row r only its diagonal contribution kbar_rm J_r.
    let mut dl = DMatrix::zeros(n, n);
    let mut dr = DMatrix::zeros(n, n);
    let mut em_j = DVector::zeros(n);
    for m in 0..n {
        for r in 0..n {
            em_j[r] = if r == m {
                -(0..n).filter(|s| *s != m).map(|s| kbar[(m, s)] * j[s]).sum::<f64>()
            } else {
                kbar[(r, m)] * j[r]
            };
        }
        let mut rhs_a = -&em_j * grads[m].1;
        rhs_a[m] += 1.0 / dx;
        let col_a = lu
            .solve(&rhs_a)
            .ok_or_else(|| Error::Numerical("singular gas flux system".into()))?;
        let mut rhs_b = -&em_j * grads[m].2;
        rhs_b[m] -= 1.0 / dx;
        let col_b = lu
            .solve(&rhs_b)
            .ok_or_else(|| Error::Numerical("singular gas flux system".into()))?;
        for i in 0..n {
            dl[(i, m)] = col_a[i];
            dr[(i, m)] = col_b[i];
        }
    }
    Ok((j.iter().copied().collect(), dl, dr))
}

/// Truncated interface fluxes and the two one-sided bulk closures.
#[derive(Debug, Clone)]
pub struct InterfaceFlux {
    /// `F~_i = sqrt(beta_i) right_i^diamond - left_i^diamond / sqrt(beta_i)`.
    pub f_tilde: Vec<f64>,
    /// Solid-side closure `-(sum_i left_i) F~`.
    pub j_solid: Vec<f64>,
    /// Gas-side closure `-(sum_i right_i) F~`.
    pub j_gas: Vec<f64>,
}

/// Interface flux at the solid/gas edge; `left` is the solid cut cell,
/// `right` the gas cut cell. On admissible cells both closures coincide and
/// the truncation is the identity.
pub fn interface_flux(left: &[f64], right: &[f64], params: &ModelParams) -> InterfaceFlux {
    let ds = diamond(left);
    let dg = diamond(right);
    let sb = params.sqrt_beta();
    let f_tilde: Vec<f64> = (0..left.len()).map(|i| sb[i] * dg[i] - ds[i] / sb[i]).collect();
    let sum_left: f64 = left.iter().sum();
    let sum_right: f64 = right.iter().sum();
    let j_solid = f_tilde.iter().map(|f| -sum_left * f).collect();
    let j_gas = f_tilde.iter().map(|f| -sum_right * f).collect();
    InterfaceFlux { f_tilde, j_solid, j_gas }
}

/// Derivatives of the truncated interface flux:
/// `(dF~/dleft, dF~/dright)`.
pub fn interface_flux_jacobian(
    left: &[f64],
    right: &[f64],
    params: &ModelParams,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = left.len();
    let js = diamond_jacobian(left);
    let jg = diamond_jacobian(right);
    let sb = params.sqrt_beta();
    let mut dfl = DMatrix::zeros(n, n);
    let mut dfr = DMatrix::zeros(n, n);
    for i in 0..n {
        for m in 0..n {
            dfl[(i, m)] = -js[(i, m)] / sb[i];
            dfr[(i, m)] = sb[i] * jg[(i, m)];
        }
    }
    (dfl, dfr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn kappa3(k12: f64, k13: f64, k23: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.0, k12, k13, k12, 0.0, k23, k13, k23, 0.0])
    }

    fn params() -> ModelParams {
        ModelParams::from_beta(kappa3(0.2, 1.0, 0.1), kappa3(0.2, 1.0, 0.1), &[1.0 / 6.0, 4.0, 4.0]).unwrap()
    }

    #[test]
    fn log_mean_values() {
        assert_eq!(log_mean(0.3, 0.3), 0.3);
        assert_relative_eq!(log_mean(1.0, std::f64::consts::E), std::f64::consts::E - 1.0, epsilon = 1e-12);
        assert_eq!(log_mean(0.5, -0.1), 0.0);
        assert_eq!(log_mean(0.0, 0.7), 0.0);
        // symmetry and betweenness
        assert_relative_eq!(log_mean(0.2, 0.9), log_mean(0.9, 0.2), epsilon = 1e-15);
        let v = log_mean(0.2, 0.9);
        assert!(v > 0.2 && v < 0.9);
    }

    #[test]
    fn log_mean_branch_continuity() {
        // the stable quotient matches the series expansion for any small
        // spread, so there is no branch jump anywhere near a == b
        let a = 0.37;
        for eps in [1e-13, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4] {
            let b = a * (1.0 + eps);
            let v = log_mean(a, b);
            let expect = a * (1.0 + 0.5 * eps - eps * eps / 12.0);
            assert_relative_eq!(v, expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn log_mean_chain_rule() {
        for (a, b) in [(0.1, 0.9), (0.4, 0.41), (1e-6, 0.2), (0.73, 0.73001)] {
            let v = log_mean(a, b);
            assert_relative_eq!(v * (a.ln() - b.ln()), a - b, max_relative = 1e-12);
        }
    }

    #[test]
    fn log_mean_gradient_matches_fd() {
        let h = 1e-7;
        for (a, b) in [(0.3, 0.8), (0.5, 0.500001), (0.05, 0.9)] {
            let (_, da, db) = log_mean_with_grad(a, b);
            let fa = (log_mean(a + h, b) - log_mean(a - h, b)) / (2.0 * h);
            let fb = (log_mean(a, b + h) - log_mean(a, b - h)) / (2.0 * h);
            assert_relative_eq!(da, fa, max_relative = 1e-6);
            assert_relative_eq!(db, fb, max_relative = 1e-6);
        }
    }

    #[test]
    fn diamond_examples() {
        let x = [0.2, 0.3, 0.5];
        assert_eq!(diamond(&x), x.to_vec());
        let y = diamond(&[-0.1, 0.6, 0.5]);
        assert_relative_eq!(y[0], 0.0);
        assert_relative_eq!(y[1], 6.0 / 11.0, epsilon = 1e-15);
        assert_relative_eq!(y[2], 5.0 / 11.0, epsilon = 1e-15);
        assert_eq!(diamond(&[-1.0, 0.0, -0.3]), vec![0.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn diamond_properties(x in proptest::collection::vec(-2.0f64..2.0, 2..6)) {
            let d = diamond(&x);
            // (P1) entries in [0,1]
            prop_assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(d.iter().sum::<f64>() <= 1.0 + 1e-12);
        }

        #[test]
        fn diamond_fixes_admissible(mut x in proptest::collection::vec(1e-3f64..1.0, 3)) {
            let s: f64 = x.iter().sum();
            x.iter_mut().for_each(|v| *v /= s);
            let d = diamond(&x);
            // (P2) admissible vectors are fixed
            for (a, b) in d.iter().zip(&x) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }

        #[test]
        fn diamond_zero_pattern_on_unit_sum(raw in proptest::collection::vec(-1.0f64..1.0, 3)) {
            // force sum to one while keeping signs of the first entries
            let mut x = raw.clone();
            let partial: f64 = x[..2].iter().sum();
            x[2] = 1.0 - partial;
            let d = diamond(&x);
            // (P3) on unit-sum inputs: zero iff nonpositive
            for i in 0..3 {
                if x[i] <= 0.0 {
                    prop_assert_eq!(d[i], 0.0);
                } else {
                    prop_assert!(d[i] > 0.0);
                }
            }
        }
    }

    #[test]
    fn diamond_jacobian_matches_fd_off_kink() {
        let h = 1e-7;
        for x in [vec![0.4, 0.8, 0.3], vec![0.1, 0.2, 0.3], vec![-0.2, 0.9, 0.6]] {
            let jac = diamond_jacobian(&x);
            for m in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[m] += h;
                xm[m] -= h;
                let dp = diamond(&xp);
                let dm = diamond(&xm);
                for i in 0..3 {
                    let fd = (dp[i] - dm[i]) / (2.0 * h);
                    assert_relative_eq!(jac[(i, m)], fd, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn diamond_jacobian_on_kink_is_branch_average() {
        // admissible input sits exactly on the normalization kink; the
        // generalized Jacobian must match a central difference quotient.
        let x = [0.25, 0.35, 0.4];
        let jac = diamond_jacobian(&x);
        let h = 1e-6;
        for m in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[m] += h;
            xm[m] -= h;
            let dp = diamond(&xp);
            let dm = diamond(&xm);
            for i in 0..3 {
                let fd = (dp[i] - dm[i]) / (2.0 * h);
                assert_relative_eq!(jac[(i, m)], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn solid_flux_basics() {
        let p = params();
        let c = [0.2, 0.3, 0.5];
        let f = solid_flux(&c, &c, 0.1, &p);
        assert!(f.iter().all(|v| v.abs() < 1e-15));

        // admissible pair: species sum of the flux vanishes
        let a = [0.2, 0.3, 0.5];
        let b = [0.4, 0.25, 0.35];
        let f = solid_flux(&a, &b, 0.1, &p);
        assert!(f.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn solid_flux_without_excess_is_plain_diffusion() {
        let k2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.3, 0.0]);
        let p2 = ModelParams::new(k2.clone(), k2, vec![0.0; 2], vec![0.0; 2]).unwrap();
        let a = [0.3, 0.7];
        let b = [0.5, 0.5];
        let f = solid_flux(&a, &b, 0.25, &p2);
        for i in 0..2 {
            assert_relative_eq!(f[i], -0.3 * (b[i] - a[i]) / 0.25, epsilon = 1e-14);
        }
    }

    #[test]
    fn solid_flux_sign_at_zero_minimum() {
        // left_i = 0 is a global minimum: outgoing flux for that species
        // cannot be positive into the zero cell (J_i <= 0 with D_i >= 0).
        let p = params();
        let left = [0.0, 0.55, 0.45];
        let right = [0.2, 0.43, 0.37];
        let f = solid_flux(&left, &right, 0.1, &p);
        assert!(f[0] <= 0.0);
    }

    #[test]
    fn solid_flux_mobility_form() {
        let p = params();
        let a = [0.2, 0.3, 0.5];
        let b = [0.4, 0.25, 0.35];
        let dx = 0.05;
        let f = solid_flux(&a, &b, dx, &p);
        let edge = EdgeState::new(&a, &b);
        let m = p.mobility(&edge.edge_conc, Phase::Solid).unwrap();
        let dlog = DVector::from_iterator(3, (0..3).map(|i| b[i].ln() - a[i].ln()));
        let alt = -(m * dlog) / dx;
        for i in 0..3 {
            assert_relative_eq!(f[i], alt[i], max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn gas_flux_basics() {
        let p = params();
        let c = [0.2, 0.3, 0.5];
        let f = gas_flux(&c, &c, 0.1, &p).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-15));

        let a = [0.2, 0.3, 0.5];
        let b = [0.4, 0.25, 0.35];
        let f = gas_flux(&a, &b, 0.1, &p).unwrap();
        assert!(f.iter().sum::<f64>().abs() < 1e-12);

        // linear system residual
        let edge = EdgeState::new(&a, &b);
        let m = p.gas_flux_system_matrix(&edge.edge_conc);
        let jv = DVector::from_vec(f.clone());
        let rhs = DVector::from_iterator(3, (0..3).map(|i| -(b[i] - a[i]) / 0.1));
        let res = (m * jv - rhs).norm();
        assert!(res < 1e-12 * (1.0 + f.iter().map(|v| v.abs()).fold(0.0, f64::max)));
    }

    #[test]
    fn gas_flux_without_excess_is_inverse_diffusion() {
        let k2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.3, 0.0]);
        let p2 = ModelParams::new(k2.clone(), k2, vec![0.0; 2], vec![0.0; 2]).unwrap();
        let a = [0.3, 0.7];
        let b = [0.5, 0.5];
        let f = gas_flux(&a, &b, 0.25, &p2).unwrap();
        for i in 0..2 {
            assert_relative_eq!(f[i], -(b[i] - a[i]) / (0.25 * 0.3), epsilon = 1e-13);
        }
    }

    #[test]
    fn gas_flux_mobility_form() {
        let p = params();
        let a = [0.15, 0.35, 0.5];
        let b = [0.3, 0.28, 0.42];
        let dx = 0.02;
        let f = gas_flux(&a, &b, dx, &p).unwrap();
        let edge = EdgeState::new(&a, &b);
        let m = p.mobility(&edge.edge_conc, Phase::Gas).unwrap();
        let dlog = DVector::from_iterator(3, (0..3).map(|i| b[i].ln() - a[i].ln()));
        let alt = -(m * dlog) / dx;
        for i in 0..3 {
            assert_relative_eq!(f[i], alt[i], max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn interface_flux_examples() {
        let k = kappa3(0.2, 1.0, 0.1);
        let p1 = ModelParams::new(k.clone(), k, vec![0.0; 3], vec![0.0; 3]).unwrap();
        let c = [0.2, 0.3, 0.5];
        let f = interface_flux(&c, &c, &p1);
        assert!(f.f_tilde.iter().all(|v| v.abs() < 1e-15));
        assert!(f.j_solid.iter().all(|v| v.abs() < 1e-15));

        let p = params();
        let a = [0.25, 0.35, 0.4];
        let b = [0.6, 0.15, 0.25];
        let f = interface_flux(&a, &b, &p);
        for i in 0..3 {
            assert_relative_eq!(f.j_solid[i], f.j_gas[i], epsilon = 1e-15);
            let bound = 2.0 * (0.5 * p.beta_star()[i].ln()).cosh();
            assert!(f.f_tilde[i].abs() <= bound + 1e-14);
        }
    }

    proptest! {
        #[test]
        fn interface_flux_uniform_bound(
            a in proptest::collection::vec(-0.5f64..1.5, 3),
            b in proptest::collection::vec(-0.5f64..1.5, 3),
        ) {
            // the truncation keeps the bound valid for arbitrary inputs
            let p = params();
            let f = interface_flux(&a, &b, &p);
            for i in 0..3 {
                let bound = 2.0 * (0.5 * p.beta_star()[i].ln()).cosh();
                prop_assert!(f.f_tilde[i].abs() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn bulk_flux_jacobians_match_fd() {
        let p = params();
        let a = [0.21, 0.33, 0.46];
        let b = [0.38, 0.27, 0.35];
        let dx = 0.04;
        let h = 1e-7;

        let (f0, dl, dr) = solid_flux_with_jacobian(&a, &b, dx, &p);
        assert_eq!(f0, solid_flux(&a, &b, dx, &p));
        let (g0, gl, gr) = gas_flux_with_jacobian(&a, &b, dx, &p).unwrap();
        assert_eq!(g0, gas_flux(&a, &b, dx, &p).unwrap());

        for m in 0..3 {
            let mut ap = a;
            let mut am = a;
            ap[m] += h;
            am[m] -= h;
            let fp = solid_flux(&ap, &b, dx, &p);
            let fm = solid_flux(&am, &b, dx, &p);
            let gp = gas_flux(&ap, &b, dx, &p).unwrap();
            let gm = gas_flux(&am, &b, dx, &p).unwrap();
            for i in 0..3 {
                assert_relative_eq!(dl[(i, m)], (fp[i] - fm[i]) / (2.0 * h), max_relative = 1e-5, epsilon = 1e-7);
                assert_relative_eq!(gl[(i, m)], (gp[i] - gm[i]) / (2.0 * h), max_relative = 1e-5, epsilon = 1e-7);
            }

            let mut bp = b;
            let mut bm = b;
            bp[m] += h;
            bm[m] -= h;
            let fp = solid_flux(&a, &bp, dx, &p);
            let fm = solid_flux(&a, &bm, dx, &p);
            let gp = gas_flux(&a, &bp, dx, &p).unwrap();
            let gm = gas_flux(&a, &bm, dx, &p).unwrap();
            for i in 0..3 {
                assert_relative_eq!(dr[(i, m)], (fp[i] - fm[i]) / (2.0 * h), max_relative = 1e-5, epsilon = 1e-7);
                assert_relative_eq!(gr[(i, m)], (gp[i] - gm[i]) / (2.0 * h), max_relative = 1e-5, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn every_flux_species_sum_vanishes_on_admissible_edges() {
        let p = params();
        let a = [0.18, 0.41, 0.41];
        let b = [0.33, 0.22, 0.45];
        let dx = 0.01;
        let fs = solid_flux(&a, &b, dx, &p);
        let fg = gas_flux(&a, &b, dx, &p).unwrap();
        let fi = interface_flux(&a, &b, &p);
        assert!(fs.iter().sum::<f64>().abs() < 1e-12 / dx);
        assert!(fg.iter().sum::<f64>().abs() < 1e-12 / dx);
        // interface: species sum of each side closure equals -(sum c)(sum F)
        let sum_f: f64 = fi.f_tilde.iter().sum();
        assert_relative_eq!(fi.j_solid.iter().sum::<f64>(), -sum_f, epsilon = 1e-14);
        assert_relative_eq!(fi.j_gas.iter().sum::<f64>(), -sum_f, epsilon = 1e-14);
    }
}
