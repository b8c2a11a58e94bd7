//! Stationary states of the coupled model.
//!
//! A stationary state is uniform per phase, conserves the initial masses
//! `m0_i = X cs_i + (1-X) cg_i`, and (for a genuinely two-phase state) has
//! vanishing interface flux, i.e. `cs_i = beta_i cg_i` componentwise. Whether
//! a two-phase state exists is decided by the weighted-mass condition
//! `min(sum m_i beta_i, sum m_i / beta_i) > 1`; when it holds, the interface
//! position is the unique interior root of [`phi_of_x`].

use crate::field::Field;
use crate::mesh::MovingMesh;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StationaryKind {
    PureSolid,
    PureGas,
    TwoPhase,
    IndistinguishableFamily,
}

/// One stationary state: constant compositions per phase and the interface
/// position. Pure states put the zero vector in the vanished phase.
#[derive(Debug, Clone)]
pub struct StationaryState {
    pub kind: StationaryKind,
    pub c_s: Vec<f64>,
    pub c_g: Vec<f64>,
    pub x: f64,
}

impl StationaryState {
    /// `X cs_i + (1-X) cg_i`, which must reproduce the initial masses.
    pub fn mass(&self) -> Vec<f64> {
        self.c_s
            .iter()
            .zip(&self.c_g)
            .map(|(s, g)| self.x * s + (1.0 - self.x) * g)
            .collect()
    }
}

/// Outcome of the stationary-state analysis for given masses and ratios.
#[derive(Debug, Clone)]
pub enum StationaryClassification {
    /// All ratios equal one: a one-parameter family `(m0, m0, X)`, `X` free.
    IndistinguishableFamily { composition: Vec<f64> },
    /// The weighted-mass condition holds: a unique interior state.
    TwoPhase(StationaryState),
    /// Only the trivial pure states `(m0, 0, 1)` and `(0, m0, 0)` exist.
    PureOnly { solid: StationaryState, gas: StationaryState },
}

/// Species masses of a discrete field, `m_i = sum_K width_K c_{i,K}`.
pub fn initial_mass(field: &Field, mesh: &MovingMesh) -> Vec<f64> {
    let mut m = vec![0.0; field.n_species()];
    for k in 0..field.n_cells() {
        let w = mesh.width(k);
        for (mi, ci) in m.iter_mut().zip(field.cell(k)) {
            *mi += w * ci;
        }
    }
    m
}

/// Two-phase existence condition `min(sum m b, sum m / b) > 1`.
pub fn two_phase_condition(m0: &[f64], beta: &[f64]) -> Result<bool> {
    if m0.iter().any(|m| *m <= 0.0) {
        return Err(Error::Domain(format!("all species masses must be positive, got {m0:?}")));
    }
    let sum_mb: f64 = m0.iter().zip(beta).map(|(m, b)| m * b).sum();
    let sum_mob: f64 = m0.iter().zip(beta).map(|(m, b)| m / b).sum();
    Ok(sum_mb.min(sum_mob) > 1.0)
}

/// `phi(x) = sum_i m_i / (beta_i x + 1 - x) - 1`; its interior zero is the
/// stationary interface position.
pub fn phi_of_x(x: f64, m0: &[f64], beta: &[f64]) -> Result<f64> {
    let mut acc = -1.0;
    for (m, b) in m0.iter().zip(beta) {
        let denom = b * x + (1.0 - x);
        if denom <= 0.0 {
            return Err(Error::Domain(format!("nonpositive denominator at x = {x}, beta = {b}")));
        }
        acc += m / denom;
    }
    Ok(acc)
}

/// Exact derivative `phi'(x) = -sum_i (beta_i - 1) m_i / (beta_i x + 1 - x)^2`.
pub fn phi_prime_of_x(x: f64, m0: &[f64], beta: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for (m, b) in m0.iter().zip(beta) {
        let denom = b * x + (1.0 - x);
        if denom <= 0.0 {
            return Err(Error::Domain(format!("nonpositive denominator at x = {x}, beta = {b}")));
        }
        acc -= (b - 1.0) * m / (denom * denom);
    }
    Ok(acc)
}

const ROOT_BRACKET_EPS: f64 = 1e-12;
const ROOT_TOL: f64 = 1e-14;

/// Classify and compute the stationary states for masses `m0` and ratios
/// `beta`.
///
/// Requires positive masses summing to one (up to roundoff). The root solve
/// is Newton with a bisection safeguard on `[eps, 1-eps]`; the function is
/// strictly convex with a sign change, so the bracket never collapses.
pub fn solve_stationary(m0: &[f64], beta: &[f64]) -> Result<StationaryClassification> {
    if m0.len() != beta.len() {
        return Err(Error::Usage("masses and ratios must have the same length".into()));
    }
    if m0.iter().any(|m| *m <= 0.0) {
        return Err(Error::Domain(format!("all species masses must be positive, got {m0:?}")));
    }
    let total: f64 = m0.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::Domain(format!("species masses must sum to 1, got {total}")));
    }

    if beta.iter().all(|b| *b == 1.0) {
        return Ok(StationaryClassification::IndistinguishableFamily { composition: m0.to_vec() });
    }

    if !two_phase_condition(m0, beta)? {
        let n = m0.len();
        return Ok(StationaryClassification::PureOnly {
            solid: StationaryState {
                kind: StationaryKind::PureSolid,
                c_s: m0.to_vec(),
                c_g: vec![0.0; n],
                x: 1.0,
            },
            gas: StationaryState {
                kind: StationaryKind::PureGas,
                c_s: vec![0.0; n],
                c_g: m0.to_vec(),
                x: 0.0,
            },
        });
    }

    // phi(0) = 0 with phi'(0) < 0 and phi(1) > 0: bracket the interior root.
    let mut lo = ROOT_BRACKET_EPS;
    let mut hi = 1.0 - ROOT_BRACKET_EPS;
    let mut x = 0.5;
    let mut converged = false;
    for _ in 0..200 {
        let f = phi_of_x(x, m0, beta)?;
        if f.abs() <= ROOT_TOL {
            converged = true;
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let fp = phi_prime_of_x(x, m0, beta)?;
        let mut next = x - f / fp;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        x = next;
    }
    if !converged {
        return Err(Error::Numerical("stationary interface root solve did not converge".into()));
    }

    let c_g: Vec<f64> = m0.iter().zip(beta).map(|(m, b)| m / (b * x + (1.0 - x))).collect();
    let c_s: Vec<f64> = c_g.iter().zip(beta).map(|(g, b)| b * g).collect();
    Ok(StationaryClassification::TwoPhase(StationaryState {
        kind: StationaryKind::TwoPhase,
        c_s,
        c_g,
        x,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::discretize_initial;
    use approx::assert_relative_eq;

    const M0: [f64; 3] = [0.25, 0.25, 0.5];

    #[test]
    fn initial_mass_examples() {
        let mesh = MovingMesh::two_phase(10, 0.51).unwrap();
        let f = discretize_initial(|_| vec![0.2, 0.3, 0.5], &mesh);
        let m = initial_mass(&f, &mesh);
        assert_relative_eq!(m[0], 0.2, epsilon = 1e-14);
        assert_relative_eq!(m[1], 0.3, epsilon = 1e-14);
        assert_relative_eq!(m[2], 0.5, epsilon = 1e-14);

        // cosine data integrates to (1/4, 1/4, 1/2) under refinement
        let profile = |x: f64| {
            let c1 = 0.25 * (1.0 + (std::f64::consts::PI * x).cos());
            vec![c1, c1, 1.0 - 2.0 * c1]
        };
        let mut prev_err = f64::INFINITY;
        for n in [10, 40, 160] {
            let mesh = MovingMesh::two_phase(n, 0.51).unwrap();
            let f = discretize_initial(profile, &mesh);
            let m = initial_mass(&f, &mesh);
            let err = (m[0] - 0.25).abs().max((m[2] - 0.5).abs());
            assert!(err <= prev_err + 1e-13);
            prev_err = err;
            assert_relative_eq!(m.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        assert!(prev_err <= 1e-10);

        // single cell of width 1 returns its composition
        let mesh1 = MovingMesh::pinned(1, crate::model::Phase::Gas);
        let f1 = Field::from_cells(&[vec![0.4, 0.6]]);
        let m1 = initial_mass(&f1, &mesh1);
        assert_eq!(m1, vec![0.4, 0.6]);
    }

    #[test]
    fn condition_examples() {
        assert!(two_phase_condition(&M0, &[1.0 / 6.0, 4.0, 4.0]).unwrap());
        assert!(!two_phase_condition(&M0, &[1.0, 1.0, 1.0]).unwrap());
        assert!(!two_phase_condition(&M0, &[2.0, 2.0, 2.0]).unwrap());
        assert!(two_phase_condition(&[-0.1, 0.6, 0.5], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn phi_basics() {
        let beta = [1.0 / 6.0, 4.0, 4.0];
        assert_relative_eq!(phi_of_x(0.0, &M0, &beta).unwrap(), 0.0, epsilon = 1e-15);
        // indistinguishable ratios: phi vanishes identically
        for k in 0..=10 {
            let x = k as f64 / 10.0;
            assert_relative_eq!(phi_of_x(x, &M0, &[1.0; 3]).unwrap(), 0.0, epsilon = 1e-15);
        }
        // derivative against central differences
        let h = 1e-7;
        for k in 1..10 {
            let x = k as f64 / 10.0;
            let fd = (phi_of_x(x + h, &M0, &beta).unwrap() - phi_of_x(x - h, &M0, &beta).unwrap()) / (2.0 * h);
            assert_relative_eq!(phi_prime_of_x(x, &M0, &beta).unwrap(), fd, epsilon = 1e-8);
        }
        // strict convexity when some ratio differs from one
        let values: Vec<f64> =
            (0..=100).map(|k| phi_of_x(k as f64 / 100.0, &M0, &beta).unwrap()).collect();
        for w in values.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] > 0.0);
        }
    }

    /// Plain bisection, independent of the production root solve.
    fn bisect_root(m0: &[f64], beta: &[f64]) -> f64 {
        let mut lo = 1e-12;
        let mut hi = 1.0 - 1e-12;
        assert!(phi_of_x(lo, m0, beta).unwrap() < 0.0);
        assert!(phi_of_x(hi, m0, beta).unwrap() > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi_of_x(mid, m0, beta).unwrap() < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn solve_two_phase_case() {
        let beta = [1.0 / 6.0, 4.0, 4.0];
        let classification = solve_stationary(&M0, &beta).unwrap();
        let state = match classification {
            StationaryClassification::TwoPhase(s) => s,
            other => panic!("expected a two-phase state, got {other:?}"),
        };
        assert!(state.x > 0.0 && state.x < 1.0);
        assert!(phi_of_x(state.x, &M0, &beta).unwrap().abs() <= 1e-14);
        assert_relative_eq!(state.x, bisect_root(&M0, &beta), epsilon = 1e-10);
        assert_relative_eq!(state.c_s.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(state.c_g.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        // zero interface flux and exact mass recovery
        for i in 0..3 {
            assert_relative_eq!(state.c_s[i], beta[i] * state.c_g[i], epsilon = 1e-15);
            assert_relative_eq!(state.mass()[i], M0[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn solve_family_and_pure_cases() {
        match solve_stationary(&M0, &[1.0; 3]).unwrap() {
            StationaryClassification::IndistinguishableFamily { composition } => {
                assert_eq!(composition, M0.to_vec());
            }
            other => panic!("expected the indistinguishable family, got {other:?}"),
        }
        match solve_stationary(&M0, &[2.0, 2.0, 2.0]).unwrap() {
            StationaryClassification::PureOnly { solid, gas } => {
                assert_eq!(solid.x, 1.0);
                assert_eq!(solid.c_s, M0.to_vec());
                assert!(solid.c_g.iter().all(|v| *v == 0.0));
                assert_eq!(gas.x, 0.0);
                assert_eq!(gas.c_g, M0.to_vec());
            }
            other => panic!("expected pure states only, got {other:?}"),
        }
        assert!(solve_stationary(&[0.5, 0.5, 0.5], &[1.0; 3]).is_err());
    }

    #[test]
    fn root_is_unique_on_a_fine_scan() {
        let beta = [1.0 / 6.0, 4.0, 4.0];
        let mut sign_changes = 0;
        let mut prev = phi_of_x(1e-4, &M0, &beta).unwrap();
        for k in 2..10_000 {
            let x = k as f64 / 10_000.0;
            let v = phi_of_x(x, &M0, &beta).unwrap();
            if prev.signum() != v.signum() {
                sign_changes += 1;
            }
            prev = v;
        }
        assert_eq!(sign_changes, 1);
    }
}
