//! Model parameters, thermodynamic functions and diffusion/mobility matrices.
//!
//! Everything here is a pure function of its inputs; a [`ModelParams`] value is
//! immutable after construction and safe to share across threads.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Tolerance used when flagging a composition as admissible (sum equal to one).
pub const ADMISSIBLE_TOL: f64 = 1e-12;

/// Which side of the interface a quantity lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Solid,
    Gas,
}

/// Per-cell concentration vector with validated invariants.
///
/// `new` only checks nonnegativity; `admissible` additionally requires the
/// entries to sum to one within [`ADMISSIBLE_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct Composition(Vec<f64>);

impl Composition {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!("composition has a negative or non-finite entry: {c:?}")));
        }
        Ok(Self(c))
    }

    pub fn admissible(c: Vec<f64>) -> Result<Self> {
        let s: f64 = c.iter().sum();
        if (s - 1.0).abs() > ADMISSIBLE_TOL {
            return Err(Error::Domain(format!("composition entries sum to {s}, not 1")));
        }
        Self::new(c)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_admissible(&self) -> bool {
        (self.0.iter().sum::<f64>() - 1.0).abs() <= ADMISSIBLE_TOL
    }
}

/// Immutable model description: cross-diffusion coefficients of both phases,
/// reference chemical potentials and quantities derived from them.
#[derive(Debug, Clone)]
pub struct ModelParams {
    n: usize,
    kappa_s: DMatrix<f64>,
    kappa_g: DMatrix<f64>,
    mu_star_s: Vec<f64>,
    mu_star_g: Vec<f64>,
    /// `beta[i] = exp(mu_star_g[i] - mu_star_s[i])`, cached.
    beta_star: Vec<f64>,
    sqrt_beta: Vec<f64>,
    kappa_min_s: f64,
    kappa_min_g: f64,
    kappa_bar_s: DMatrix<f64>,
    kappa_bar_g: DMatrix<f64>,
}

fn validate_kappa(kappa: &DMatrix<f64>, n: usize, which: &str) -> Result<f64> {
    if kappa.nrows() != n || kappa.ncols() != n {
        return Err(Error::Config(format!("{which} must be {n}x{n}, got {}x{}", kappa.nrows(), kappa.ncols())));
    }
    let mut min_off = f64::INFINITY;
    for i in 0..n {
        if kappa[(i, i)] != 0.0 {
            return Err(Error::Config(format!("{which} must have zero diagonal, entry ({i},{i}) = {}", kappa[(i, i)])));
        }
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = kappa[(i, j)];
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{which} off-diagonal entries must be positive, entry ({i},{j}) = {v}")));
            }
            if (v - kappa[(j, i)]).abs() > 1e-12 * v.abs().max(1.0) {
                return Err(Error::Config(format!("{which} must be symmetric, entries ({i},{j}) and ({j},{i}) differ")));
            }
            min_off = min_off.min(v);
        }
    }
    Ok(min_off)
}

impl ModelParams {
    /// Build parameters from coefficient matrices and reference potentials.
    pub fn new(
        kappa_s: DMatrix<f64>,
        kappa_g: DMatrix<f64>,
        mu_star_s: Vec<f64>,
        mu_star_g: Vec<f64>,
    ) -> Result<Self> {
        let n = mu_star_s.len();
        if n < 2 {
            return Err(Error::Config(format!("at least two species required, got {n}")));
        }
        if mu_star_g.len() != n {
            return Err(Error::Config("mu_star_s and mu_star_g must have the same length".into()));
        }
        let kappa_min_s = validate_kappa(&kappa_s, n, "kappa_s")?;
        let kappa_min_g = validate_kappa(&kappa_g, n, "kappa_g")?;
        let beta_star: Vec<f64> = (0..n).map(|i| (mu_star_g[i] - mu_star_s[i]).exp()).collect();
        if beta_star.iter().any(|b| !b.is_finite() || *b <= 0.0) {
            return Err(Error::Config("reference potentials produce a non-positive or overflowing beta".into()));
        }
        let sqrt_beta = beta_star.iter().map(|b| b.sqrt()).collect();
        let mut kappa_bar_s = kappa_s.clone();
        let mut kappa_bar_g = kappa_g.clone();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    kappa_bar_s[(i, j)] -= kappa_min_s;
                    kappa_bar_g[(i, j)] -= kappa_min_g;
                }
            }
        }
        Ok(Self {
            n,
            kappa_s,
            kappa_g,
            mu_star_s,
            mu_star_g,
            beta_star,
            sqrt_beta,
            kappa_min_s,
            kappa_min_g,
            kappa_bar_s,
            kappa_bar_g,
        })
    }

    /// Build parameters from interface equilibrium ratios instead of explicit
    /// reference potentials: `mu_star_s = 0`, `mu_star_g = ln(beta)`.
    pub fn from_beta(kappa_s: DMatrix<f64>, kappa_g: DMatrix<f64>, beta: &[f64]) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite() || *b <= 0.0) {
            return Err(Error::Config(format!("beta entries must be positive, got {beta:?}")));
        }
        let mu_g: Vec<f64> = beta.iter().map(|b| b.ln()).collect();
        let params = Self::new(kappa_s, kappa_g, vec![0.0; beta.len()], mu_g)?;
        // ln/exp round trip must reproduce the requested ratios.
        for (a, b) in params.beta_star.iter().zip(beta) {
            debug_assert!((a - b).abs() <= 1e-14 * b.abs());
        }
        Ok(params)
    }

    /// Check externally supplied equilibrium ratios against the potentials.
    pub fn check_beta_consistency(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.n {
            return Err(Error::Usage("beta length mismatch".into()));
        }
        for i in 0..self.n {
            let expect = self.beta_star[i];
            if (beta[i] - expect).abs() > 1e-14 * expect.abs().max(1.0) {
                return Err(Error::Config(format!(
                    "beta[{i}] = {} inconsistent with reference potentials (expected {expect})",
                    beta[i]
                )));
            }
        }
        Ok(())
    }

    pub fn n_species(&self) -> usize {
        self.n
    }

    pub fn beta_star(&self) -> &[f64] {
        &self.beta_star
    }

    pub fn sqrt_beta(&self) -> &[f64] {
        &self.sqrt_beta
    }

    pub fn mu_star(&self, phase: Phase) -> &[f64] {
        match phase {
            Phase::Solid => &self.mu_star_s,
            Phase::Gas => &self.mu_star_g,
        }
    }

    /// Jump of the reference potentials, `mu_star_g[i] - mu_star_s[i]`.
    pub fn mu_star_jump(&self, i: usize) -> f64 {
        self.mu_star_g[i] - self.mu_star_s[i]
    }

    pub fn kappa(&self, phase: Phase) -> &DMatrix<f64> {
        match phase {
            Phase::Solid => &self.kappa_s,
            Phase::Gas => &self.kappa_g,
        }
    }

    /// Smallest off-diagonal coefficient of the phase (`kappa^{*,alpha}`).
    pub fn kappa_min(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Solid => self.kappa_min_s,
            Phase::Gas => self.kappa_min_g,
        }
    }

    /// Excess coefficients `kappa - kappa_min` (zero diagonal, >= 0).
    pub fn kappa_bar(&self, phase: Phase) -> &DMatrix<f64> {
        match phase {
            Phase::Solid => &self.kappa_bar_s,
            Phase::Gas => &self.kappa_bar_g,
        }
    }

    /// Friction/diffusion matrix assembled from the full coefficients:
    /// diagonal `sum_{j!=i} kappa_ij u_j`, off-diagonal `-kappa_ij u_i`.
    pub fn diffusion_matrix(&self, u: &[f64], phase: Phase) -> DMatrix<f64> {
        assemble(u, self.kappa(phase))
    }

    /// Same assembly from the excess coefficients.
    pub fn diffusion_matrix_excess(&self, u: &[f64], phase: Phase) -> DMatrix<f64> {
        assemble(u, self.kappa_bar(phase))
    }

    /// Matrix applied to the cell difference in the solid TPFA flux:
    /// excess assembly plus `kappa_min_s` on the diagonal.
    pub fn solid_flux_matrix(&self, u: &[f64]) -> DMatrix<f64> {
        let mut m = self.diffusion_matrix_excess(u, Phase::Solid);
        for i in 0..self.n {
            m[(i, i)] += self.kappa_min_s;
        }
        m
    }

    /// Matrix of the linear system defining the gas TPFA flux:
    /// `kappa_min_g * I` plus the excess assembly.
    pub fn gas_flux_system_matrix(&self, u: &[f64]) -> DMatrix<f64> {
        let mut m = self.diffusion_matrix_excess(u, Phase::Gas);
        for i in 0..self.n {
            m[(i, i)] += self.kappa_min_g;
        }
        m
    }

    /// Modified mobility matrix of the phase evaluated at `u`.
    ///
    /// Solid: `(A_bar_s(u) + kappa_min_s I) diag(u)`. Gas: the columnwise
    /// solve `(kappa_min_g I + A_bar_g(u)) M = diag(u)`; the system matrix is
    /// invertible for nonnegative `u` and a singular factorization is reported
    /// as a numerical error.
    pub fn mobility(&self, u: &[f64], phase: Phase) -> Result<DMatrix<f64>> {
        let diag_u = DMatrix::from_diagonal(&DVector::from_column_slice(u));
        match phase {
            Phase::Solid => Ok(self.solid_flux_matrix(u) * diag_u),
            Phase::Gas => {
                let lu = self.gas_flux_system_matrix(u).lu();
                lu.solve(&diag_u)
                    .ok_or_else(|| Error::Numerical("singular gas flux system in mobility".into()))
            }
        }
    }
}

fn assemble(u: &[f64], coeffs: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            diag += coeffs[(i, j)] * u[j];
            m[(i, j)] = -coeffs[(i, j)] * u[i];
        }
        m[(i, i)] = diag;
    }
    m
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x == 0.0 { 0.0 } else { x * x.ln() }
}

/// Free energy density `h_alpha(c) = sum_i c_i (log c_i + mu_i*) - c_i + 1`,
/// with the convention `0 log 0 = 0`.
pub fn free_energy_density(c: &[f64], phase: Phase, params: &ModelParams) -> Result<f64> {
    let mu_star = params.mu_star(phase);
    let mut h = 0.0;
    for (ci, mi) in c.iter().zip(mu_star) {
        if *ci < 0.0 {
            return Err(Error::Domain(format!("free energy of a negative concentration {ci}")));
        }
        h += xlogx(*ci) + ci * mi - ci + 1.0;
    }
    Ok(h)
}

/// Chemical potentials `mu_i = log c_i + mu_i*`; requires strictly positive `c`.
pub fn chemical_potential(c: &[f64], phase: Phase, params: &ModelParams) -> Result<Vec<f64>> {
    let mu_star = params.mu_star(phase);
    c.iter()
        .zip(mu_star)
        .map(|(ci, mi)| {
            if *ci <= 0.0 {
                Err(Error::Domain(format!("chemical potential of a nonpositive concentration {ci}")))
            } else {
                Ok(ci.ln() + mi)
            }
        })
        .collect()
}

/// Thermodynamic pressure `pi_alpha(c) = c . mu_alpha(c) - h_alpha(c)`.
pub fn pressure(c: &[f64], phase: Phase, params: &ModelParams) -> Result<f64> {
    let mu = chemical_potential(c, phase, params)?;
    let h = free_energy_density(c, phase, params)?;
    Ok(c.iter().zip(&mu).map(|(ci, mi)| ci * mi).sum::<f64>() - h)
}

/// Mass-action interface flux `F_i = sqrt(beta_i) c_i^g - c_i^s / sqrt(beta_i)`.
pub fn butler_volmer_flux(c_s: &[f64], c_g: &[f64], params: &ModelParams) -> Vec<f64> {
    params
        .sqrt_beta()
        .iter()
        .zip(c_s.iter().zip(c_g))
        .map(|(sb, (cs, cg))| sb * cg - cs / sb)
        .collect()
}

/// Interface dissipation potential `phi(x) = 4 (cosh(x/2) - 1)`, evaluated
/// as `8 sinh^2(x/4)` which is the same function without the small-`x`
/// cancellation of `cosh - 1`.
pub fn dissipation_potential(x: f64) -> f64 {
    let s = (0.25 * x).sinh();
    8.0 * s * s
}

/// `phi'(x) = 2 sinh(x/2)`.
pub fn dissipation_potential_deriv(x: f64) -> f64 {
    2.0 * (0.5 * x).sinh()
}

/// Convex conjugate `phi*(z) = 2 z log((z + sqrt(z^2+4))/2) - 2 sqrt(z^2+4) + 4`.
///
/// Evaluated as `2 z asinh(z/2) - 2 z^2 / (2 + sqrt(z^2+4))`: the asinh form
/// of the logarithm survives large `|z|`, and rationalizing
/// `4 - 2 sqrt(z^2+4)` removes the cancellation that would otherwise swamp
/// the `z^2/2` behaviour near zero.
pub fn dual_dissipation_potential(z: f64) -> f64 {
    2.0 * z * (0.5 * z).asinh() - 2.0 * z * z / (2.0 + z.hypot(2.0))
}
