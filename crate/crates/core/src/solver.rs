//! Implicit time stepping for the coupled scheme.
//!
//! Each step solves the nonlinear system whose unknowns are the `N x n` cell
//! concentrations: implicit conservation laws with TPFA bulk fluxes, two
//! one-sided truncated interface closures on the cut cells, and the interface
//! displacement eliminated as an explicit function of the trial state,
//! `X~ = X_old + dt * sum_i F~_i(c)`. Newton iterates with an analytic
//! block-tridiagonal Jacobian (the `X~` dependence only touches the two
//! interface-adjacent cells, so it stays inside the tridiagonal envelope) and
//! stops on the max-norm of the iterate difference. A failed solve halves the
//! step; ten consecutive clean steps double it back up to the configured one.

use nalgebra::{DMatrix, DVector};

use crate::field::Field;
use crate::fluxes::{
    gas_flux_with_jacobian, interface_flux, interface_flux_jacobian, solid_flux_with_jacobian,
};
use crate::mesh::{post_process, MovingMesh, PostProcessOutcome};
use crate::model::{butler_volmer_flux, ModelParams, Phase};
use crate::{Error, Result};

/// Full solver state between accepted steps.
#[derive(Debug, Clone)]
pub struct SimState {
    pub field: Field,
    pub mesh: MovingMesh,
    pub t: f64,
    /// Set once the interface has been pinned to a domain end.
    pub single_phase: Option<Phase>,
}

impl SimState {
    pub fn two_phase(field: Field, mesh: MovingMesh) -> Self {
        Self { field, mesh, t: 0.0, single_phase: None }
    }
}

/// Time-step controls.
#[derive(Debug, Clone)]
pub struct StepperConfig {
    /// Requested (and maximal) time step.
    pub dt_init: f64,
    /// Safety fraction applied to the interface CFL bound, strictly below 1.
    pub cfl_safety: f64,
    /// Newton stopping threshold on the iterate difference max-norm.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Step halvings allowed per step before giving up.
    pub max_halvings: usize,
}

impl StepperConfig {
    pub fn new(dt_init: f64) -> Self {
        Self { dt_init, cfl_safety: 0.9, newton_tol: 1e-12, newton_max_iter: 50, max_halvings: 20 }
    }
}

/// Interface-speed constant `max_i 2 cosh(|log beta_i| / 2)` bounding
/// `|X^p - X^{p-1}| / dt`.
pub fn cfl_constant(params: &ModelParams) -> f64 {
    (0..params.n_species())
        .map(|i| 2.0 * (0.5 * params.mu_star_jump(i)).cosh())
        .fold(f64::NEG_INFINITY, f64::max)
}

struct BlockTridiag {
    diag: Vec<DMatrix<f64>>,
    /// `upper[k] = dR_k / dc_{k+1}`
    upper: Vec<DMatrix<f64>>,
    /// `lower[k] = dR_{k+1} / dc_k`
    lower: Vec<DMatrix<f64>>,
}

struct Assembly {
    residual: Field,
    jacobian: Option<BlockTridiag>,
}

fn assemble(
    c: &Field,
    given: &SimState,
    dt: f64,
    params: &ModelParams,
    with_jacobian: bool,
) -> Result<Assembly> {
    let n_cells = c.n_cells();
    let n = c.n_species();
    let dx = given.mesh.dx();
    let v = given.mesh.interface_index();
    let two_phase = given.single_phase.is_none();
    if two_phase && !(2..n_cells).contains(&v) {
        return Err(Error::Geometry(format!("interface vertex {v} invalid for a two-phase step")));
    }

    let mut residual = Field::zeros(n_cells, n);
    let mut jac = if with_jacobian {
        Some(BlockTridiag {
            diag: (0..n_cells).map(|_| DMatrix::zeros(n, n)).collect(),
            upper: (0..n_cells - 1).map(|_| DMatrix::zeros(n, n)).collect(),
            lower: (0..n_cells - 1).map(|_| DMatrix::zeros(n, n)).collect(),
        })
    } else {
        None
    };

    // Interface quantities; the displacement is an explicit function of the
    // two cut-cell vectors.
    let mut x_tilde = given.mesh.interface_position();
    let mut iface = None;
    if two_phase {
        let fx = interface_flux(c.cell(v - 1), c.cell(v), params);
        let sum_f: f64 = fx.f_tilde.iter().sum();
        x_tilde += dt * sum_f;
        iface = Some(fx);
    }

    // Time terms with the displaced cut-cell widths.
    for k in 0..n_cells {
        let w_old = given.mesh.width(k);
        let w_new = if two_phase && k == v - 1 {
            x_tilde - (v as f64 - 1.0) * dx
        } else if two_phase && k == v {
            (v as f64 + 1.0) * dx - x_tilde
        } else {
            w_old
        };
        if w_new <= 0.0 {
            return Err(Error::Cfl(format!("displaced width of cell {k} is {w_new}")));
        }
        let row = residual.cell_mut(k);
        for i in 0..n {
            row[i] = (w_new * c.get(k, i) - w_old * given.field.get(k, i)) / dt;
        }
        if let Some(j) = jac.as_mut() {
            for i in 0..n {
                j.diag[k][(i, i)] += w_new / dt;
            }
        }
    }

    if let (Some(fx), Some(j)) = (&iface, jac.as_mut()) {
        // d(x_tilde)/dc through the truncated fluxes
        let (dfl, dfr) = interface_flux_jacobian(c.cell(v - 1), c.cell(v), params);
        let col_l: Vec<f64> = (0..n).map(|m| (0..n).map(|i| dfl[(i, m)]).sum()).collect();
        let col_r: Vec<f64> = (0..n).map(|m| (0..n).map(|i| dfr[(i, m)]).sum()).collect();
        let s_s: f64 = c.cell(v - 1).iter().sum();
        let s_g: f64 = c.cell(v).iter().sum();
        for i in 0..n {
            let ci_s = c.get(v - 1, i);
            let ci_g = c.get(v, i);
            for m in 0..n {
                // widths move with x_tilde
                j.diag[v - 1][(i, m)] += ci_s * col_l[m];
                j.upper[v - 1][(i, m)] += ci_s * col_r[m];
                j.diag[v][(i, m)] -= ci_g * col_r[m];
                j.lower[v - 1][(i, m)] -= ci_g * col_l[m];
                // one-sided interface closures
                j.diag[v - 1][(i, m)] += -fx.f_tilde[i] - s_s * dfl[(i, m)];
                j.upper[v - 1][(i, m)] += -s_s * dfr[(i, m)];
                j.diag[v][(i, m)] += fx.f_tilde[i] + s_g * dfr[(i, m)];
                j.lower[v - 1][(i, m)] += s_g * dfl[(i, m)];
            }
        }
    }
    if let Some(fx) = &iface {
        let s_s: f64 = c.cell(v - 1).iter().sum();
        let s_g: f64 = c.cell(v).iter().sum();
        for i in 0..n {
            *residual.cell_mut(v - 1).get_mut(i).unwrap() += -s_s * fx.f_tilde[i];
            *residual.cell_mut(v).get_mut(i).unwrap() += s_g * fx.f_tilde[i];
        }
    }

    // Bulk fluxes on interior edges; edge w separates cells w-1 and w and the
    // interface edge (w == v) is already covered by the closures above.
    for w in 1..n_cells {
        if two_phase && w == v {
            continue;
        }
        let phase = if w < v || !two_phase && given.single_phase == Some(Phase::Solid) {
            Phase::Solid
        } else {
            Phase::Gas
        };
        let left = c.cell(w - 1);
        let right = c.cell(w);
        if with_jacobian {
            let (flux, dl, dr) = match phase {
                Phase::Solid => solid_flux_with_jacobian(left, right, dx, params),
                Phase::Gas => gas_flux_with_jacobian(left, right, dx, params)?,
            };
            for i in 0..n {
                *residual.cell_mut(w - 1).get_mut(i).unwrap() += flux[i];
                *residual.cell_mut(w).get_mut(i).unwrap() -= flux[i];
            }
            let j = jac.as_mut().unwrap();
            j.diag[w - 1] += &dl;
            j.upper[w - 1] += &dr;
            j.lower[w - 1] -= &dl;
            j.diag[w] -= &dr;
        } else {
            let flux = match phase {
                Phase::Solid => crate::fluxes::solid_flux(left, right, dx, params),
                Phase::Gas => crate::fluxes::gas_flux(left, right, dx, params)?,
            };
            for i in 0..n {
                *residual.cell_mut(w - 1).get_mut(i).unwrap() += flux[i];
                *residual.cell_mut(w).get_mut(i).unwrap() -= flux[i];
            }
        }
    }

    Ok(Assembly { residual, jacobian: jac })
}

/// Residual of the implicit step equations at a trial state.
pub fn residual(c_trial: &Field, given: &SimState, dt: f64, params: &ModelParams) -> Result<Field> {
    Ok(assemble(c_trial, given, dt, params, false)?.residual)
}

/// Interface position implied by a trial state, `X_old + dt sum_i F~_i`.
pub fn displaced_interface(c_trial: &Field, given: &SimState, dt: f64, params: &ModelParams) -> f64 {
    let v = given.mesh.interface_index();
    let fx = interface_flux(c_trial.cell(v - 1), c_trial.cell(v), params);
    given.mesh.interface_position() + dt * fx.f_tilde.iter().sum::<f64>()
}

/// Dense analytic Jacobian, for verification against finite differences.
pub fn analytic_jacobian_dense(
    c_trial: &Field,
    given: &SimState,
    dt: f64,
    params: &ModelParams,
) -> Result<DMatrix<f64>> {
    let asm = assemble(c_trial, given, dt, params, true)?;
    let blocks = asm.jacobian.unwrap();
    let n = c_trial.n_species();
    let n_cells = c_trial.n_cells();
    let mut dense = DMatrix::zeros(n_cells * n, n_cells * n);
    for k in 0..n_cells {
        dense.view_mut((k * n, k * n), (n, n)).copy_from(&blocks.diag[k]);
        if k + 1 < n_cells {
            dense.view_mut((k * n, (k + 1) * n), (n, n)).copy_from(&blocks.upper[k]);
            dense.view_mut(((k + 1) * n, k * n), (n, n)).copy_from(&blocks.lower[k]);
        }
    }
    Ok(dense)
}

/// Central finite-difference Jacobian of the residual (testing aid).
pub fn fd_jacobian(
    c_trial: &Field,
    given: &SimState,
    dt: f64,
    params: &ModelParams,
    h: f64,
) -> Result<DMatrix<f64>> {
    let n = c_trial.n_species();
    let n_cells = c_trial.n_cells();
    let mut dense = DMatrix::zeros(n_cells * n, n_cells * n);
    for col in 0..n_cells * n {
        let (k, m) = (col / n, col % n);
        let mut cp = c_trial.clone();
        let mut cm = c_trial.clone();
        cp.set(k, m, cp.get(k, m) + h);
        cm.set(k, m, cm.get(k, m) - h);
        let rp = residual(&cp, given, dt, params)?;
        let rm = residual(&cm, given, dt, params)?;
        for row in 0..n_cells * n {
            let (kk, ii) = (row / n, row % n);
            dense[(row, col)] = (rp.get(kk, ii) - rm.get(kk, ii)) / (2.0 * h);
        }
    }
    Ok(dense)
}

fn solve_block_tridiag(blocks: BlockTridiag, rhs: &Field) -> Result<Field> {
    let n_cells = blocks.diag.len();
    let n = blocks.diag[0].nrows();
    let mut diag = blocks.diag;
    let upper = blocks.upper;
    let lower = blocks.lower;
    let mut r: Vec<DVector<f64>> =
        (0..n_cells).map(|k| DVector::from_column_slice(rhs.cell(k))).collect();

    // forward elimination
    let mut factored: Vec<nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> =
        Vec::with_capacity(n_cells);
    for k in 0..n_cells {
        if k > 0 {
            let w = factored[k - 1]
                .solve(&upper[k - 1])
                .ok_or_else(|| Error::Numerical("singular diagonal block".into()))?;
            let y = factored[k - 1]
                .solve(&r[k - 1])
                .ok_or_else(|| Error::Numerical("singular diagonal block".into()))?;
            diag[k] -= &lower[k - 1] * w;
            let correction = &lower[k - 1] * y;
            r[k] -= correction;
        }
        factored.push(diag[k].clone().lu());
    }

    // back substitution
    let mut x = vec![DVector::zeros(n); n_cells];
    x[n_cells - 1] = factored[n_cells - 1]
        .solve(&r[n_cells - 1])
        .ok_or_else(|| Error::Numerical("singular diagonal block".into()))?;
    for k in (0..n_cells - 1).rev() {
        let rhs_k = &r[k] - &upper[k] * &x[k + 1];
        x[k] = factored[k]
            .solve(&rhs_k)
            .ok_or_else(|| Error::Numerical("singular diagonal block".into()))?;
    }

    let mut out = Field::zeros(n_cells, n);
    for k in 0..n_cells {
        out.cell_mut(k).copy_from_slice(x[k].as_slice());
    }
    Ok(out)
}

/// A converged Newton solve.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub c_star: Field,
    pub iterations: usize,
}

/// Newton iteration on the implicit step equations starting from the
/// previous concentrations; stops when the iterate difference drops below
/// `config.newton_tol` in max-norm. Any assembly or linear-algebra failure is
/// reported as a numerical error so the caller can halve the step.
pub fn newton_solve(
    given: &SimState,
    dt: f64,
    params: &ModelParams,
    config: &StepperConfig,
) -> Result<NewtonOutcome> {
    let mut c = given.field.clone();
    for iter in 1..=config.newton_max_iter {
        let asm = assemble(&c, given, dt, params, true)?;
        if !asm.residual.is_finite() {
            return Err(Error::Numerical("non-finite residual".into()));
        }
        let delta = solve_block_tridiag(asm.jacobian.unwrap(), &asm.residual)?;
        if !delta.is_finite() {
            return Err(Error::Numerical("non-finite Newton increment".into()));
        }
        for (ci, di) in c.as_mut_slice().iter_mut().zip(delta.as_slice()) {
            *ci -= di;
        }
        if delta.norm_inf() <= config.newton_tol {
            return Ok(NewtonOutcome { c_star: c, iterations: iter });
        }
    }
    Err(Error::Numerical(format!(
        "Newton did not reach {} in {} iterations",
        config.newton_tol, config.newton_max_iter
    )))
}

/// Everything one accepted step produces.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: SimState,
    /// Newton root before remapping.
    pub c_star: Field,
    pub x_tilde: f64,
    pub dt_used: f64,
    pub newton_iters: usize,
    pub halvings: usize,
    pub outcome: PostProcessOutcome,
    /// Plain interface flux evaluated at the root (empty in single-phase mode).
    pub f_root: Vec<f64>,
    /// Truncated interface flux at the root; coincides with `f_root` at any
    /// admissible root.
    pub f_tilde_root: Vec<f64>,
}

/// Adaptive stepper owning the halving/doubling bookkeeping.
pub struct Stepper {
    params: ModelParams,
    config: StepperConfig,
    working_dt: f64,
    streak: usize,
}

impl Stepper {
    pub fn new(params: ModelParams, config: StepperConfig) -> Self {
        let working_dt = config.dt_init;
        Self { params, config, working_dt, streak: 0 }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &StepperConfig {
        &self.config
    }

    /// Step bound currently in force (CFL clamp in two-phase mode).
    pub fn dt_bound(&self, state: &SimState) -> f64 {
        if state.single_phase.is_none() {
            let bound = self.config.cfl_safety * state.mesh.dx() / (2.0 * cfl_constant(&self.params));
            self.working_dt.min(bound)
        } else {
            self.working_dt
        }
    }

    /// Advance one accepted step, never beyond `dt_limit`.
    pub fn advance(&mut self, state: &SimState, dt_limit: f64) -> Result<StepResult> {
        let dt_target = self.dt_bound(state).min(dt_limit);
        let mut halvings = 0;
        let (newton, dt_used) = loop {
            let dt_try = dt_target * 0.5f64.powi(halvings as i32);
            match newton_solve(state, dt_try, &self.params, &self.config) {
                Ok(outcome) => break (outcome, dt_try),
                Err(err) => {
                    if halvings >= self.config.max_halvings {
                        return Err(Error::Solver(format!(
                            "step at t = {} failed after {halvings} halvings (dt = {dt_try:.3e}): {err}; \
                             min c = {:.3e}, volume-filling residual = {:.3e}",
                            state.t,
                            state.field.min_entry(),
                            state.field.max_volume_filling_residual(),
                        )));
                    }
                    halvings += 1;
                }
            }
        };

        let c_star = newton.c_star;
        let result = if state.single_phase.is_none() {
            let v = state.mesh.interface_index();
            let fx = interface_flux(c_star.cell(v - 1), c_star.cell(v), &self.params);
            let f_root = butler_volmer_flux(c_star.cell(v - 1), c_star.cell(v), &self.params);
            let x_tilde = state.mesh.interface_position() + dt_used * fx.f_tilde.iter().sum::<f64>();
            let shift = (x_tilde - state.mesh.interface_position()).abs();
            if shift > 0.5 * state.mesh.dx() * (1.0 + 1e-12) {
                return Err(Error::Cfl(format!(
                    "interface moved {shift:.3e} in one step, above dx/2 = {:.3e}",
                    0.5 * state.mesh.dx()
                )));
            }
            let (c_new, mesh_new, outcome) = post_process(&c_star, x_tilde, &state.mesh)?;
            let single_phase = match outcome {
                PostProcessOutcome::Pinned(phase) => Some(phase),
                _ => state.single_phase,
            };
            StepResult {
                state: SimState {
                    field: c_new,
                    mesh: mesh_new,
                    t: state.t + dt_used,
                    single_phase,
                },
                c_star,
                x_tilde,
                dt_used,
                newton_iters: newton.iterations,
                halvings,
                outcome,
                f_root,
                f_tilde_root: fx.f_tilde,
            }
        } else {
            StepResult {
                state: SimState {
                    field: c_star.clone(),
                    mesh: state.mesh.clone(),
                    t: state.t + dt_used,
                    single_phase: state.single_phase,
                },
                c_star,
                x_tilde: state.mesh.interface_position(),
                dt_used,
                newton_iters: newton.iterations,
                halvings,
                outcome: PostProcessOutcome::Unchanged,
                f_root: Vec::new(),
                f_tilde_root: Vec::new(),
            }
        };

        if halvings > 0 {
            self.working_dt = dt_used;
            self.streak = 0;
        } else {
            self.streak += 1;
            if self.streak >= 10 && self.working_dt < self.config.dt_init {
                self.working_dt = (2.0 * self.working_dt).min(self.config.dt_init);
                self.streak = 0;
            }
        }
        Ok(result)
    }
}
