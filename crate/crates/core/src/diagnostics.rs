//! Energy and dissipation bookkeeping, error norms, time series and CSV
//! output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::field::Field;
use crate::fluxes::EdgeState;
use crate::mesh::{build_widths, MovingMesh};
use crate::model::{
    dissipation_potential, dual_dissipation_potential, free_energy_density, ModelParams,
    Phase,
};
use crate::solver::{SimState, StepResult};
use crate::{Error, Result};

/// Discrete free energy `sum_K width_K h_{phase(K)}(c_K)` on the mesh's
/// phase labels.
pub fn discrete_free_energy(field: &Field, mesh: &MovingMesh, params: &ModelParams) -> Result<f64> {
    let mut h = 0.0;
    for k in 0..field.n_cells() {
        h += mesh.width(k) * free_energy_density(field.cell(k), mesh.phase_of(k), params)?;
    }
    Ok(h)
}

/// Termwise decomposition of one step's energy budget.
#[derive(Debug, Clone)]
pub struct DissipationReport {
    /// Quadratic bulk term `(dt/dx) sum_{edges != interface} (D log c)^T M (D log c)`.
    pub bulk: f64,
    /// Linear interface term `dt sum_i F_i [(log c + mu*)]_gap`.
    pub interface_linear: f64,
    /// Equivalent potential form
    /// `dt sum_i sqrt(cs cg) (phi(gap) + phi*(F/sqrt(cs cg)))`.
    pub strong_phi: f64,
    /// Relative gap between the two interface forms (duality at the root).
    pub fenchel_rel_gap: f64,
    /// Slack of `H_new + bulk + interface <= H_old`, positive when violated.
    pub budget_slack: f64,
    pub weak_bound_ok: bool,
}

/// Assemble the energy budget of one accepted step from the previous state,
/// the Newton root and the remapped state carried by [`StepResult`].
pub fn dissipation_report(
    prev: &SimState,
    step: &StepResult,
    params: &ModelParams,
) -> Result<DissipationReport> {
    let dx = prev.mesh.dx();
    let dt = step.dt_used;
    let v = prev.mesh.interface_index();
    let two_phase = prev.single_phase.is_none();
    let c_star = &step.c_star;
    let n = c_star.n_species();

    let mut bulk = 0.0;
    for w in 1..c_star.n_cells() {
        if two_phase && w == v {
            continue;
        }
        let phase = if w < v { Phase::Solid } else { Phase::Gas };
        let edge = EdgeState::new(c_star.cell(w - 1), c_star.cell(w));
        let mob = params.mobility(&edge.edge_conc, phase)?;
        let dlog = DVector::from_iterator(
            n,
            (0..n).map(|i| c_star.get(w, i).ln() - c_star.get(w - 1, i).ln()),
        );
        bulk += dt / dx * (dlog.transpose() * mob * dlog)[(0, 0)];
    }

    let mut interface_linear = 0.0;
    let mut strong_phi = 0.0;
    if two_phase {
        let c_s = c_star.cell(v - 1);
        let c_g = c_star.cell(v);
        for i in 0..n {
            let gap = params.mu_star_jump(i) + c_g[i].ln() - c_s[i].ln();
            interface_linear += dt * step.f_root[i] * gap;
            let root = (c_s[i] * c_g[i]).sqrt();
            strong_phi += dt
                * root
                * (dissipation_potential(gap) + dual_dissipation_potential(step.f_root[i] / root));
        }
    }

    let scale = interface_linear.abs().max(strong_phi.abs()).max(f64::MIN_POSITIVE);
    let fenchel_rel_gap = (interface_linear - strong_phi).abs() / scale;

    let h_old = discrete_free_energy(&prev.field, &prev.mesh, params)?;
    let h_new = discrete_free_energy(&step.state.field, &step.state.mesh, params)?;
    let budget_slack = h_new + bulk + interface_linear - h_old;
    Ok(DissipationReport {
        bulk,
        interface_linear,
        strong_phi,
        fenchel_rel_gap,
        budget_slack,
        weak_bound_ok: budget_slack <= 1e-10,
    })
}

/// One accepted step's diagnostics row.
#[derive(Debug, Clone)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub x: f64,
    pub k_int: usize,
    pub h: f64,
    /// `h` relative to the stationary reference energy when one is known.
    pub h_rel: f64,
    /// `|x - x_stationary|` when a reference interface position is known.
    pub dx_rel: f64,
    pub masses: Vec<f64>,
    pub diss_bulk: f64,
    pub diss_interface: f64,
    pub diss_phi_star: f64,
    pub newton_iters: usize,
    pub dt: f64,
}

/// Write the run time series; one row per accepted step.
pub fn write_timeseries_csv(records: &[DiagnosticsRecord], n_species: usize, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "t,X,K_int,H,H_rel,dX_rel")?;
    for i in 1..=n_species {
        write!(out, ",m_{i}")?;
    }
    writeln!(out, ",diss_bulk,diss_interface,newton_iters,dt")?;
    for r in records {
        write!(out, "{},{},{},{},{},{}", r.t, r.x, r.k_int, r.h, r.h_rel, r.dx_rel)?;
        for m in &r.masses {
            write!(out, ",{m}")?;
        }
        writeln!(out, ",{},{},{},{}", r.diss_bulk, r.diss_interface, r.newton_iters, r.dt)?;
    }
    Ok(())
}

/// Write one spatial snapshot; one row per cell.
pub fn write_snapshot_csv(field: &Field, mesh: &MovingMesh, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "x_left,x_right")?;
    for i in 1..=field.n_species() {
        write!(out, ",c_{i}")?;
    }
    writeln!(out)?;
    for k in 0..field.n_cells() {
        let (xl, xr) = mesh.cell_bounds(k);
        write!(out, "{xl},{xr}")?;
        for c in field.cell(k) {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Per-step history of a run, as needed for grid-comparison error norms.
#[derive(Debug, Clone, Default)]
pub struct RecordedRun {
    pub n_cells: usize,
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub k_ints: Vec<usize>,
    pub fields: Vec<Field>,
}

impl RecordedRun {
    pub fn push(&mut self, t: f64, state: &SimState) {
        self.n_cells = state.mesh.n_cells();
        self.times.push(t);
        self.xs.push(state.mesh.interface_position());
        self.k_ints.push(state.mesh.interface_index());
        self.fields.push(state.field.clone());
    }
}

fn boundaries(x: f64, k_int: usize, n_cells: usize) -> Result<Vec<f64>> {
    let widths = build_widths(x, k_int, n_cells)?;
    let mut b = Vec::with_capacity(n_cells + 1);
    let dx = 1.0 / n_cells as f64;
    for j in 0..=n_cells {
        if j == k_int && k_int > 0 && k_int < n_cells {
            b.push(x);
        } else {
            b.push(j as f64 * dx);
        }
    }
    debug_assert_eq!(b.len(), n_cells + 1);
    // widths and boundaries must agree
    debug_assert!((0..n_cells).all(|j| (b[j + 1] - b[j] - widths[j]).abs() < 1e-12));
    Ok(b)
}

/// Mean-value projection of a (piecewise-constant) fine field onto coarse
/// cell boundaries; exact overlap integrals, so per-species mass is
/// preserved to roundoff.
fn project_mean(
    fine: &Field,
    fine_bounds: &[f64],
    coarse_bounds: &[f64],
    n_species: usize,
) -> Vec<Vec<f64>> {
    let n_coarse = coarse_bounds.len() - 1;
    let mut out = Vec::with_capacity(n_coarse);
    let mut j = 0usize;
    for k in 0..n_coarse {
        let (xl, xr) = (coarse_bounds[k], coarse_bounds[k + 1]);
        let mut acc = vec![0.0; n_species];
        while fine_bounds[j + 1] <= xl {
            j += 1;
        }
        let mut x = xl;
        let mut jj = j;
        while x < xr - 1e-15 {
            let seg_end = fine_bounds[jj + 1].min(xr);
            let w = seg_end - x;
            if w > 0.0 {
                for (a, c) in acc.iter_mut().zip(fine.cell(jj)) {
                    *a += w * c;
                }
            }
            x = seg_end;
            if x >= fine_bounds[jj + 1] - 1e-15 && jj + 1 < fine.n_cells() {
                jj += 1;
            } else if x >= xr - 1e-15 {
                break;
            }
        }
        let width = xr - xl;
        acc.iter_mut().for_each(|a| *a /= width);
        out.push(acc);
    }
    out
}

/// Discrete space-time L1 errors of a coarse run against a reference run on
/// a refined grid: `(concentration error, interface error)`.
///
/// The reference is projected onto the coarse run's mesh at each shared step
/// time by mean values; both runs must use the same step sequence.
pub fn l1_errors(coarse: &RecordedRun, reference: &RecordedRun) -> Result<(f64, f64)> {
    if coarse.n_cells == 0 || reference.n_cells == 0 {
        return Err(Error::Usage("runs carry no recorded history".into()));
    }
    if reference.n_cells % coarse.n_cells != 0 {
        return Err(Error::Usage(format!(
            "reference grid ({} cells) is not a refinement multiple of the coarse grid ({} cells)",
            reference.n_cells, coarse.n_cells
        )));
    }
    if coarse.times.len() != reference.times.len() {
        return Err(Error::Usage(format!(
            "runs have different step counts: {} vs {}",
            coarse.times.len(),
            reference.times.len()
        )));
    }
    let n_species = coarse.fields[0].n_species();
    let mut err_c = 0.0;
    let mut err_x = 0.0;
    for p in 1..coarse.times.len() {
        let (tc, tr) = (coarse.times[p], reference.times[p]);
        if (tc - tr).abs() > 1e-9 * (1.0 + tc.abs()) {
            return Err(Error::Usage(format!("step times diverge at step {p}: {tc} vs {tr}")));
        }
        let dt = coarse.times[p] - coarse.times[p - 1];
        let cb = boundaries(coarse.xs[p], coarse.k_ints[p], coarse.n_cells)?;
        let rb = boundaries(reference.xs[p], reference.k_ints[p], reference.n_cells)?;
        let projected = project_mean(&reference.fields[p], &rb, &cb, n_species);
        let mut step_err = 0.0;
        for k in 0..coarse.n_cells {
            let width = cb[k + 1] - cb[k];
            for i in 0..n_species {
                step_err += width * (coarse.fields[p].get(k, i) - projected[k][i]).abs();
            }
        }
        err_c += dt * step_err;
        err_x += dt * (coarse.xs[p] - reference.xs[p]).abs();
    }
    Ok((err_c, err_x))
}

/// Least-squares line fit returning `(slope, intercept, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}
