//! Cut-cell moving mesh.
//!
//! The domain (0,1) is covered by `N` reference cells of width `dx = 1/N`
//! with vertices at integer multiples of `dx`. The interface at `X` replaces
//! the vertex nearest to it (vertex index `k_int`), deforming the two
//! adjacent cells: in 0-based cell indexing, cell `k_int - 1` becomes the
//! solid cut cell `((k_int-1) dx, X)` and cell `k_int` the gas cut cell
//! `(X, (k_int+1) dx)`. Cells left of vertex `k_int` are solid, the rest gas.
//! `k_int = 0` (all gas) and `k_int = N` (all solid) encode the pinned
//! single-phase states `X = 0` and `X = 1`.

use crate::field::Field;
use crate::model::Phase;
use crate::{Error, Result};

/// Vertex index nearest to `x` among `0..=n_cells`; ties go to the lower
/// index. `x` outside [0,1] is clamped to the corresponding endpoint.
pub fn nearest_interface_index(x: f64, n_cells: usize) -> usize {
    if x <= 0.0 {
        return 0;
    }
    if x >= 1.0 {
        return n_cells;
    }
    let t = x * n_cells as f64;
    let k0 = t.floor();
    let k = if t - k0 <= 0.5 { k0 } else { k0 + 1.0 };
    (k as usize).min(n_cells)
}

/// Cell widths for interface position `x` with interface vertex `k_int`.
///
/// The two cells adjacent to the replaced vertex get the cut widths
/// `x - (k_int-1) dx` and `(k_int+1) dx - x`; all others get `dx`. Valid for
/// any `x` strictly inside `((k_int-1) dx, (k_int+1) dx)`, which covers both
/// the mesh attached to `k_int` and the intermediate mesh of a step that
/// moved `x` by up to `dx/2`.
pub fn build_widths(x: f64, k_int: usize, n_cells: usize) -> Result<Vec<f64>> {
    let dx = 1.0 / n_cells as f64;
    let mut widths = vec![dx; n_cells];
    if k_int == 0 || k_int == n_cells {
        let pinned = if k_int == 0 { 0.0 } else { 1.0 };
        if x != pinned {
            return Err(Error::Geometry(format!(
                "interface vertex {k_int} requires x = {pinned}, got {x}"
            )));
        }
        return Ok(widths);
    }
    let w_solid = x - (k_int as f64 - 1.0) * dx;
    let w_gas = (k_int as f64 + 1.0) * dx - x;
    if w_solid <= 0.0 || w_gas <= 0.0 {
        return Err(Error::Geometry(format!(
            "nonpositive cut width for x = {x}, k_int = {k_int}, N = {n_cells}"
        )));
    }
    widths[k_int - 1] = w_solid;
    widths[k_int] = w_gas;
    Ok(widths)
}

/// Immutable snapshot of the deformed mesh.
#[derive(Debug, Clone)]
pub struct MovingMesh {
    n_cells: usize,
    dx: f64,
    x_int: f64,
    k_int: usize,
    widths: Vec<f64>,
}

impl MovingMesh {
    /// Two-phase mesh with the interface vertex chosen nearest to `x`.
    pub fn two_phase(n_cells: usize, x: f64) -> Result<Self> {
        if !(0.0 < x && x < 1.0) {
            return Err(Error::Geometry(format!("interface position {x} outside (0,1)")));
        }
        let k_int = nearest_interface_index(x, n_cells);
        if k_int == 0 || k_int == n_cells {
            return Err(Error::Geometry(format!(
                "interface position {x} too close to the boundary for N = {n_cells}"
            )));
        }
        Self::with_index(n_cells, x, k_int)
    }

    /// Mesh with an explicitly given interface vertex (used for the
    /// intermediate mesh of a step, whose vertex is inherited).
    pub fn with_index(n_cells: usize, x: f64, k_int: usize) -> Result<Self> {
        let widths = build_widths(x, k_int, n_cells)?;
        Ok(Self { n_cells, dx: 1.0 / n_cells as f64, x_int: x, k_int, widths })
    }

    /// Uniform mesh of a pinned single-phase state.
    pub fn pinned(n_cells: usize, phase: Phase) -> Self {
        let (x, k) = match phase {
            Phase::Solid => (1.0, n_cells),
            Phase::Gas => (0.0, 0),
        };
        Self {
            n_cells,
            dx: 1.0 / n_cells as f64,
            x_int: x,
            k_int: k,
            widths: vec![1.0 / n_cells as f64; n_cells],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn interface_position(&self) -> f64 {
        self.x_int
    }

    pub fn interface_index(&self) -> usize {
        self.k_int
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn width(&self, cell: usize) -> f64 {
        self.widths[cell]
    }

    pub fn is_pinned(&self) -> bool {
        self.k_int == 0 || self.k_int == self.n_cells
    }

    /// Phase label of a cell: solid strictly left of the interface vertex.
    pub fn phase_of(&self, cell: usize) -> Phase {
        if cell < self.k_int { Phase::Solid } else { Phase::Gas }
    }

    /// Left boundary of a cell; exact (no cumulative rounding).
    pub fn left_boundary(&self, cell: usize) -> f64 {
        if cell == self.k_int && !self.is_pinned() { self.x_int } else { cell as f64 * self.dx }
    }

    pub fn cell_bounds(&self, cell: usize) -> (f64, f64) {
        let right = if cell + 1 == self.n_cells { 1.0 } else { self.left_boundary(cell + 1) };
        (self.left_boundary(cell), right)
    }
}

/// 5-point Gauss-Legendre nodes and weights on (-1, 1).
const GAUSS5: [(f64, f64); 5] = [
    (-0.906179845938664, 0.23692688505618908),
    (-0.5384693101056831, 0.47862867049936647),
    (0.0, 0.5688888888888889),
    (0.5384693101056831, 0.47862867049936647),
    (0.906179845938664, 0.23692688505618908),
];

/// Discretize a pointwise initial profile into cell means by per-cell
/// Gauss-Legendre quadrature.
pub fn discretize_initial<F>(profile: F, mesh: &MovingMesh) -> Field
where
    F: Fn(f64) -> Vec<f64>,
{
    let probe = profile(0.0);
    let n_species = probe.len();
    let mut field = Field::zeros(mesh.n_cells(), n_species);
    for k in 0..mesh.n_cells() {
        let (xl, xr) = mesh.cell_bounds(k);
        let half = 0.5 * (xr - xl);
        let mid = 0.5 * (xl + xr);
        let cell = field.cell_mut(k);
        for (node, weight) in GAUSS5 {
            let v = profile(mid + half * node);
            for i in 0..n_species {
                cell[i] += 0.5 * weight * v[i];
            }
        }
    }
    field
}

/// Piecewise-constant interpolant of a field on its mesh.
pub struct PiecewiseConstant<'a> {
    field: &'a Field,
    mesh: &'a MovingMesh,
}

impl<'a> PiecewiseConstant<'a> {
    pub fn new(field: &'a Field, mesh: &'a MovingMesh) -> Self {
        Self { field, mesh }
    }

    /// Value at `x`; cells are taken left-closed, the last cell also contains 1.
    pub fn eval(&self, x: f64) -> Result<&'a [f64]> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("interpolation point {x} outside [0,1]")));
        }
        let n = self.mesh.n_cells();
        let mut lo = 0;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x >= self.mesh.left_boundary(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(self.field.cell(lo))
    }

    /// Exact integral of the interpolant, `sum_K width_K c_K`.
    pub fn integral(&self) -> Vec<f64> {
        let n_species = self.field.n_species();
        let mut acc = vec![0.0; n_species];
        for k in 0..self.mesh.n_cells() {
            let w = self.mesh.width(k);
            for (a, c) in acc.iter_mut().zip(self.field.cell(k)) {
                *a += w * c;
            }
        }
        acc
    }
}

/// What the remap step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostProcessOutcome {
    Unchanged,
    CrossedRight,
    CrossedLeft,
    Pinned(Phase),
}

/// Remap the intermediate solution onto the mesh attached to the new
/// interface position.
///
/// `c_star` lives on the intermediate mesh (old interface vertex, new
/// position `x_new`). When the nearest vertex is unchanged only the widths
/// move. A crossing splits the grown cut cell (value copied) and merges the
/// shrunk one with its fixed neighbour (width-weighted average), which keeps
/// every per-species mass exact and every new value a convex combination of
/// old ones. Reaching vertex 1 or N-? pins the interface to the matching
/// domain endpoint and the leftover sliver of the vanished phase is merged
/// into the last uniform cell the same way.
pub fn post_process(
    c_star: &Field,
    x_new: f64,
    mesh_old: &MovingMesh,
) -> Result<(Field, MovingMesh, PostProcessOutcome)> {
    let n = mesh_old.n_cells();
    let dx = mesh_old.dx();
    let v_old = mesh_old.interface_index();
    if mesh_old.is_pinned() {
        return Ok((c_star.clone(), mesh_old.clone(), PostProcessOutcome::Unchanged));
    }
    let shift = (x_new - mesh_old.interface_position()).abs();
    if shift > 0.5 * dx * (1.0 + 1e-9) {
        return Err(Error::Cfl(format!(
            "interface moved {shift:.3e}, more than half a cell ({:.3e})",
            0.5 * dx
        )));
    }
    let v_new = nearest_interface_index(x_new, n);

    // Pinning: vertex N pins to x = 1 (all solid), vertices 0 and 1 pin to
    // x = 0 (all gas). The remap is the mean-value projection of the
    // intermediate field onto the uniform mesh.
    if v_new >= n {
        let mut c = c_star.clone();
        // intermediate solid cut covers ((n-2) dx, x_new), gas sliver (x_new, 1)
        let w_solid_over = x_new - (n as f64 - 1.0) * dx;
        let w_gas = 1.0 - x_new;
        let merged: Vec<f64> = c_star
            .cell(n - 2)
            .iter()
            .zip(c_star.cell(n - 1))
            .map(|(s, g)| (w_solid_over * s + w_gas * g) / dx)
            .collect();
        c.cell_mut(n - 1).copy_from_slice(&merged);
        return Ok((c, MovingMesh::pinned(n, Phase::Solid), PostProcessOutcome::Pinned(Phase::Solid)));
    }
    if v_new <= 1 {
        let mut c = c_star.clone();
        // intermediate solid sliver (dx, x_new) plus gas overhang (x_new, 2 dx)
        let w_solid = x_new - dx;
        let w_gas_over = 2.0 * dx - x_new;
        let merged: Vec<f64> = c_star
            .cell(1)
            .iter()
            .zip(c_star.cell(2))
            .map(|(s, g)| (w_solid * s + w_gas_over * g) / dx)
            .collect();
        c.cell_mut(1).copy_from_slice(&merged);
        return Ok((c, MovingMesh::pinned(n, Phase::Gas), PostProcessOutcome::Pinned(Phase::Gas)));
    }

    if v_new == v_old {
        let mesh = MovingMesh::with_index(n, x_new, v_old)?;
        return Ok((c_star.clone(), mesh, PostProcessOutcome::Unchanged));
    }
    if v_new == v_old + 1 {
        let mut c = c_star.clone();
        // projection: old solid cut value fills the restored fixed cell and
        // the new solid cut cell
        let solid_value = c_star.cell(v_old - 1).to_vec();
        c.cell_mut(v_old).copy_from_slice(&solid_value);
        // average: old gas cut merges into the next fixed cell
        let w_gas_star = (v_old as f64 + 1.0) * dx - x_new;
        let merged: Vec<f64> = c_star
            .cell(v_old)
            .iter()
            .zip(c_star.cell(v_old + 1))
            .map(|(g, f)| (w_gas_star * g + dx * f) / (w_gas_star + dx))
            .collect();
        c.cell_mut(v_old + 1).copy_from_slice(&merged);
        let mesh = MovingMesh::with_index(n, x_new, v_new)?;
        return Ok((c, mesh, PostProcessOutcome::CrossedRight));
    }
    if v_new == v_old - 1 {
        let mut c = c_star.clone();
        // projection: old gas cut value fills the restored fixed cell and
        // the new gas cut cell
        let gas_value = c_star.cell(v_old).to_vec();
        c.cell_mut(v_old - 1).copy_from_slice(&gas_value);
        // average: old solid cut merges into the fixed cell below it
        let w_solid_star = x_new - (v_old as f64 - 1.0) * dx;
        let merged: Vec<f64> = c_star
            .cell(v_old - 2)
            .iter()
            .zip(c_star.cell(v_old - 1))
            .map(|(f, s)| (dx * f + w_solid_star * s) / (dx + w_solid_star))
            .collect();
        c.cell_mut(v_old - 2).copy_from_slice(&merged);
        let mesh = MovingMesh::with_index(n, x_new, v_new)?;
        return Ok((c, mesh, PostProcessOutcome::CrossedLeft));
    }
    Err(Error::Cfl(format!(
        "interface vertex jumped from {v_old} to {v_new} in one step"
    )))
}
