//! Dense per-cell storage for the concentration field.

/// An `n_cells x n_species` array of cell values, stored row-major by cell.
///
/// Cell `k` holds the species vector `self.cell(k)`. This is the state the
/// solver iterates on; it carries no mesh information.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    n_cells: usize,
    n_species: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(n_cells: usize, n_species: usize) -> Self {
        Self { n_cells, n_species, data: vec![0.0; n_cells * n_species] }
    }

    pub fn from_cells(cells: &[Vec<f64>]) -> Self {
        assert!(!cells.is_empty());
        let n_species = cells[0].len();
        let mut data = Vec::with_capacity(cells.len() * n_species);
        for c in cells {
            assert_eq!(c.len(), n_species);
            data.extend_from_slice(c);
        }
        Self { n_cells: cells.len(), n_species, data }
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    #[inline]
    pub fn n_species(&self) -> usize {
        self.n_species
    }

    #[inline]
    pub fn cell(&self, k: usize) -> &[f64] {
        &self.data[k * self.n_species..(k + 1) * self.n_species]
    }

    #[inline]
    pub fn cell_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.n_species..(k + 1) * self.n_species]
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.n_species + i]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, v: f64) {
        self.data[k * self.n_species + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Max-norm of the whole field.
    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest deviation of a cell sum from one.
    pub fn max_volume_filling_residual(&self) -> f64 {
        (0..self.n_cells)
            .map(|k| (self.cell(k).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest entry over all cells and species.
    pub fn min_entry(&self) -> f64 {
        self.data.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }
}
