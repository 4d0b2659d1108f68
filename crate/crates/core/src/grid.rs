//! Uniform cell-centred grids on a cube and scalar fields living on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::det_sum;

/// Minimum number of cells per axis.
pub const MIN_CELLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Periodic,
    /// Homogeneous Neumann data via mirror reflection across the outer faces.
    ZeroFlux,
}

/// The cube `[0, extent)^dim` with its boundary rule, without a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub dim: usize,
    pub extent: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl Domain {
    pub fn new(dim: usize, extent: f64, boundary: Boundary) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParameter(format!("dimension must be 1..=3, got {dim}")));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::InvalidParameter(format!("extent must be > 0, got {extent}")));
        }
        Ok(Self { dim, extent, boundary })
    }

    /// Signed displacement `x - y` along one axis (minimum image when periodic).
    #[inline]
    pub fn displacement(&self, x: f64, y: f64) -> f64 {
        let d = x - y;
        match self.boundary {
            Boundary::Periodic => d - self.extent * (d / self.extent).round(),
            Boundary::ZeroFlux => d,
        }
    }

    #[inline]
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for a in 0..self.dim {
            let d = self.displacement(x[a], y[a]);
            r2 += d * d;
        }
        r2.sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x[..self.dim].iter().all(|&c| (0.0..=self.extent).contains(&c))
    }

    pub fn volume(&self) -> f64 {
        self.extent.powi(self.dim as i32)
    }
}

/// Isotropic grid on `[0, extent)^dim` with `cells` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridConfig", into = "GridConfig")]
pub struct GridSpec {
    pub dim: usize,
    pub extent: f64,
    pub cells: usize,
    pub h: f64,
    pub boundary: Boundary,
}

/// Serialized form of [`GridSpec`]; `h` is derived on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub dim: usize,
    pub extent: f64,
    pub cells: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl TryFrom<GridConfig> for GridSpec {
    type Error = Error;
    fn try_from(c: GridConfig) -> Result<Self> {
        GridSpec::new(c.dim, c.extent, c.cells, c.boundary)
    }
}

impl From<GridSpec> for GridConfig {
    fn from(g: GridSpec) -> Self {
        Self { dim: g.dim, extent: g.extent, cells: g.cells, boundary: g.boundary }
    }
}

/// Maps an unbounded axis index to a stored one under the boundary rule.
#[inline]
fn fold(j: isize, n: usize, boundary: Boundary) -> usize {
    let n = n as isize;
    match boundary {
        Boundary::Periodic => j.rem_euclid(n) as usize,
        Boundary::ZeroFlux => {
            let r = j.rem_euclid(2 * n);
            (if r < n { r } else { 2 * n - 1 - r }) as usize
        }
    }
}

impl GridSpec {
    pub fn new(dim: usize, extent: f64, cells: usize, boundary: Boundary) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParameter(format!("grid dimension must be 1..=3, got {dim}")));
        }
        if cells < MIN_CELLS {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least {MIN_CELLS} cells per axis, got {cells}"
            )));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid extent must be > 0, got {extent}")));
        }
        Ok(Self { dim, extent, cells, h: extent / cells as f64, boundary })
    }

    pub fn periodic(dim: usize, extent: f64, cells: usize) -> Result<Self> {
        Self::new(dim, extent, cells, Boundary::Periodic)
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell volume h^d.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Per-axis indices of a linear cell index (axis 0 fastest).
    #[inline]
    pub fn multi_index(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for o in out.iter_mut().take(self.dim) {
            *o = idx % self.cells;
            idx /= self.cells;
        }
        out
    }

    #[inline]
    pub fn linear_index(&self, m: &[usize; 3]) -> usize {
        let mut idx = 0;
        for a in (0..self.dim).rev() {
            idx = idx * self.cells + m[a];
        }
        idx
    }

    /// Cell centre coordinates.
    #[inline]
    pub fn center(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = (m[a] as f64 + 0.5) * self.h;
        }
        x
    }

    /// Cell reached from `idx` by an integer offset, folded by the boundary rule.
    #[inline]
    pub fn shift(&self, idx: usize, offset: &[isize; 3]) -> usize {
        let m = self.multi_index(idx);
        let mut out = [0; 3];
        for a in 0..self.dim {
            out[a] = fold(m[a] as isize + offset[a], self.cells, self.boundary);
        }
        self.linear_index(&out)
    }

    /// Cell containing the point, or `None` outside `[0, extent]^d`.
    /// Points on the upper face belong to the last cell.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut m = [0; 3];
        for a in 0..self.dim {
            let xa = x[a];
            if !(0.0..=self.extent).contains(&xa) {
                return None;
            }
            m[a] = ((xa / self.h) as usize).min(self.cells - 1);
        }
        Some(self.linear_index(&m))
    }

    pub fn domain(&self) -> Domain {
        Domain { dim: self.dim, extent: self.extent, boundary: self.boundary }
    }

    /// Distance between two points under the boundary geometry
    /// (minimum image when periodic).
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        self.domain().distance(x, y)
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// One real value per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value {} in cell {i}", values[i])));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    /// Samples `f` at the cell centres.
    pub fn from_fn<F: Fn(&[f64]) -> f64 + Sync>(grid: GridSpec, f: F) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|i| f(&grid.center(i)[..grid.dim]))
            .collect();
        Self { grid, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> Self {
        Self { grid: self.grid, values: self.values.par_iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64 + Sync>(&self, other: &Self, f: F) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self { grid: self.grid, values })
    }

    /// Sum of values times h^d.
    pub fn integral(&self) -> f64 {
        det_sum(&self.values) * self.grid.cell_volume()
    }

    /// Grid L2 inner product.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(crate::linalg::dot(&self.values, &other.values) * self.grid.cell_volume())
    }

    pub fn l2_norm(&self) -> f64 {
        (crate::linalg::dot(&self.values, &self.values) * self.grid.cell_volume()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Centred gradient component along `axis`.
    pub fn gradient(&self, axis: usize) -> Self {
        let g = self.grid;
        let mut plus = [0isize; 3];
        plus[axis] = 1;
        let mut minus = [0isize; 3];
        minus[axis] = -1;
        let inv = 0.5 / g.h;
        let values = (0..g.len())
            .into_par_iter()
            .map(|i| (self.values[g.shift(i, &plus)] - self.values[g.shift(i, &minus)]) * inv)
            .collect();
        Self { grid: g, values }
    }

    /// Second-order five/seven-point Laplacian.
    pub fn laplacian(&self) -> Self {
        let g = self.grid;
        let inv = 1.0 / (g.h * g.h);
        let values = (0..g.len())
            .into_par_iter()
            .map(|i| {
                let c = self.values[i];
                let mut acc = 0.0;
                for a in 0..g.dim {
                    let mut o = [0isize; 3];
                    o[a] = 1;
                    let p = self.values[g.shift(i, &o)];
                    o[a] = -1;
                    let m = self.values[g.shift(i, &o)];
                    acc += p - 2.0 * c + m;
                }
                acc * inv
            })
            .collect();
        Self { grid: g, values }
    }
}
