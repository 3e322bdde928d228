//! Discrete calculus on the flat periodic n-torus `[0, L)^n`.
//!
//! Fields are sampled on a uniform grid of `N` points per axis, stored
//! lexicographically with axis 0 (x₁) varying slowest. All derivatives are
//! spectral: exact derivatives of the trigonometric interpolant. The Nyquist
//! wavenumber `N/2` carries a zero derivative symbol on every axis, so first
//! and second derivatives are built from the same symbols and
//! `divergence(gradient(u)) == -laplacian(u)` holds coefficient by coefficient.
//!
//! The Laplacian follows the analyst's sign: `Δ = -div ∇`, with Fourier symbol
//! `+|k|²`.

mod field;
pub mod io;
mod linear;
mod ops;

pub use field::{Norms, ScalarField, SymTensorField, VectorField};
pub use linear::{apply_scalar_operator, gmres, solve_scalar_linear, GmresStats, LinearOptions};
pub use ops::*;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on `N^n` unless a caller declares a different budget.
pub const DEFAULT_NODE_BUDGET: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub points: usize,
    pub period: f64,
}

impl GridSpec {
    pub fn new(dim: usize, points: usize, period: f64) -> Result<Self> {
        Self::with_budget(dim, points, period, DEFAULT_NODE_BUDGET)
    }

    /// The `[0, 2π)^n` torus.
    pub fn torus(dim: usize, points: usize) -> Result<Self> {
        Self::new(dim, points, 2.0 * PI)
    }

    pub fn with_budget(dim: usize, points: usize, period: f64, max_nodes: usize) -> Result<Self> {
        if !(3..=5).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{3, 4, 5}}")));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 8, got {points}"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidGrid(format!("period must be positive, got {period}")));
        }
        let nodes = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(points));
        match nodes {
            Some(n) if n <= max_nodes => Ok(Self { dim, points, period }),
            _ => Err(Error::InvalidGrid(format!(
                "{points}^{dim} nodes exceed the budget of {max_nodes}"
            ))),
        }
    }

    /// Critical Sobolev exponent `q = 2n/(n-2)`.
    pub fn critical_exponent(&self) -> f64 {
        2.0 * self.dim as f64 / (self.dim as f64 - 2.0)
    }

    pub fn node_count(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn spacing(&self) -> f64 {
        self.period / self.points as f64
    }

    pub fn volume(&self) -> f64 {
        self.period.powi(self.dim as i32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.volume() / self.node_count() as f64
    }

    /// Number of independent components of a symmetric tensor.
    pub fn sym_components(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    /// Fundamental angular wavenumber `2π/L`.
    pub fn base_wavenumber(&self) -> f64 {
        2.0 * PI / self.period
    }

    /// Per-axis grid indices of a flat node index.
    pub fn multi_index(&self, mut node: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for axis in (0..self.dim).rev() {
            idx[axis] = node % self.points;
            node /= self.points;
        }
        idx
    }

    pub fn coordinates(&self, node: usize) -> Vec<f64> {
        let h = self.spacing();
        self.multi_index(node).into_iter().map(|i| i as f64 * h).collect()
    }

    /// Signed integer wavenumber of FFT bin `index` (Nyquist reported as `-N/2`).
    pub fn signed_mode(&self, index: usize) -> i64 {
        let n = self.points as i64;
        let i = index as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}^{} torus, L = {}", self.points, self.dim, self.period)
    }
}

/// A grid together with its FFT plans and wavenumber tables.
pub struct Grid {
    spec: GridSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Angular wavenumber along each axis for every flat Fourier index,
    /// with the Nyquist bin zeroed.
    wavenumbers: Vec<Vec<f64>>,
    /// `|k|²` built from the zeroed wavenumbers.
    laplace_symbol: Vec<f64>,
    /// Fourier index touches the Nyquist bin on some axis.
    nyquist: Vec<bool>,
}

pub type GridRef = Arc<Grid>;

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("spec", &self.spec).finish()
    }
}

impl Grid {
    pub fn new(spec: GridSpec) -> GridRef {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(spec.points);
        let inverse = planner.plan_fft_inverse(spec.points);
        let total = spec.node_count();
        let kappa = spec.base_wavenumber();
        let half = spec.points / 2;

        let mut wavenumbers = vec![vec![0.0; total]; spec.dim];
        let mut laplace_symbol = vec![0.0; total];
        let mut nyquist = vec![false; total];
        for node in 0..total {
            let idx = spec.multi_index(node);
            let mut ksq = 0.0;
            for (axis, &i) in idx.iter().enumerate() {
                if i == half {
                    nyquist[node] = true;
                    continue;
                }
                let k = spec.signed_mode(i) as f64 * kappa;
                wavenumbers[axis][node] = k;
                ksq += k * k;
            }
            laplace_symbol[node] = ksq;
        }

        Arc::new(Self {
            spec,
            forward,
            inverse,
            wavenumbers,
            laplace_symbol,
            nyquist,
        })
    }

    pub fn from_parts(dim: usize, points: usize, period: f64) -> Result<GridRef> {
        Ok(Self::new(GridSpec::new(dim, points, period)?))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn node_count(&self) -> usize {
        self.spec.node_count()
    }

    pub fn wavenumbers(&self, axis: usize) -> &[f64] {
        &self.wavenumbers[axis]
    }

    pub fn laplace_symbol(&self) -> &[f64] {
        &self.laplace_symbol
    }

    pub fn is_nyquist(&self, mode: usize) -> bool {
        self.nyquist[mode]
    }

    /// Unnormalised forward DFT of real grid data.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    /// Inverse DFT (normalised), returning the real part.
    pub fn inverse(&self, mut coeffs: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut coeffs, &self.inverse);
        let scale = 1.0 / self.node_count() as f64;
        coeffs.into_iter().map(|c| c.re * scale).collect()
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.spec.points;
        let total = data.len();
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        let mut line = vec![Complex64::default(); n];
        for axis in 0..self.spec.dim {
            let stride = n.pow((self.spec.dim - 1 - axis) as u32);
            if stride == 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            let block = stride * n;
            for start in (0..total).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, value) in line.iter().enumerate() {
                        data[base + j * stride] = *value;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_exponents() {
        for (n, q) in [(3, 6.0), (4, 4.0), (5, 10.0 / 3.0)] {
            let spec = GridSpec::torus(n, 8).unwrap();
            assert!((spec.critical_exponent() - q).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::torus(2, 8).is_err());
        assert!(GridSpec::torus(6, 8).is_err());
        assert!(GridSpec::torus(3, 12).is_err());
        assert!(GridSpec::torus(3, 4).is_err());
        assert!(GridSpec::new(3, 8, -1.0).is_err());
        assert!(GridSpec::with_budget(3, 32, 1.0, 1000).is_err());
    }

    #[test]
    fn transform_round_trip() {
        let grid = Grid::new(GridSpec::torus(3, 8).unwrap());
        let values: Vec<f64> = (0..512).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let back = grid.inverse(grid.forward(&values));
        for (a, b) in values.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lexicographic_coordinates() {
        let spec = GridSpec::torus(3, 8).unwrap();
        let h = spec.spacing();
        let c = spec.coordinates(64 + 8 * 2 + 3);
        assert_eq!(c, vec![h, 2.0 * h, 3.0 * h]);
    }
}
