//! Linearization of the scalar equation and its principal eigenpair.
//!
//! All eigenproblems act on the Nyquist-free subspace: the discrete operator
//! is `P L P` with `P` the projection removing every Fourier mode that
//! touches the Nyquist bin.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{
    apply_scalar_operator, filter_nyquist, gmres, gradient, solve_shifted_laplacian,
    LinearOptions, ScalarField, VectorField,
};
use crate::scalar::{pw, LichCoefficients};

/// `L φ = Δφ + zeroth·φ + ⟨∇φ, first⟩`.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub zeroth: ScalarField,
    pub first: VectorField,
    /// Shift with `zeroth + k_lin ≥ 1` everywhere.
    pub k_lin: f64,
}

impl LinearizedOperator {
    pub fn new(zeroth: ScalarField, first: VectorField) -> Result<Self> {
        for c in first.components() {
            zeroth.ensure_same_grid(c)?;
        }
        let k_lin = (-zeroth.min()).max(0.0) + 1.0;
        Ok(Self {
            zeroth,
            first,
            k_lin,
        })
    }

    fn has_drift(&self) -> bool {
        self.first.components().iter().any(|c| !c.is_identically(0.0))
    }

    /// `P L P φ`.
    pub fn apply(&self, phi: &ScalarField) -> ScalarField {
        let p = filter_nyquist(phi);
        let drift = self.has_drift().then_some(&self.first);
        filter_nyquist(&apply_scalar_operator(&p, &self.zeroth, drift))
    }
}

/// Linearization of the scalar equation at `u`.
pub fn linearize(u: &ScalarField, coeffs: &LichCoefficients) -> Result<LinearizedOperator> {
    u.ensure_positive()?;
    coeffs.h.ensure_same_grid(u)?;
    let q = coeffs.exponent();
    let gy = gradient(u).dot(&coeffs.y);
    let len = u.len();
    let mut zeroth = Vec::with_capacity(len);
    let mut weight = Vec::with_capacity(len);
    for i in 0..len {
        let v = u.values()[i];
        let g = gy.values()[i];
        let c = coeffs.c.values()[i];
        let d = coeffs.d.values()[i];
        zeroth.push(
            coeffs.h.values()[i] - (q - 1.0) * coeffs.f.values()[i] * pw(v, q - 2.0)
                + (q + 1.0) * coeffs.a.values()[i] * pw(v, -q - 2.0)
                - coeffs.b.values()[i] / (v * v)
                - (q + 3.0) * g * g * pw(v, -q - 4.0)
                - c * g * (2.0 * d / (v * v * v) + (q + 2.0) * pw(v, -q - 3.0)),
        );
        weight.push(c * (d / (v * v) + pw(v, -q - 2.0)) + 2.0 * g * pw(v, -q - 3.0));
    }
    let weight = ScalarField::new(u.grid(), weight)?;
    LinearizedOperator::new(ScalarField::new(u.grid(), zeroth)?, coeffs.y.scale_by(&weight))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Target for `‖Lφ - λφ‖₂ / ‖φ‖₂`.
    pub tol: f64,
    pub max_iterations: usize,
    pub linear: LinearOptions,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iterations: 2000,
            linear: LinearOptions {
                tol: 1e-13,
                ..LinearOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub lambda: f64,
    /// Unit `L²` norm, positive on success.
    pub phi: ScalarField,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenSummary {
    pub lambda: f64,
    pub iterations: usize,
    pub residual: f64,
    pub phi_min: f64,
    pub phi_max: f64,
}

impl Eigenpair {
    pub fn summary(&self) -> EigenSummary {
        EigenSummary {
            lambda: self.lambda,
            iterations: self.iterations,
            residual: self.residual,
            phi_min: self.phi.min(),
            phi_max: self.phi.max(),
        }
    }
}

/// Inverse iteration with `(P(L + shift)P)⁻¹`, started from the constant.
fn inverse_iteration(op: &LinearizedOperator, shift: f64, opts: &EigenOptions) -> Result<Eigenpair> {
    let grid = op.zeroth.grid().clone();
    let shifted = op.zeroth.shift(shift);
    let sigma = shifted.mean().max(1.0);
    let drift = op.has_drift().then_some(&op.first);
    let solve = |rhs: &ScalarField, x0: &ScalarField| -> Result<ScalarField> {
        if drift.is_none() && shifted.min() == shifted.max() {
            return Ok(solve_shifted_laplacian(rhs, shifted.min()));
        }
        let apply = |v: &[f64]| {
            let f = filter_nyquist(&ScalarField::from_raw(&grid, v.to_vec()));
            filter_nyquist(&apply_scalar_operator(&f, &shifted, drift)).into_values()
        };
        let precond = |v: &[f64]| {
            let f = ScalarField::from_raw(&grid, v.to_vec());
            filter_nyquist(&solve_shifted_laplacian(&f, sigma)).into_values()
        };
        let (x, _) = gmres(apply, precond, rhs.values(), Some(x0.values()), &opts.linear)?;
        ScalarField::new(&grid, x)
    };

    let normalize = |f: ScalarField| {
        let norm = f.l2_norm();
        f.scale(1.0 / norm)
    };
    let mut phi = normalize(ScalarField::constant(&grid, 1.0));
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        let next = filter_nyquist(&solve(&phi, &phi)?);
        let sign = if next.mean() < 0.0 { -1.0 } else { 1.0 };
        phi = normalize(next.scale(sign));
        let lphi = op.apply(&phi);
        let lambda = lphi.inner(&phi);
        residual = (&lphi - &phi.scale(lambda)).l2_norm();
        if residual <= opts.tol {
            if phi.min() * phi.max() <= 0.0 {
                return Err(Error::SignIndefiniteEigenfunction {
                    min: phi.min(),
                    max: phi.max(),
                });
            }
            return Ok(Eigenpair {
                lambda,
                phi,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        residual,
    })
}

/// Principal (smallest real) eigenpair of the linearization.
pub fn smallest_eigenvalue(op: &LinearizedOperator, opts: &EigenOptions) -> Result<Eigenpair> {
    inverse_iteration(op, op.k_lin, opts)
}

/// First eigenvalue of the symmetric operator `Δ + h`.
pub fn coercivity_eigenvalue(h: &ScalarField, opts: &EigenOptions) -> Result<f64> {
    coercivity_eigenpair(h, opts).map(|p| p.lambda)
}

pub fn coercivity_eigenpair(h: &ScalarField, opts: &EigenOptions) -> Result<Eigenpair> {
    let op = LinearizedOperator::new(h.clone(), VectorField::zeros(h.grid()))?;
    inverse_iteration(&op, op.k_lin, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, GridRef, GridSpec};
    use nalgebra::{linalg::Schur, DMatrix, DVector};
    use std::f64::consts::PI;

    fn grid(points: usize) -> GridRef {
        Grid::new(GridSpec::torus(3, points).unwrap())
    }

    /// One-dimensional spectral matrices assembled from explicit DFT sums:
    /// Nyquist projection, first derivative and positive second derivative.
    fn dft_matrices(n: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let modes: Vec<f64> = (0..n)
            .filter(|&m| m != n / 2)
            .map(|m| if m < n / 2 { m as f64 } else { m as f64 - n as f64 })
            .collect();
        let build = |f: &dyn Fn(f64, f64) -> f64| {
            DMatrix::from_fn(n, n, |j, l| {
                let dx = 2.0 * PI * (j as f64 - l as f64) / n as f64;
                modes.iter().map(|&k| f(k, dx)).sum::<f64>() / n as f64
            })
        };
        (
            build(&|k, dx| (k * dx).cos()),
            build(&|k, dx| -k * (k * dx).sin()),
            build(&|k, dx| k * k * (k * dx).cos()),
        )
    }

    fn kron3(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        a.kronecker(b).kronecker(c)
    }

    /// Dense `Δ + diag z + Σ diag(B_i) ∂_i` restricted to the Nyquist-free
    /// subspace, in an orthonormal basis of the range of the projection.
    fn dense_operator(n: usize, z: &ScalarField, b: &VectorField) -> DMatrix<f64> {
        let (p1, d1, l1) = dft_matrices(n);
        let id = DMatrix::<f64>::identity(n, n);
        let p = kron3(&p1, &p1, &p1);
        let lap = kron3(&l1, &id, &id) + kron3(&id, &l1, &id) + kron3(&id, &id, &l1);
        let ds = [kron3(&d1, &id, &id), kron3(&id, &d1, &id), kron3(&id, &id, &d1)];
        let mut op = lap + DMatrix::from_diagonal(&DVector::from_vec(z.values().to_vec()));
        for (axis, d) in ds.iter().enumerate() {
            let diag = DMatrix::from_diagonal(&DVector::from_vec(b.component(axis).values().to_vec()));
            op += diag * d;
        }
        let eig = p.symmetric_eigen();
        let cols: Vec<DVector<f64>> = (0..eig.eigenvalues.len())
            .filter(|&i| eig.eigenvalues[i] > 0.5)
            .map(|i| eig.eigenvectors.column(i).into_owned())
            .collect();
        assert_eq!(cols.len(), (n - 1).pow(3));
        let basis = DMatrix::from_columns(&cols);
        basis.transpose() * op * &basis
    }

    fn dense_smallest_real(m: DMatrix<f64>) -> f64 {
        Schur::try_new(m, 1e-12, 1_000_000)
            .expect("dense Schur decomposition")
            .complex_eigenvalues()
            .iter()
            .filter(|e| e.im.abs() < 1e-9)
            .map(|e| e.re)
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn constant_solution_bracket() {
        let g = grid(8);
        let c = LichCoefficients::constants(&g, 1.0, 0.5, 0.5);
        let one = ScalarField::constant(&g, 1.0);
        let op = linearize(&one, &c).unwrap();
        assert!((&op.zeroth - &ScalarField::constant(&g, 2.0)).sup_norm() < 1e-14);
        assert_eq!(op.first.max_abs_component(), 0.0);
        assert_eq!(op.k_lin, 1.0);

        let shifted = linearize(&one, &c.with_a(c.a.shift(0.1))).unwrap();
        let delta = &shifted.zeroth - &op.zeroth;
        assert!((delta.max() - 0.7).abs() < 1e-14 && (delta.min() - 0.7).abs() < 1e-14);

        let pair = smallest_eigenvalue(&op, &EigenOptions::default()).unwrap();
        assert!((pair.lambda - 2.0).abs() < 1e-10);
        assert!((pair.phi.max() - pair.phi.min()) < 1e-12);
    }

    #[test]
    fn drift_with_constant_field_keeps_constant_eigenfunction() {
        let g = grid(8);
        let op = LinearizedOperator::new(
            ScalarField::constant(&g, 1.0),
            VectorField::constant(&g, &[0.3, -0.2, 0.1]),
        )
        .unwrap();
        let pair = smallest_eigenvalue(&op, &EigenOptions::default()).unwrap();
        assert!((pair.lambda - 1.0).abs() < 1e-10);
    }

    #[test]
    fn variable_zeroth_matches_dense_oracle() {
        let g = grid(8);
        let z = ScalarField::from_fn(&g, |x| 1.0 + 0.3 * x[0].sin());
        let zero = VectorField::zeros(&g);
        let op = LinearizedOperator::new(z.clone(), zero.clone()).unwrap();
        let pair = smallest_eigenvalue(&op, &EigenOptions::default()).unwrap();
        let dense = dense_smallest_real(dense_operator(8, &z, &zero));
        assert!((pair.lambda - dense).abs() < 1e-6, "{} vs {dense}", pair.lambda);
        assert!(pair.phi.min() > 0.0);

        let sym = coercivity_eigenvalue(&z, &EigenOptions::default()).unwrap();
        assert!((sym - pair.lambda).abs() < 1e-8);
    }

    #[test]
    fn nonsymmetric_case_matches_dense_oracle() {
        let g = grid(8);
        let z = ScalarField::from_fn(&g, |x| 0.8 + 0.3 * x[0].sin() - 0.2 * x[2].cos());
        let b = VectorField::new(vec![
            ScalarField::from_fn(&g, |x| 0.4 * x[1].cos()),
            ScalarField::constant(&g, 0.2),
            ScalarField::from_fn(&g, |x| 0.3 * x[0].sin()),
        ])
        .unwrap();
        let op = LinearizedOperator::new(z.clone(), b.clone()).unwrap();
        let pair = smallest_eigenvalue(&op, &EigenOptions::default()).unwrap();
        let dense = dense_smallest_real(dense_operator(8, &z, &b));
        assert!((pair.lambda - dense).abs() < 1e-6, "{} vs {dense}", pair.lambda);
        assert!(pair.phi.min() > 0.0);
        assert!(pair.residual <= 1e-8);
    }

    #[test]
    fn coercivity_examples() {
        let g = grid(8);
        let opts = EigenOptions::default();
        let one = coercivity_eigenvalue(&ScalarField::constant(&g, 1.0), &opts).unwrap();
        assert!((one - 1.0).abs() < 1e-12);
        let neg = coercivity_eigenvalue(&ScalarField::constant(&g, -0.5), &opts).unwrap();
        assert!((neg + 0.5).abs() < 1e-12);

        let h = ScalarField::from_fn(&g, |x| 0.5 + 0.4 * x[0].sin());
        let lambda = coercivity_eigenvalue(&h, &opts).unwrap();
        let dense = dense_operator(8, &h, &VectorField::zeros(&g));
        let oracle = dense.symmetric_eigen().eigenvalues.min();
        assert!(oracle > 0.0);
        assert!((lambda - oracle).abs() < 1e-8, "{lambda} vs {oracle}");
    }
}
