use serde::Serialize;

use super::field::{ScalarField, VectorField};
use super::ops::{gradient, laplacian, solve_shifted_laplacian};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearOptions {
    /// Target relative residual `‖b - Ax‖₂ / ‖b‖₂`.
    pub tol: f64,
    /// Krylov dimension between restarts.
    pub restart: usize,
    /// Cap on total Krylov steps.
    pub max_iterations: usize,
}

impl Default for LinearOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            restart: 60,
            max_iterations: 3000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GmresStats {
    pub iterations: usize,
    pub restarts: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Right-preconditioned restarted GMRES for `A x = b`.
///
/// `precond` applies an approximate inverse of `A`. The residual used for the
/// stopping test is recomputed from scratch at every restart, so the reported
/// value is the true residual rather than the Arnoldi estimate.
pub fn gmres(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    mut precond: impl FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &LinearOptions,
) -> Result<(Vec<f64>, GmresStats)> {
    let len = b.len();
    let bnorm = norm(b);
    let mut x = x0.map_or_else(|| vec![0.0; len], <[f64]>::to_vec);
    if bnorm == 0.0 && x0.is_none() {
        return Ok((
            x,
            GmresStats {
                iterations: 0,
                restarts: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    let m = opts.restart.max(1);
    let mut total = 0;
    let mut restarts = 0;

    loop {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        let rel = beta / scale;
        if rel <= opts.tol {
            return Ok((
                x,
                GmresStats {
                    iterations: total,
                    restarts,
                    relative_residual: rel,
                },
            ));
        }
        if total >= opts.max_iterations {
            return Err(Error::NonConvergence {
                iterations: total,
                residual: rel,
            });
        }

        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut hess = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut steps = 0;

        for j in 0..m {
            if total >= opts.max_iterations {
                break;
            }
            total += 1;
            let mut w = apply(&precond(&basis[j]));
            // Two passes of modified Gram-Schmidt keep the basis orthogonal
            // down to the tolerances required here.
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let h = dot(&w, v);
                    hess[i][j] += h;
                    axpy(-h, v, &mut w);
                }
            }
            let wn = norm(&w);
            hess[j + 1][j] = wn;

            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let denom = hess[j][j].hypot(hess[j + 1][j]);
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = hess[j][j] / denom;
                sn[j] = hess[j + 1][j] / denom;
            }
            hess[j][j] = denom;
            hess[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            steps = j + 1;

            let breakdown = wn <= f64::MIN_POSITIVE;
            if g[j + 1].abs() / scale <= 0.1 * opts.tol || breakdown {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }

        // Back substitution for the least-squares coefficients.
        let mut y = vec![0.0; steps];
        for i in (0..steps).rev() {
            let mut s = g[i];
            for k in i + 1..steps {
                s -= hess[i][k] * y[k];
            }
            y[i] = if hess[i][i] != 0.0 { s / hess[i][i] } else { 0.0 };
        }
        let mut update = vec![0.0; len];
        for (yi, v) in y.iter().zip(&basis) {
            axpy(*yi, v, &mut update);
        }
        let correction = precond(&update);
        axpy(1.0, &correction, &mut x);
        restarts += 1;
        if steps == 0 {
            return Err(Error::NonConvergence {
                iterations: total,
                residual: rel,
            });
        }
    }
}

/// Applies `u ↦ Δu + Hu + ⟨∇u, B⟩`.
pub fn apply_scalar_operator(
    u: &ScalarField,
    h: &ScalarField,
    b: Option<&VectorField>,
) -> ScalarField {
    let mut out = &laplacian(u) + &(h * u);
    if let Some(b) = b {
        out = &out + &gradient(u).dot(b);
    }
    out
}

fn is_zero_vector(b: &VectorField) -> bool {
    b.components().iter().all(|c| c.is_identically(0.0))
}

/// Solves `Δu + Hu + ⟨∇u, B⟩ = rhs`.
///
/// Constant `H` with vanishing `B` is inverted directly in Fourier space.
/// Everything else goes through GMRES preconditioned by the spectral inverse
/// of `Δ + σ`, with `σ` the mean of `H` when positive.
pub fn solve_scalar_linear(
    h: &ScalarField,
    b: &VectorField,
    rhs: &ScalarField,
    x0: Option<&ScalarField>,
    opts: &LinearOptions,
) -> Result<ScalarField> {
    h.ensure_same_grid(rhs)?;
    let grid = rhs.grid().clone();
    let drift_free = is_zero_vector(b);
    let hmin = h.min();
    let hmax = h.max();

    if drift_free && hmin == hmax {
        let sigma = hmin;
        if sigma == 0.0 {
            let mean = rhs.mean();
            if mean.abs() > 1e-13 * rhs.sup_norm().max(1.0) {
                return Err(Error::SingularOperator(format!(
                    "H = 0 and B = 0 but the right side has mean {mean:e}"
                )));
            }
        }
        if sigma < 0.0 {
            let hits = grid.laplace_symbol().iter().any(|&s| (s + sigma).abs() < 1e-12);
            if hits {
                return Err(Error::SingularOperator(format!(
                    "-H = {} is an eigenvalue of the Laplacian",
                    -sigma
                )));
            }
        }
        return Ok(solve_shifted_laplacian(rhs, sigma));
    }

    let mean_h = h.mean();
    let sigma = if mean_h > 0.0 { mean_h } else { 1.0 };
    let bref = (!drift_free).then_some(b);
    let apply = |v: &[f64]| {
        let u = ScalarField::from_raw(&grid, v.to_vec());
        apply_scalar_operator(&u, h, bref).into_values()
    };
    let precond = |v: &[f64]| {
        let r = ScalarField::from_raw(&grid, v.to_vec());
        solve_shifted_laplacian(&r, sigma).into_values()
    };
    let (x, _) = gmres(
        apply,
        precond,
        rhs.values(),
        x0.map(ScalarField::values),
        opts,
    )?;
    ScalarField::new(&grid, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, GridSpec};

    fn grid() -> crate::grid::GridRef {
        Grid::new(GridSpec::torus(3, 8).unwrap())
    }

    #[test]
    fn constant_coefficient_examples() {
        let g = grid();
        let one = ScalarField::constant(&g, 1.0);
        let zero_b = VectorField::zeros(&g);
        let opts = LinearOptions::default();
        let u = solve_scalar_linear(&one, &zero_b, &ScalarField::from_fn(&g, |x| x[0].sin()), None, &opts)
            .unwrap();
        let expect = ScalarField::from_fn(&g, |x| 0.5 * x[0].sin());
        assert!((&u - &expect).sup_norm() < 1e-14);
        let u = solve_scalar_linear(&one, &zero_b, &ScalarField::constant(&g, 3.0), None, &opts)
            .unwrap();
        assert!((&u - &ScalarField::constant(&g, 3.0)).sup_norm() < 1e-14);
    }

    #[test]
    fn singular_operator_detected() {
        let g = grid();
        let err = solve_scalar_linear(
            &ScalarField::zeros(&g),
            &VectorField::zeros(&g),
            &ScalarField::constant(&g, 1.0),
            None,
            &LinearOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularOperator(_)));
    }

    #[test]
    fn variable_coefficients_with_drift_reach_tolerance() {
        let g = grid();
        let h = ScalarField::from_fn(&g, |x| 1.0 + 0.5 * x[0].sin());
        let b = VectorField::from_components(vec![
            ScalarField::from_fn(&g, |x| 0.3 * x[1].cos()),
            ScalarField::constant(&g, 0.2),
            ScalarField::zeros(&g),
        ]);
        let rhs = ScalarField::from_fn(&g, |x| 1.0 + (x[0] + x[2]).sin());
        let u = solve_scalar_linear(&h, &b, &rhs, None, &LinearOptions::default()).unwrap();
        let res = &apply_scalar_operator(&u, &h, Some(&b)) - &rhs;
        let rel = res.l2_norm() / rhs.l2_norm();
        assert!(rel <= 1e-12, "relative residual {rel:e}");
    }

    #[test]
    fn gmres_on_small_dense_system() {
        let a = [[4.0, 1.0, 0.0], [2.0, 5.0, 1.0], [0.0, -1.0, 3.0]];
        let apply = |x: &[f64]| {
            (0..3)
                .map(|i| (0..3).map(|j| a[i][j] * x[j]).sum())
                .collect::<Vec<f64>>()
        };
        let b = [1.0, 2.0, 3.0];
        let (x, stats) = gmres(apply, |v| v.to_vec(), &b, None, &LinearOptions::default()).unwrap();
        let r: f64 = apply(&x).iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum();
        assert!(r.sqrt() < 1e-12);
        assert!(stats.iterations <= 3);
    }
}
