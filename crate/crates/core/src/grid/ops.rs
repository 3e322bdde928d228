use num_complex::Complex64;

use super::field::{ScalarField, SymTensorField, VectorField};
use super::{Grid, GridRef};

const I: Complex64 = Complex64::new(0.0, 1.0);

fn from_coeffs(grid: &GridRef, coeffs: Vec<Complex64>) -> ScalarField {
    ScalarField::from_raw(grid, grid.inverse(coeffs))
}

/// Multiplies the Fourier coefficients of `u` by a real symbol.
pub fn apply_symbol(u: &ScalarField, symbol: impl Fn(&Grid, usize) -> f64) -> ScalarField {
    let grid = u.grid();
    let mut coeffs = grid.forward(u.values());
    for (mode, c) in coeffs.iter_mut().enumerate() {
        *c *= symbol(grid, mode);
    }
    from_coeffs(grid, coeffs)
}

/// `∂u/∂x_axis`.
pub fn partial(u: &ScalarField, axis: usize) -> ScalarField {
    let grid = u.grid();
    let coeffs = grid.forward(u.values());
    derivative_from_coeffs(grid, &coeffs, axis)
}

fn derivative_from_coeffs(grid: &GridRef, coeffs: &[Complex64], axis: usize) -> ScalarField {
    let k = grid.wavenumbers(axis);
    let out = coeffs.iter().zip(k).map(|(c, &k)| c * I * k).collect();
    from_coeffs(grid, out)
}

pub fn gradient(u: &ScalarField) -> VectorField {
    let grid = u.grid();
    let coeffs = grid.forward(u.values());
    VectorField::from_components(
        (0..grid.dim())
            .map(|axis| derivative_from_coeffs(grid, &coeffs, axis))
            .collect(),
    )
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = v.grid();
    let mut acc = vec![Complex64::default(); grid.node_count()];
    for (axis, comp) in v.components().iter().enumerate() {
        let coeffs = grid.forward(comp.values());
        for ((a, c), &k) in acc.iter_mut().zip(&coeffs).zip(grid.wavenumbers(axis)) {
            *a += c * I * k;
        }
    }
    from_coeffs(grid, acc)
}

/// Positive Laplacian `Δu = -div ∇u`, Fourier symbol `+|k|²`.
pub fn laplacian(u: &ScalarField) -> ScalarField {
    apply_symbol(u, |g, m| g.laplace_symbol()[m])
}

/// Second derivatives `∂_i ∂_j u`.
pub fn hessian(u: &ScalarField) -> SymTensorField {
    let grid = u.grid();
    let coeffs = grid.forward(u.values());
    SymTensorField::from_entries(grid.dim(), |i, j| {
        let (ki, kj) = (grid.wavenumbers(i), grid.wavenumbers(j));
        let out = coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| c * (-ki[m] * kj[m]))
            .collect();
        from_coeffs(grid, out)
    })
}

/// Jacobian `∂_j W_i`, indexed `[i][j]`.
pub fn jacobian(w: &VectorField) -> Vec<Vec<ScalarField>> {
    w.components()
        .iter()
        .map(|c| gradient(c).into_components())
        .collect()
}

/// Conformal Killing operator `(ℒW)_ij = ∂_i W_j + ∂_j W_i - (2/n) div W δ_ij`.
pub fn conformal_killing(w: &VectorField) -> SymTensorField {
    let n = w.dim();
    let jac = jacobian(w);
    let mut div = jac[0][0].clone();
    for (i, row) in jac.iter().enumerate().skip(1) {
        div = &div + &row[i];
    }
    let iso = div.scale(2.0 / n as f64);
    SymTensorField::from_entries(n, |i, j| {
        let sym = &jac[j][i] + &jac[i][j];
        if i == j {
            &sym - &iso
        } else {
            sym
        }
    })
}

/// Row divergence `∂_j T_ij`.
pub fn tensor_divergence(t: &SymTensorField) -> VectorField {
    let grid = t.grid();
    let n = t.dim();
    let transformed: Vec<Vec<Complex64>> = t
        .components()
        .iter()
        .map(|c| grid.forward(c.values()))
        .collect();
    VectorField::from_components(
        (0..n)
            .map(|i| {
                let mut acc = vec![Complex64::default(); grid.node_count()];
                for j in 0..n {
                    let coeffs = &transformed[SymTensorField::index(n, i, j)];
                    for ((a, c), &k) in acc.iter_mut().zip(coeffs).zip(grid.wavenumbers(j)) {
                        *a += c * I * k;
                    }
                }
                from_coeffs(grid, acc)
            })
            .collect(),
    )
}

fn lame_block_apply(grid: &Grid, mode: usize, w: &[Complex64], out: &mut [Complex64]) {
    let n = grid.dim();
    let beta = 1.0 - 2.0 / n as f64;
    let ksq = grid.laplace_symbol()[mode];
    let kdotw: Complex64 = (0..n).map(|l| w[l] * grid.wavenumbers(l)[mode]).sum();
    for j in 0..n {
        out[j] = -(w[j] * ksq + kdotw * (beta * grid.wavenumbers(j)[mode]));
    }
}

fn lame_block_solve(grid: &Grid, mode: usize, x: &[Complex64], out: &mut [Complex64]) {
    let n = grid.dim();
    let ksq = grid.laplace_symbol()[mode];
    if ksq == 0.0 {
        out.iter_mut().for_each(|o| *o = Complex64::default());
        return;
    }
    let beta = 1.0 - 2.0 / n as f64;
    let gamma = beta / (1.0 + beta) / ksq;
    let kdotx: Complex64 = (0..n).map(|l| x[l] * grid.wavenumbers(l)[mode]).sum();
    for j in 0..n {
        out[j] = -(x[j] - kdotx * (gamma * grid.wavenumbers(j)[mode])) / ksq;
    }
}

fn blockwise(
    v: &VectorField,
    block: impl Fn(&Grid, usize, &[Complex64], &mut [Complex64]),
) -> VectorField {
    let grid = v.grid();
    let n = v.dim();
    let coeffs: Vec<Vec<Complex64>> = v
        .components()
        .iter()
        .map(|c| grid.forward(c.values()))
        .collect();
    let mut out = vec![vec![Complex64::default(); grid.node_count()]; n];
    let mut src = vec![Complex64::default(); n];
    let mut dst = vec![Complex64::default(); n];
    for mode in 0..grid.node_count() {
        for l in 0..n {
            src[l] = coeffs[l][mode];
        }
        block(grid, mode, &src, &mut dst);
        for l in 0..n {
            out[l][mode] = dst[l];
        }
    }
    VectorField::from_components(out.into_iter().map(|c| from_coeffs(grid, c)).collect())
}

/// Lamé operator `div(ℒW)`, applied per Fourier mode as the block
/// `-(|k|² δ_jl + (1 - 2/n) k_j k_l)`.
pub fn lame(w: &VectorField) -> VectorField {
    blockwise(w, lame_block_apply)
}

/// Zero-mean solution `W` of `lame(W) = X - mean X`.
pub fn inverse_lame(x: &VectorField) -> VectorField {
    blockwise(x, lame_block_solve)
}

/// Solves `Δu + σu = rhs` spectrally. For `σ = 0` the mean of `rhs` is
/// discarded and the zero-mean solution is returned.
pub fn solve_shifted_laplacian(rhs: &ScalarField, sigma: f64) -> ScalarField {
    apply_symbol(rhs, |g, m| {
        let s = g.laplace_symbol()[m] + sigma;
        if s == 0.0 {
            0.0
        } else {
            1.0 / s
        }
    })
}

/// Removes every Fourier mode that touches the Nyquist bin.
pub fn filter_nyquist(u: &ScalarField) -> ScalarField {
    apply_symbol(u, |g, m| if g.is_nyquist(m) { 0.0 } else { 1.0 })
}

/// Removes modes with `|k_axis| > N/3` on any axis (2/3-rule dealiasing).
pub fn dealias_two_thirds(u: &ScalarField) -> ScalarField {
    let spec = *u.spec();
    let cutoff = spec.points as i64 / 3;
    apply_symbol(u, move |_, m| {
        let keep = spec
            .multi_index(m)
            .into_iter()
            .all(|i| spec.signed_mode(i).abs() <= cutoff);
        if keep {
            1.0
        } else {
            0.0
        }
    })
}

/// Trigonometric interpolation of `u` onto a grid with `points` nodes per
/// axis. Modes that are Nyquist on either grid are dropped.
pub fn resample(u: &ScalarField, points: usize) -> crate::error::Result<ScalarField> {
    let spec = *u.spec();
    let target = Grid::new(super::GridSpec::new(spec.dim, points, spec.period)?);
    let coeffs = u.grid().forward(u.values());
    let limit = spec.points.min(points) as i64 / 2;
    let scale = (points as f64 / spec.points as f64).powi(spec.dim as i32);
    let tspec = *target.spec();
    let mut out = vec![Complex64::default(); tspec.node_count()];
    for (mode, slot) in out.iter_mut().enumerate() {
        let ks: Vec<i64> = tspec
            .multi_index(mode)
            .into_iter()
            .map(|i| tspec.signed_mode(i))
            .collect();
        if ks.iter().any(|k| k.abs() >= limit) {
            continue;
        }
        let source = ks.iter().fold(0usize, |acc, &k| {
            acc * spec.points + k.rem_euclid(spec.points as i64) as usize
        });
        *slot = coeffs[source] * scale;
    }
    ScalarField::new(&target, target.inverse(out))
}

/// Pointwise `⟨∇u, Y⟩`.
pub fn grad_dot(u: &ScalarField, y: &VectorField) -> ScalarField {
    gradient(u).dot(y)
}

/// Pointwise `|∇u|²`.
pub fn grad_norm_squared(u: &ScalarField) -> ScalarField {
    gradient(u).norm_squared()
}

/// `sup|∇u|`.
pub fn grad_sup(u: &ScalarField) -> f64 {
    gradient(u).sup_norm()
}

/// Sup of the pointwise Frobenius norm of the Hessian.
pub fn hessian_sup(u: &ScalarField) -> f64 {
    hessian(u).norm_squared().max().max(0.0).sqrt()
}

/// `‖u‖∞ + ‖∇u‖∞`, the surrogate for Hölder `C^{0,γ}` norms.
pub fn c0_surrogate(u: &ScalarField) -> f64 {
    u.sup_norm() + grad_sup(u)
}

/// `‖u‖∞ + ‖∇u‖∞ + ‖∇²u‖∞`, the surrogate for `C^{1,γ}` and `C²` norms.
pub fn c2_surrogate(u: &ScalarField) -> f64 {
    c0_surrogate(u) + hessian_sup(u)
}

/// All norms reported for a field.
pub fn norms(u: &ScalarField) -> super::Norms {
    super::Norms {
        sup: u.sup_norm(),
        grad_sup: grad_sup(u),
        l1: u.l1_norm(),
        l2: u.l2_norm(),
        mean: u.mean(),
        min: u.min(),
    }
}
