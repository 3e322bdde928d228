//! The vector equation `div(ρ₃ ℒW) = X` on the torus.
//!
//! Constant fields span the conformal Killing kernel, so only the zero-mean
//! part of `X` is solvable. The mean is reported as the Killing compatibility
//! defect and `W` is fixed to zero mean.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{
    conformal_killing, divergence, filter_nyquist, gradient, inverse_lame, tensor_divergence, GridRef,
    ScalarField, VectorField,
};

/// Number of random probes behind [`estimate_c1`].
pub const C1_PROBES: usize = 32;
/// Largest absolute per-axis wavenumber in a probe field.
const PROBE_BAND: i64 = 2;

/// Right side and coefficient of `div(ρ₃ ℒW) = X`.
#[derive(Debug, Clone)]
pub struct MomentumProblem {
    pub rho3: ScalarField,
    pub x: VectorField,
}

impl MomentumProblem {
    pub fn new(rho3: ScalarField, x: VectorField) -> Result<Self> {
        for c in x.components() {
            rho3.ensure_same_grid(c)?;
        }
        rho3.ensure_positive()?;
        Ok(Self { rho3, x })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelReport {
    /// Mean of `X` per component.
    pub defect: Vec<f64>,
    /// Whether a nonzero mean was removed.
    pub projected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumOptions {
    /// Sup-norm target for `div(ρ₃ℒW) - (X - mean X)`.
    pub tol: f64,
    pub max_iterations: usize,
    /// Measured operator constant, used to report the contraction bound.
    pub c1: Option<f64>,
}

impl Default for MomentumOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 500,
            c1: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LameTrace {
    pub iterations: usize,
    /// `‖ℒ(W_{k+1} - W_k)‖∞ / ‖ℒ(W_k - W_{k-1})‖∞` while above round-off.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub residual: f64,
    pub grad_rho3_sup: f64,
    pub inf_rho3: f64,
    /// `sup|∇ρ₃| Ĉ₁ / inf ρ₃` when `Ĉ₁` was supplied.
    pub contraction_bound: Option<f64>,
    /// `sup|∇ρ₃| < 1/(2Ĉ₁)` when `Ĉ₁` was supplied.
    pub gradient_hypothesis: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct LameSolution {
    pub w: VectorField,
    pub kernel: KernelReport,
    pub trace: LameTrace,
}

/// Solves `div(ρ₃ ℒW) = X - mean X` for zero-mean `W`.
///
/// Each step applies `W ← W + L⁻¹[(X' - div(ρ₃ℒW))/ρ₃]` with `L` the
/// constant-coefficient Lamé operator inverted per Fourier mode. In the
/// continuum this equals `L W_{k+1} = P₀[(X' - ℒW_k·∇ρ₃)/ρ₃]`, and it stays
/// consistent with the discrete residual where the product rule is inexact.
pub fn solve_lame(prob: &MomentumProblem, opts: &MomentumOptions) -> Result<LameSolution> {
    let defect = prob.x.means();
    let scale = prob.x.max_abs_component().max(1.0);
    let projected = defect.iter().any(|m| m.abs() > 1e-15 * scale);
    let xp = VectorField::from_components(
        prob.x.remove_mean().components().iter().map(filter_nyquist).collect(),
    );
    let rho3 = &prob.rho3;
    let grad_sup = gradient(rho3).sup_norm();
    let inv_rho = rho3.map(|v| 1.0 / v);
    let inf_rho = rho3.min();

    let mut w = VectorField::zeros(rho3.grid());
    let mut lw = conformal_killing(&w);
    let mut r = xp.clone();
    let mut residual = r.max_abs_component();
    let mut ratios = Vec::new();
    let mut prev_diff: Option<f64> = None;
    let mut growth_streak = 0;
    let mut iterations = 0;

    while residual > opts.tol {
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence {
                iterations,
                residual,
            });
        }
        let dw = inverse_lame(&r.scale_by(&inv_rho));
        let dlw = conformal_killing(&dw);
        w = &w + &dw;
        lw = &lw + &dlw;
        let diff = dlw.sup_norm();
        iterations += 1;
        let floor = 1e-13 * lw.sup_norm().max(f64::MIN_POSITIVE);
        if let Some(p) = prev_diff {
            if p > floor && diff > floor {
                let ratio = diff / p;
                ratios.push(ratio);
                growth_streak = if ratio >= 1.0 { growth_streak + 1 } else { 0 };
                if growth_streak >= 2 {
                    return Err(Error::ContractionViolated { ratio });
                }
            }
        }
        prev_diff = Some(diff);
        r = &xp - &tensor_divergence(&lw.scale_by(rho3));
        residual = r.max_abs_component();
    }

    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(LameSolution {
        w,
        kernel: KernelReport { defect, projected },
        trace: LameTrace {
            iterations,
            ratios,
            max_ratio,
            residual,
            grad_rho3_sup: grad_sup,
            inf_rho3: inf_rho,
            contraction_bound: opts.c1.map(|c| grad_sup * c / inf_rho),
            gradient_hypothesis: opts.c1.map(|c| grad_sup < 0.5 / c),
        },
    })
}

/// Random zero-mean vector field with per-axis wavenumbers in `[-2, 2]`.
pub fn band_limited_probe(grid: &GridRef, rng: &mut impl Rng) -> VectorField {
    let spec = *grid.spec();
    VectorField::from_components(
        (0..spec.dim)
            .map(|_| {
                let coeffs: Vec<Complex64> = (0..spec.node_count())
                    .map(|mode| {
                        let idx = spec.multi_index(mode);
                        let ks: Vec<i64> = idx.iter().map(|&i| spec.signed_mode(i)).collect();
                        let zero = ks.iter().all(|&k| k == 0);
                        let inside = ks.iter().all(|&k| k.abs() <= PROBE_BAND);
                        if zero || !inside {
                            Complex64::default()
                        } else {
                            let ksq: i64 = ks.iter().map(|k| k * k).sum();
                            let amp = spec.node_count() as f64 / ksq as f64;
                            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * amp
                        }
                    })
                    .collect();
                ScalarField::new(grid, grid.inverse(coeffs)).expect("finite probe")
            })
            .collect(),
    )
}

/// `‖ℒW‖∞ / ‖X‖∞` for `lame(W) = X` (largest absolute component on both sides).
pub fn c1_ratio(x: &VectorField) -> f64 {
    let lw = conformal_killing(&inverse_lame(x));
    lw.sup_norm() / x.max_abs_component()
}

/// Largest [`c1_ratio`] over `probes` seeded band-limited probe fields.
pub fn estimate_c1_with(grid: &GridRef, seed: u64, probes: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..probes)
        .map(|_| c1_ratio(&band_limited_probe(grid, &mut rng)))
        .fold(0.0, f64::max)
}

/// Discrete analogue of `‖ℒW‖ ≤ C₁‖X‖∞` measured over [`C1_PROBES`] probes.
pub fn estimate_c1(grid: &GridRef, seed: u64) -> f64 {
    estimate_c1_with(grid, seed, C1_PROBES)
}

/// `(n-1)/n · u^q ∇(Ñ div(u^q Ṽ) / u^{2q}) + π∇ψ`, composed directly from
/// spectral derivatives.
pub fn momentum_rhs(
    u: &ScalarField,
    v: &VectorField,
    lapse: &ScalarField,
    pi: &ScalarField,
    psi: &ScalarField,
) -> Result<VectorField> {
    u.ensure_positive()?;
    lapse.ensure_positive()?;
    let n = u.spec().dim as f64;
    let q = u.spec().critical_exponent();
    let uq = u.powf(q);
    let inner = drift_density(&uq, v, lapse);
    let drift = gradient(&inner).scale_by(&uq.scale((n - 1.0) / n));
    Ok(&drift + &gradient(psi).scale_by(pi))
}

/// `Ñ div(u^q Ṽ) / u^{2q}`.
fn drift_density(uq: &ScalarField, v: &VectorField, lapse: &ScalarField) -> ScalarField {
    let d = divergence(&v.scale_by(uq));
    let values = (0..uq.len())
        .map(|i| {
            let w = uq.values()[i];
            lapse.values()[i] * d.values()[i] / (w * w)
        })
        .collect();
    ScalarField::new(uq.grid(), values).expect("finite drift density")
}

/// Constant fields `e_1, …, e_n`, the conformal Killing fields of the flat torus.
pub fn torus_killing_basis(grid: &GridRef) -> Vec<VectorField> {
    (0..grid.dim())
        .map(|axis| VectorField::axis_field(ScalarField::constant(grid, 1.0), axis))
        .collect()
}

#[derive(Debug, Clone)]
pub struct QCorrection {
    pub q: VectorField,
    pub coefficients: Vec<f64>,
    /// `(1/vol) ∫⟨momentum_rhs(u, Ṽ+Q, …), P_j⟩` per basis element.
    pub defect: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// Directions dropped as degenerate.
    pub degenerate: usize,
}

/// Picks `Q` in the span of `basis` solving
/// `(n-1)/n ∫ u^{-2q} Ñ div(u^q(Ṽ+Q)) div(u^q P) = ∫⟨π∇ψ, P⟩` for every basis
/// element `P`. Directions where the Gram system is degenerate get a zero
/// coefficient.
pub fn q_correction(
    u: &ScalarField,
    v: &VectorField,
    lapse: &ScalarField,
    pi: &ScalarField,
    psi: &ScalarField,
    basis: &[VectorField],
) -> Result<QCorrection> {
    u.ensure_positive()?;
    lapse.ensure_positive()?;
    let grid = u.grid().clone();
    let n = u.spec().dim as f64;
    let q = u.spec().critical_exponent();
    let coef = (n - 1.0) / n;
    let uq = u.powf(q);
    let weight = ScalarField::new(
        &grid,
        (0..u.len())
            .map(|i| lapse.values()[i] / (uq.values()[i] * uq.values()[i]))
            .collect(),
    )?;
    let m = basis.len();
    let divs: Vec<ScalarField> = basis.iter().map(|p| divergence(&p.scale_by(&uq))).collect();
    let div_v = divergence(&v.scale_by(&uq));
    let source = gradient(psi).scale_by(pi);

    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for j in 0..m {
        let wj = &weight * &divs[j];
        for k in 0..m {
            gram[(j, k)] = coef * wj.inner(&divs[k]);
        }
        rhs[j] = source.inner(&basis[j]) - coef * wj.inner(&div_v);
    }

    // Size of the Gram entries for a field whose divergence is of unit order.
    let kappa = u.spec().base_wavenumber();
    let scale = coef * (&weight * &(&uq * &uq)).integral() * kappa * kappa;
    let eig = SymmetricEigen::new(gram);
    let cutoff = 1e-12 * scale.max(eig.eigenvalues.amax());
    let mut coefficients = DVector::<f64>::zeros(m);
    let mut degenerate = 0;
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        let vec = eig.eigenvectors.column(idx);
        if lambda.abs() <= cutoff {
            degenerate += 1;
            continue;
        }
        coefficients += vec * (vec.dot(&rhs) / lambda);
    }

    let mut qfield = VectorField::zeros(&grid);
    for (p, &c) in basis.iter().zip(coefficients.iter()) {
        qfield = &qfield + &p.scale(c);
    }
    let corrected = momentum_rhs(u, &(v + &qfield), lapse, pi, psi)?;
    let vol = u.spec().volume();
    let defect = basis.iter().map(|p| corrected.inner(p) / vol).collect();
    Ok(QCorrection {
        q: qfield,
        coefficients: coefficients.iter().copied().collect(),
        defect,
        eigenvalues: eig.eigenvalues.iter().copied().collect(),
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{lame, Grid, GridSpec};

    fn grid(points: usize) -> GridRef {
        Grid::new(GridSpec::torus(3, points).unwrap())
    }

    fn sin_e1(g: &GridRef) -> VectorField {
        VectorField::axis_field(ScalarField::from_fn(g, |x| x[0].sin()), 0)
    }

    #[test]
    fn closed_form_solve() {
        let g = grid(16);
        let prob = MomentumProblem::new(ScalarField::constant(&g, 1.0), sin_e1(&g)).unwrap();
        let sol = solve_lame(&prob, &MomentumOptions::default()).unwrap();
        let expect = VectorField::axis_field(ScalarField::from_fn(&g, |x| -0.75 * x[0].sin()), 0);
        assert!((&sol.w - &expect).max_abs_component() <= 1e-12);
        assert!(!sol.kernel.projected);

        let prob2 = MomentumProblem::new(ScalarField::constant(&g, 2.0), sin_e1(&g)).unwrap();
        let half = solve_lame(&prob2, &MomentumOptions::default()).unwrap();
        assert!((&half.w - &expect.scale(0.5)).max_abs_component() <= 1e-12);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let g = grid(8);
        let prob = MomentumProblem::new(
            ScalarField::from_fn(&g, |x| 1.0 + 0.1 * x[1].sin()),
            VectorField::zeros(&g),
        )
        .unwrap();
        let sol = solve_lame(&prob, &MomentumOptions::default()).unwrap();
        assert_eq!(sol.w.max_abs_component(), 0.0);
        assert_eq!(sol.kernel.defect, vec![0.0; 3]);
    }

    #[test]
    fn projection_consistency() {
        let g = grid(16);
        let rho = ScalarField::from_fn(&g, |x| 1.0 + 0.1 * x[1].sin());
        let x = sin_e1(&g);
        let shifted = &x + &VectorField::constant(&g, &[0.3, -0.2, 0.1]);
        let opts = MomentumOptions::default();
        let a = solve_lame(&MomentumProblem::new(rho.clone(), x).unwrap(), &opts).unwrap();
        let b = solve_lame(&MomentumProblem::new(rho, shifted).unwrap(), &opts).unwrap();
        assert!((&a.w - &b.w).max_abs_component() < 1e-13);
        assert!(b.kernel.projected);
        assert!((b.kernel.defect[0] - 0.3).abs() < 1e-13);
        for c in a.w.components() {
            assert!(c.mean().abs() < 1e-14);
        }
    }

    #[test]
    fn variable_rho_residual_and_contraction() {
        let g = grid(16);
        let rho = ScalarField::from_fn(&g, |x| 1.0 + 0.1 * x[1].sin());
        let c1 = estimate_c1(&g, 7);
        let x = VectorField::new(vec![
            ScalarField::from_fn(&g, |x| x[0].sin() + 0.3 * x[2].cos()),
            ScalarField::from_fn(&g, |x| (x[0] + x[1]).cos()),
            ScalarField::from_fn(&g, |x| 0.2 * (2.0 * x[2]).sin()),
        ])
        .unwrap();
        let opts = MomentumOptions {
            c1: Some(c1),
            ..Default::default()
        };
        let sol = solve_lame(&MomentumProblem::new(rho.clone(), x.clone()).unwrap(), &opts).unwrap();
        let back = tensor_divergence(&conformal_killing(&sol.w).scale_by(&rho));
        assert!((&back - &x.remove_mean()).max_abs_component() <= 1e-10);
        let bound = sol.trace.contraction_bound.unwrap();
        assert!(sol.trace.max_ratio <= bound + 0.05, "{} vs {bound}", sol.trace.max_ratio);
        let moved = &sol.w + &VectorField::constant(&g, &[1.0, 2.0, 3.0]);
        let back2 = tensor_divergence(&conformal_killing(&moved).scale_by(&rho));
        assert!((&back2 - &back).max_abs_component() < 1e-13);
    }

    #[test]
    fn c1_single_mode_and_scaling() {
        let g = grid(16);
        let x = sin_e1(&g);
        assert!((c1_ratio(&x) - 1.0).abs() < 1e-13);
        assert!((c1_ratio(&x.scale(10.0)) - 1.0).abs() < 1e-13);
        let few = estimate_c1_with(&g, 3, 8);
        let all = estimate_c1_with(&g, 3, 16);
        assert!(all >= few);
        assert_eq!(estimate_c1(&g, 3), estimate_c1(&g, 3));
    }

    #[test]
    fn probes_are_zero_mean_and_band_limited() {
        let g = grid(8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = band_limited_probe(&g, &mut rng);
        for c in p.components() {
            assert!(c.mean().abs() < 1e-13);
        }
        let back = lame(&inverse_lame(&p));
        assert!((&back - &p).max_abs_component() < 1e-10);
    }

    #[test]
    fn momentum_rhs_examples() {
        let g = grid(16);
        let one = ScalarField::constant(&g, 1.0);
        let zero = ScalarField::zeros(&g);
        let zv = VectorField::zeros(&g);
        let r = momentum_rhs(&one, &zv, &one, &zero, &zero).unwrap();
        assert_eq!(r.max_abs_component(), 0.0);

        let psi = ScalarField::from_fn(&g, |x| x[0].sin());
        let r = momentum_rhs(&one, &zv, &one, &one, &psi).unwrap();
        assert!((r.component(0) - &ScalarField::from_fn(&g, |x| x[0].cos())).sup_norm() < 1e-13);

        let r = momentum_rhs(&one, &sin_e1(&g), &ScalarField::constant(&g, 2.0), &zero, &zero).unwrap();
        let expect = ScalarField::from_fn(&g, |x| -4.0 / 3.0 * x[0].sin());
        assert!((r.component(0) - &expect).sup_norm() < 1e-12);
        assert!(r.component(1).sup_norm() < 1e-14);
    }

    #[test]
    fn q_correction_on_torus_basis() {
        let g = grid(16);
        let one = ScalarField::constant(&g, 1.0);
        let pi = ScalarField::constant(&g, 0.5);
        let psi = ScalarField::from_fn(&g, |x| x[1].sin());
        let v = VectorField::axis_field(ScalarField::from_fn(&g, |x| 0.1 * x[0].cos()), 0);
        let basis = torus_killing_basis(&g);
        let qc = q_correction(&one, &v, &one, &pi, &psi, &basis).unwrap();
        assert!(qc.q.max_abs_component() == 0.0);
        assert_eq!(qc.degenerate, 3);
        let rhs = momentum_rhs(&one, &v, &one, &pi, &psi).unwrap();
        for (d, m) in qc.defect.iter().zip(rhs.means()) {
            assert!((d - m).abs() < 1e-14);
        }

        let sigma = ScalarField::from_fn(&g, |x| (x[0] + x[2]).sin());
        let qc = q_correction(&one, &VectorField::zeros(&g), &one, &one, &sigma, &basis).unwrap();
        assert!(qc.defect.iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn q_correction_matches_dense_least_squares() {
        let g = grid(8);
        let u = ScalarField::from_fn(&g, |x| 1.0 + 0.2 * x[0].sin());
        let lapse = ScalarField::from_fn(&g, |x| 1.0 + 0.1 * x[1].cos());
        let zero = ScalarField::zeros(&g);
        let v = VectorField::new(vec![
            ScalarField::from_fn(&g, |x| 0.3 * x[1].sin()),
            ScalarField::from_fn(&g, |x| 0.2 * x[0].cos()),
            zero.clone(),
        ])
        .unwrap();
        let basis = vec![
            VectorField::axis_field(ScalarField::from_fn(&g, |x| x[0].sin()), 0),
            VectorField::axis_field(ScalarField::from_fn(&g, |x| x[1].cos()), 1),
        ];
        let qc = q_correction(&u, &v, &lapse, &zero, &zero, &basis).unwrap();

        // Minimize ∫ w (div(u^q(V+P)))² directly as a weighted least-squares problem.
        let uq = u.powf(6.0);
        let w: Vec<f64> = (0..u.len())
            .map(|i| (lapse.values()[i] / uq.values()[i].powi(2)).sqrt())
            .collect();
        let cols: Vec<ScalarField> = basis.iter().map(|p| divergence(&p.scale_by(&uq))).collect();
        let dv = divergence(&v.scale_by(&uq));
        let a = DMatrix::from_fn(u.len(), 2, |i, j| w[i] * cols[j].values()[i]);
        let b = DVector::from_fn(u.len(), |i, _| -w[i] * dv.values()[i]);
        let sol = a.svd(true, true).solve(&b, 1e-14).unwrap();
        for j in 0..2 {
            assert!((qc.coefficients[j] - sol[j]).abs() < 1e-10 * sol[j].abs().max(1.0));
        }
        assert_eq!(qc.degenerate, 0);
    }
}
