//! Minimal positive solutions of the Lichnerowicz-type equation
//!
//! ```text
//! Δu + hu - f u^{q-1} - a u^{-q-1} + b/u + ⟨∇u,Y⟩² u^{-q-3}
//!     + c⟨∇u,Y⟩ (d u^{-2} + u^{-q-2}) = 0
//! ```
//!
//! by monotone iteration from the constant subsolution `ε₀` towards a given
//! supersolution `ψ`. Every iterate solves a generalized semilinear equation
//! with a quadratic gradient term (see [`solve_gen_eq`]).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{
    gradient, laplacian, solve_scalar_linear, GridRef, LinearOptions, ScalarField, VectorField,
};

/// `x^p`, through `exp(p ln x)` when `p` is not an integer.
pub(crate) fn pw(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < 64.0 {
        x.powi(p as i32)
    } else {
        (p * x.ln()).exp()
    }
}

/// Coefficients `(a, b, c, d, f, h, Y)` of the scalar equation.
#[derive(Debug, Clone)]
pub struct LichCoefficients {
    pub a: ScalarField,
    pub b: ScalarField,
    pub c: ScalarField,
    pub d: ScalarField,
    pub f: ScalarField,
    pub h: ScalarField,
    pub y: VectorField,
}

impl LichCoefficients {
    /// Validates the grid and the positivity of `a` and `f`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: ScalarField,
        b: ScalarField,
        c: ScalarField,
        d: ScalarField,
        f: ScalarField,
        h: ScalarField,
        y: VectorField,
    ) -> Result<Self> {
        let coeffs = Self {
            a,
            b,
            c,
            d,
            f,
            h,
            y,
        };
        coeffs.validate()?;
        Ok(coeffs)
    }

    /// Constant `h`, `f`, `a` with `b = c = d = 0` and `Y = 0`.
    pub fn constants(grid: &GridRef, h: f64, f: f64, a: f64) -> Self {
        let zero = ScalarField::zeros(grid);
        Self {
            a: ScalarField::constant(grid, a),
            b: zero.clone(),
            c: zero.clone(),
            d: zero,
            f: ScalarField::constant(grid, f),
            h: ScalarField::constant(grid, h),
            y: VectorField::zeros(grid),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for field in [&self.b, &self.c, &self.d, &self.f, &self.h] {
            self.a.ensure_same_grid(field)?;
        }
        for comp in self.y.components() {
            self.a.ensure_same_grid(comp)?;
        }
        if self.a.min() <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "a must be positive, inf a = {}",
                self.a.min()
            )));
        }
        if self.f.min() <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "f must be positive, inf f = {}",
                self.f.min()
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &GridRef {
        self.a.grid()
    }

    pub fn exponent(&self) -> f64 {
        self.a.spec().critical_exponent()
    }

    pub fn with_a(&self, a: ScalarField) -> Self {
        Self { a, ..self.clone() }
    }

    pub fn with_b(&self, b: ScalarField) -> Self {
        Self { b, ..self.clone() }
    }

    fn has_drift(&self) -> bool {
        !self.y.components().iter().all(|c| c.is_identically(0.0))
    }
}

/// Full left side of the scalar equation at `u`. A supersolution makes this
/// nonnegative.
pub fn scalar_residual(u: &ScalarField, coeffs: &LichCoefficients) -> Result<ScalarField> {
    u.ensure_positive()?;
    let q = coeffs.exponent();
    let lap = laplacian(u);
    let gy = if coeffs.has_drift() {
        Some(gradient(u).dot(&coeffs.y))
    } else {
        None
    };
    let values = (0..u.len())
        .map(|i| {
            let t = u.values()[i];
            let mut r = lap.values()[i] + coeffs.h.values()[i] * t
                - coeffs.f.values()[i] * pw(t, q - 1.0)
                - coeffs.a.values()[i] * pw(t, -q - 1.0)
                + coeffs.b.values()[i] / t;
            if let Some(gy) = &gy {
                let g = gy.values()[i];
                r += g * g * pw(t, -q - 3.0)
                    + coeffs.c.values()[i] * g * (coeffs.d.values()[i] / (t * t) + pw(t, -q - 2.0));
            }
            r
        })
        .collect();
    ScalarField::new(u.grid(), values)
}

/// `0.9 ×` the largest `ε` with `ε < inf ψ`, `(sup h) ε^{q+2} < inf a / 2` and
/// `(sup b) ε^q < inf a / 2`. Nonpositive `sup h` or `sup b` impose no bound.
pub fn pick_epsilon0(psi: &ScalarField, coeffs: &LichCoefficients) -> Result<f64> {
    let inf_psi = psi.min();
    if inf_psi <= 0.0 {
        return Err(Error::NoSubsolution { inf_psi });
    }
    let q = coeffs.exponent();
    let inf_a = coeffs.a.min();
    let mut eps = inf_psi;
    let sup_h = coeffs.h.max();
    if sup_h > 0.0 {
        eps = eps.min(pw(inf_a / (2.0 * sup_h), 1.0 / (q + 2.0)));
    }
    let sup_b = coeffs.b.max();
    if sup_b > 0.0 {
        eps = eps.min(pw(inf_a / (2.0 * sup_b), 1.0 / q));
    }
    Ok(0.9 * eps)
}

/// The three lower bounds on `K` and the chosen value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KChoice {
    /// Sup of the monotonicity bracket over nodes and the `t`-grid.
    pub bracket: f64,
    /// `-inf h`, so that `h + K > 0`.
    pub h_positive: f64,
    /// Sup of `(-f t^{q-1} - a t^{-q-1} + b/t) / t`, so that `F < 0`.
    pub f_negative: f64,
    pub k: f64,
}

/// `t`-grid resolution used by [`compute_k`].
pub const K_GRID_POINTS: usize = 256;

fn geometric_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 || hi <= lo {
        return vec![lo];
    }
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    (0..points).map(|j| lo * (ratio * j as f64).exp()).collect()
}

/// Chooses `K` on the default 256-point geometric `t`-grid.
pub fn compute_k(coeffs: &LichCoefficients, eps0: f64, sup_psi: f64) -> f64 {
    compute_k_detailed(coeffs, eps0, sup_psi, K_GRID_POINTS).k
}

/// Chooses `K` on a `points`-point geometric grid in `[ε₀, sup ψ]`.
///
/// The result is `m + 0.1|m|` where `m` is the largest of the three bounds in
/// [`KChoice`], floored at `1e-12` so that `K > 0`.
pub fn compute_k_detailed(
    coeffs: &LichCoefficients,
    eps0: f64,
    sup_psi: f64,
    points: usize,
) -> KChoice {
    let q = coeffs.exponent();
    let ts = geometric_grid(eps0, sup_psi.max(eps0), points);
    let powers: Vec<[f64; 7]> = ts
        .iter()
        .map(|&t| {
            [
                pw(t, q - 2.0),
                pw(t, -q - 2.0),
                1.0 / (t * t),
                pw(t, -q - 3.0),
                pw(t, q + 4.0),
                pw(t, q - 1.0),
                pw(t, -q - 1.0),
            ]
        })
        .collect();

    let mut bracket = f64::NEG_INFINITY;
    let mut f_negative = f64::NEG_INFINITY;
    for i in 0..coeffs.a.len() {
        let (a, b, c, d, f) = (
            coeffs.a.values()[i],
            coeffs.b.values()[i],
            coeffs.c.values()[i],
            coeffs.d.values()[i],
            coeffs.f.values()[i],
        );
        for (&t, p) in ts.iter().zip(&powers) {
            let mut val = -(q - 1.0) * f * p[0] + (q + 1.0) * a * p[1] - b * p[2];
            if c != 0.0 {
                let inner = 2.0 * d / (t * t * t) + (q + 2.0) * p[3];
                val += c * c * inner * inner * p[4] / (4.0 * (q + 3.0));
            }
            bracket = bracket.max(val);
            let f0 = -f * p[5] - a * p[6] + b / t;
            f_negative = f_negative.max(f0 / t);
        }
    }
    let h_positive = -coeffs.h.min();
    let m = bracket.max(h_positive).max(f_negative);
    let k = (m + 0.1 * m.abs()).max(1e-12);
    KChoice {
        bracket,
        h_positive,
        f_negative,
        k,
    }
}

/// Data `(H, θ₁, θ₂, θ₃, Z)` of
/// `Δu + Hu + θ₁⟨∇u,Z⟩² + θ₂⟨∇u,Z⟩ + θ₃ = 0`.
#[derive(Debug, Clone)]
pub struct GenEqData {
    pub h: ScalarField,
    pub theta1: ScalarField,
    pub theta2: ScalarField,
    pub theta3: ScalarField,
    pub z: VectorField,
}

impl GenEqData {
    /// Checks `inf H > 0`, `inf θ₁ > 0` and `sup θ₃ < 0`.
    pub fn new(
        h: ScalarField,
        theta1: ScalarField,
        theta2: ScalarField,
        theta3: ScalarField,
        z: VectorField,
    ) -> Result<Self> {
        for f in [&theta1, &theta2, &theta3] {
            h.ensure_same_grid(f)?;
        }
        if h.min() <= 0.0 {
            return Err(Error::InvalidInput(format!("H must be positive, inf H = {}", h.min())));
        }
        if theta1.min() <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "theta1 must be positive, inf theta1 = {}",
                theta1.min()
            )));
        }
        if theta3.max() >= 0.0 {
            return Err(Error::InvalidInput(format!(
                "theta3 must be negative, sup theta3 = {}",
                theta3.max()
            )));
        }
        Ok(Self {
            h,
            theta1,
            theta2,
            theta3,
            z,
        })
    }

    fn has_drift(&self) -> bool {
        !self.z.components().iter().all(|c| c.is_identically(0.0))
    }

    /// Pointwise residual of the generalized equation.
    pub fn residual(&self, u: &ScalarField) -> ScalarField {
        let mut r = &laplacian(u) + &(&self.h * u);
        r = &r + &self.theta3;
        if self.has_drift() {
            let g = gradient(u).dot(&self.z);
            let values = (0..u.len())
                .map(|i| {
                    let gz = g.values()[i];
                    r.values()[i] + self.theta1.values()[i] * gz * gz + self.theta2.values()[i] * gz
                })
                .collect();
            r = ScalarField::from_raw(u.grid(), values);
        }
        r
    }

    /// `inf(-θ₃/H)` and `sup(-θ₃/H)`, the maximum-principle bounds.
    pub fn a_priori_bounds(&self) -> (f64, f64) {
        let ratio = self.theta3.zip_map(&self.h, |t, h| -t / h);
        (ratio.min(), ratio.max())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    /// Sup-norm residual target.
    pub tol: f64,
    pub max_newton: usize,
    pub max_picard: usize,
    pub linear: LinearOptions,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_newton: 50,
            max_picard: 500,
            linear: LinearOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerStats {
    pub newton_steps: usize,
    pub picard_steps: usize,
    pub residual: f64,
}

fn newton(
    data: &GenEqData,
    init: &ScalarField,
    opts: &InnerOptions,
) -> Result<(ScalarField, InnerStats)> {
    let grid = init.grid().clone();
    let drift = data.has_drift();
    let mut u = init.clone();
    let mut r = data.residual(&u);
    let mut rnorm = r.sup_norm();
    let mut steps = 0;
    let mut polished = 0;

    while steps < opts.max_newton {
        if rnorm <= opts.tol {
            // A couple of extra steps push the error to round-off, which the
            // outer ordering checks rely on.
            if polished >= 2 || rnorm <= 1e-3 * opts.tol {
                break;
            }
            polished += 1;
        }
        let b = if drift {
            let gz = gradient(&u).dot(&data.z);
            let w = (0..u.len())
                .map(|i| 2.0 * data.theta1.values()[i] * gz.values()[i] + data.theta2.values()[i])
                .collect();
            data.z.scale_by(&ScalarField::from_raw(&grid, w))
        } else {
            VectorField::zeros(&grid)
        };
        let delta = solve_scalar_linear(&data.h, &b, &r.scale(-1.0), None, &opts.linear)?;
        steps += 1;

        let mut alpha = 1.0;
        let accepted = loop {
            let trial = &u + &delta.scale(alpha);
            let tr = data.residual(&trial);
            let tn = tr.sup_norm();
            if tn.is_finite() && tn <= (1.0 - 1e-4 * alpha) * rnorm {
                break Some((trial, tr, tn));
            }
            alpha *= 0.5;
            if alpha < 1.0 / 64.0 {
                break None;
            }
        };
        match accepted {
            Some((trial, tr, tn)) => {
                u = trial;
                r = tr;
                rnorm = tn;
            }
            None if rnorm <= opts.tol => break,
            None => {
                return Err(Error::NonConvergence {
                    iterations: steps,
                    residual: rnorm,
                })
            }
        }
    }
    if rnorm <= opts.tol {
        Ok((
            u,
            InnerStats {
                newton_steps: steps,
                picard_steps: 0,
                residual: rnorm,
            },
        ))
    } else {
        Err(Error::NonConvergence {
            iterations: steps,
            residual: rnorm,
        })
    }
}

/// The fixed-point map `T`: solves `Δv + Hv = -θ₁⟨∇u,Z⟩² - θ₂⟨∇u,Z⟩ - θ₃`.
fn picard(
    data: &GenEqData,
    init: &ScalarField,
    opts: &InnerOptions,
) -> Result<(ScalarField, InnerStats)> {
    let grid = init.grid().clone();
    let zero_b = VectorField::zeros(&grid);
    let mut u = init.clone();
    for step in 1..=opts.max_picard {
        let gz = gradient(&u).dot(&data.z);
        let rhs = (0..u.len())
            .map(|i| {
                let g = gz.values()[i];
                -data.theta1.values()[i] * g * g - data.theta2.values()[i] * g - data.theta3.values()[i]
            })
            .collect();
        u = solve_scalar_linear(
            &data.h,
            &zero_b,
            &ScalarField::from_raw(&grid, rhs),
            Some(&u),
            &opts.linear,
        )?;
        let rnorm = data.residual(&u).sup_norm();
        if !rnorm.is_finite() {
            break;
        }
        if rnorm <= opts.tol {
            return Ok((
                u,
                InnerStats {
                    newton_steps: 0,
                    picard_steps: step,
                    residual: rnorm,
                },
            ));
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_picard,
        residual: data.residual(&u).sup_norm(),
    })
}

/// Solves the generalized equation by damped Newton from `init`, falling back
/// to the Picard map `T` (and then Newton again from its output) when Newton
/// stalls.
pub fn solve_gen_eq(
    data: &GenEqData,
    init: &ScalarField,
    opts: &InnerOptions,
) -> Result<(ScalarField, InnerStats)> {
    match newton(data, init, opts) {
        Ok(out) => Ok(out),
        Err(first) => {
            let relaxed = InnerOptions {
                tol: opts.tol.max(1e-6),
                ..*opts
            };
            let (start, pstats) = match picard(data, init, &relaxed) {
                Ok(out) => out,
                Err(_) => return Err(first),
            };
            let (u, nstats) = newton(data, &start, opts)?;
            Ok((
                u,
                InnerStats {
                    newton_steps: nstats.newton_steps,
                    picard_steps: pstats.picard_steps,
                    residual: nstats.residual,
                },
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotoneOptions {
    /// Sup-norm target for the scalar-equation residual.
    pub tol_outer: f64,
    /// Sup-norm target for successive iterates and for the extrapolated
    /// distance to the limit.
    pub step_tol: f64,
    pub max_outer: usize,
    /// Slack allowed on the supersolution sign of `ψ`.
    pub supersolution_tol: f64,
    pub inner: InnerOptions,
}

impl Default for MonotoneOptions {
    fn default() -> Self {
        Self {
            tol_outer: 1e-9,
            step_tol: 1e-10,
            max_outer: 500,
            supersolution_tol: 1e-8,
            inner: InnerOptions::default(),
        }
    }
}

/// Slack on the nondecrease of successive iterates.
pub const ORDER_SLACK: f64 = 1e-12;
/// Slack on the upper barrier `u_i ≤ ψ`.
pub const BARRIER_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneTrace {
    pub iterate_count: usize,
    pub epsilon0: f64,
    pub k: KChoice,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    /// `sup|u_i - u_{i-1}|` for `i ≥ 1`.
    pub steps: Vec<f64>,
    pub inner_newton_steps: usize,
    pub inner_picard_steps: usize,
    pub final_residual: f64,
    /// Geometric extrapolation of the remaining distance to the limit.
    pub error_estimate: f64,
}

/// Fails with `NotASupersolution` at the node with the most negative defect
/// below `-tol`.
pub fn check_supersolution(psi: &ScalarField, coeffs: &LichCoefficients, tol: f64) -> Result<()> {
    let defect = scalar_residual(psi, coeffs)?;
    let (node, min) = defect.argmin();
    if min < -tol {
        return Err(Error::NotASupersolution { node, defect: min });
    }
    Ok(())
}

fn iterate_data(
    coeffs: &LichCoefficients,
    prev: &ScalarField,
    k: f64,
    hk: &ScalarField,
) -> GenEqData {
    let q = coeffs.exponent();
    let len = prev.len();
    let mut theta1 = Vec::with_capacity(len);
    let mut theta2 = Vec::with_capacity(len);
    let mut theta3 = Vec::with_capacity(len);
    for i in 0..len {
        let t = prev.values()[i];
        let (a, b, c, d, f) = (
            coeffs.a.values()[i],
            coeffs.b.values()[i],
            coeffs.c.values()[i],
            coeffs.d.values()[i],
            coeffs.f.values()[i],
        );
        theta1.push(pw(t, -q - 3.0));
        theta2.push(c * (d / (t * t) + pw(t, -q - 2.0)));
        theta3.push(-f * pw(t, q - 1.0) - a * pw(t, -q - 1.0) + b / t - k * t);
    }
    let grid = prev.grid();
    GenEqData {
        h: hk.clone(),
        theta1: ScalarField::from_raw(grid, theta1),
        theta2: ScalarField::from_raw(grid, theta2),
        theta3: ScalarField::from_raw(grid, theta3),
        z: coeffs.y.clone(),
    }
}

/// Runs the monotone iteration `u₀ = ε₀`, `u_i` solving
/// `Δu_i + (h+K)u_i + F(u_{i-1}) + ⟨∇u_i,Y⟩²/u_{i-1}^{q+3}
///  + c⟨∇u_i,Y⟩(d/u_{i-1}² + 1/u_{i-1}^{q+2}) = 0`,
/// and returns the minimal solution below `ψ`.
///
/// The ordering `ε₀ ≤ u_i ≤ u_{i+1} ≤ ψ` is checked at every iterate.
pub fn monotone_iterate(
    coeffs: &LichCoefficients,
    psi: &ScalarField,
    opts: &MonotoneOptions,
) -> Result<(ScalarField, MonotoneTrace)> {
    coeffs.validate()?;
    coeffs.a.ensure_same_grid(psi)?;
    let eps0 = pick_epsilon0(psi, coeffs)?;
    check_supersolution(psi, coeffs, opts.supersolution_tol)?;
    let kc = compute_k_detailed(coeffs, eps0, psi.max(), K_GRID_POINTS);
    let hk = coeffs.h.shift(kc.k);
    let grid = coeffs.grid().clone();

    let mut u = ScalarField::constant(&grid, eps0);
    let mut trace = MonotoneTrace {
        iterate_count: 0,
        epsilon0: eps0,
        k: kc,
        mins: vec![eps0],
        maxs: vec![eps0],
        steps: Vec::new(),
        inner_newton_steps: 0,
        inner_picard_steps: 0,
        final_residual: f64::INFINITY,
        error_estimate: f64::INFINITY,
    };

    for iterate in 1..=opts.max_outer {
        let data = iterate_data(coeffs, &u, kc.k, &hk);
        let (next, stats) = solve_gen_eq(&data, &u, &opts.inner)?;
        trace.inner_newton_steps += stats.newton_steps;
        trace.inner_picard_steps += stats.picard_steps;

        let mut step: f64 = 0.0;
        for node in 0..next.len() {
            let (old, new, top) = (u.values()[node], next.values()[node], psi.values()[node]);
            if new < old - ORDER_SLACK {
                return Err(Error::MonotonicityViolated {
                    iterate,
                    node,
                    detail: format!("u_i = {new} < u_(i-1) = {old}"),
                });
            }
            if new > top + BARRIER_SLACK {
                return Err(Error::MonotonicityViolated {
                    iterate,
                    node,
                    detail: format!("u_i = {new} > psi = {top}"),
                });
            }
            if new < eps0 - ORDER_SLACK {
                return Err(Error::MonotonicityViolated {
                    iterate,
                    node,
                    detail: format!("u_i = {new} < epsilon0 = {eps0}"),
                });
            }
            step = step.max((new - old).abs());
        }
        u = next;
        trace.iterate_count = iterate;
        trace.mins.push(u.min());
        trace.maxs.push(u.max());
        let prev_step = trace.steps.last().copied();
        trace.steps.push(step);

        let roundoff = 64.0 * f64::EPSILON * u.sup_norm();
        let estimate = match prev_step {
            _ if step <= roundoff => step,
            Some(p) if p > 0.0 && step < p => {
                let rho = step / p;
                step * rho / (1.0 - rho)
            }
            _ => f64::INFINITY,
        };
        trace.error_estimate = estimate;

        if step < opts.step_tol && estimate < opts.step_tol {
            let residual = scalar_residual(&u, coeffs)?.sup_norm();
            trace.final_residual = residual;
            if residual < opts.tol_outer {
                return Ok((u, trace));
            }
        }
    }
    trace.final_residual = scalar_residual(&u, coeffs)?.sup_norm();
    Err(Error::NonConvergence {
        iterations: opts.max_outer,
        residual: trace.final_residual,
    })
}

/// Defect `Δũ + hũ - fũ^{q-1} - ã ũ^{-q-1}` of the supersolution model.
pub fn supersolution_defect(
    u: &ScalarField,
    f: &ScalarField,
    h: &ScalarField,
    a_tilde: &ScalarField,
) -> Result<ScalarField> {
    u.ensure_positive()?;
    let q = u.spec().critical_exponent();
    let lap = laplacian(u);
    let values = (0..u.len())
        .map(|i| {
            let t = u.values()[i];
            lap.values()[i] + h.values()[i] * t
                - f.values()[i] * pw(t, q - 1.0)
                - a_tilde.values()[i] * pw(t, -q - 1.0)
        })
        .collect();
    ScalarField::new(u.grid(), values)
}

/// Points in the constant scan of [`find_supersolution`].
pub const SUPERSOLUTION_SCAN_POINTS: usize = 1024;
const SCAN_RANGE: (f64, f64) = (1e-4, 1e4);

/// Finds a positive supersolution of `Δũ + hũ = fũ^{q-1} + ã ũ^{-q-1}`.
///
/// Constants on a geometric grid are tried first; the one with the largest
/// worst-node defect wins. If no constant works, Newton is run on the model
/// equation from the best constant.
pub fn find_supersolution(
    f: &ScalarField,
    h: &ScalarField,
    a_tilde: &ScalarField,
    opts: &InnerOptions,
) -> Result<ScalarField> {
    f.ensure_same_grid(h)?;
    f.ensure_same_grid(a_tilde)?;
    if a_tilde.min() <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "a_tilde must be positive, inf = {}",
            a_tilde.min()
        )));
    }
    if f.min() <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "f must be positive, inf = {}",
            f.min()
        )));
    }
    let q = f.spec().critical_exponent();
    let grid = f.grid().clone();
    let scan = geometric_grid(SCAN_RANGE.0, SCAN_RANGE.1, SUPERSOLUTION_SCAN_POINTS);
    let (mut best_t, mut best_defect) = (scan[0], f64::NEG_INFINITY);
    for &t in &scan {
        let (p1, p2) = (pw(t, q - 1.0), pw(t, -q - 1.0));
        let worst = (0..f.len())
            .map(|i| h.values()[i] * t - f.values()[i] * p1 - a_tilde.values()[i] * p2)
            .fold(f64::INFINITY, f64::min);
        if worst > best_defect {
            best_defect = worst;
            best_t = t;
        }
    }
    if best_defect >= 0.0 {
        return Ok(ScalarField::constant(&grid, best_t));
    }

    let not_found = Error::NoSupersolutionFound {
        best_defect,
        best_t,
    };
    let start = ScalarField::constant(&grid, best_t);
    let Ok(u) = newton_model(f, h, a_tilde, &start, opts) else {
        return Err(not_found);
    };
    if u.min() <= 0.0 {
        return Err(not_found);
    }
    let defect = supersolution_defect(&u, f, h, a_tilde)?;
    if defect.min() >= -1e-8 {
        Ok(u)
    } else {
        Err(not_found)
    }
}

fn newton_model(
    f: &ScalarField,
    h: &ScalarField,
    a_tilde: &ScalarField,
    start: &ScalarField,
    opts: &InnerOptions,
) -> Result<ScalarField> {
    let q = f.spec().critical_exponent();
    let grid = f.grid().clone();
    let zero_b = VectorField::zeros(&grid);
    let mut u = start.clone();
    let mut r = supersolution_defect(&u, f, h, a_tilde)?;
    let mut rnorm = r.sup_norm();
    for _ in 0..opts.max_newton {
        if rnorm <= opts.tol {
            return Ok(u);
        }
        let jac_h = (0..u.len())
            .map(|i| {
                let t = u.values()[i];
                h.values()[i] - (q - 1.0) * f.values()[i] * pw(t, q - 2.0)
                    + (q + 1.0) * a_tilde.values()[i] * pw(t, -q - 2.0)
            })
            .collect();
        let delta = solve_scalar_linear(
            &ScalarField::from_raw(&grid, jac_h),
            &zero_b,
            &r.scale(-1.0),
            None,
            &opts.linear,
        )?;
        let mut alpha = 1.0;
        loop {
            let trial = &u + &delta.scale(alpha);
            if trial.min() > 0.0 {
                let tr = supersolution_defect(&trial, f, h, a_tilde)?;
                let tn = tr.sup_norm();
                if tn < (1.0 - 1e-4 * alpha) * rnorm {
                    u = trial;
                    r = tr;
                    rnorm = tn;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1.0 / 1024.0 {
                return Err(Error::NonConvergence {
                    iterations: opts.max_newton,
                    residual: rnorm,
                });
            }
        }
    }
    if rnorm <= opts.tol {
        Ok(u)
    } else {
        Err(Error::NonConvergence {
            iterations: opts.max_newton,
            residual: rnorm,
        })
    }
}
