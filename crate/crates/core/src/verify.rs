//! Manufactured solutions and the radial bubble benchmark.

use twofloat::TwoFloat;

use crate::error::Result;
use crate::grid::{conformal_killing, gradient, laplacian, tensor_divergence, ScalarField, VectorField};
use crate::scalar::{pw, LichCoefficients};

/// Radial grid size used by [`bubble_residual`].
pub const BUBBLE_POINTS: usize = 4096;

fn tf(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

/// Quotient corrected by one residual step; the library division alone is
/// only accurate to about double precision.
fn div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q = a / b;
    q + (a - q * b) / b
}

/// Exact sixth-order central-difference weights in double-double precision.
fn weights() -> ([TwoFloat; 4], [TwoFloat; 4]) {
    let frac = |p: f64, q: f64| div(tf(p), tf(q));
    (
        [frac(-49.0, 18.0), frac(3.0, 2.0), frac(-3.0, 20.0), frac(1.0, 90.0)],
        [tf(0.0), frac(3.0, 4.0), frac(-3.0, 20.0), frac(1.0, 60.0)],
    )
}

/// `U(r) = (1 + f₀ r² / (n(n-2)))^{1-n/2}` and `U^{q-1}`.
fn bubble(f0: TwoFloat, n: i32, r: TwoFloat) -> (TwoFloat, TwoFloat) {
    let s = tf(1.0) + div(f0 * r * r, tf(f64::from(n * (n - 2))));
    let root = s.sqrt();
    (div(tf(1.0), root.powi(n - 2)), div(tf(1.0), root.powi(n + 2)))
}

/// Largest relative defect of `ΔU = f₀ U^{q-1}` for the bubble profile, with
/// the radial positive Laplacian `-(U'' + (n-1)U'/r)` discretized by
/// sixth-order central differences on [`BUBBLE_POINTS`] points in
/// `[0, r_max]`. Stencils reaching past either end use the exact profile,
/// which is even in `r`; at `r = 0` the operator reduces to `-n U''(0)`.
pub fn bubble_residual(f0: f64, n: usize, r_max: f64) -> f64 {
    bubble_residual_with(f0, n, r_max, BUBBLE_POINTS)
}

/// [`bubble_residual`] on a grid of `points` nodes.
pub fn bubble_residual_with(f0: f64, n: usize, r_max: f64, points: usize) -> f64 {
    let (w2, w1) = weights();
    let ni = n as i32;
    let f0t = tf(f0);
    let h = div(tf(r_max), tf((points - 1) as f64));
    let nm1 = tf((n - 1) as f64);
    let mut worst: f64 = 0.0;
    for j in 0..points {
        let r = h * tf(j as f64);
        let at = |k: i64| bubble(f0t, ni, r + h * tf(k as f64)).0;
        let centre = bubble(f0t, ni, r);
        let mut d2 = w2[0] * centre.0;
        let mut d1 = tf(0.0);
        for k in 1..4 {
            let (plus, minus) = (at(k as i64), at(-(k as i64)));
            d2 += w2[k] * (plus + minus);
            d1 += w1[k] * (plus - minus);
        }
        d2 = div(d2, h * h);
        d1 = div(d1, h);
        let lap = if j == 0 {
            -(tf(n as f64) * d2)
        } else {
            -(d2 + div(nm1 * d1, r))
        };
        let target = f0t * centre.1;
        let rel: f64 = div(lap - target, target).into();
        worst = worst.max(rel.abs());
    }
    worst
}

/// `b*` for which `u*` solves the scalar equation exactly:
/// `b* = u*(f u*^{q-1} + a u*^{-q-1} - Δu* - hu* - ⟨∇u*,Y⟩² u*^{-q-3}
///  - c⟨∇u*,Y⟩(d u*^{-2} + u*^{-q-2}))`. The `b` field of `coeffs` is ignored.
pub fn manufacture_scalar(u_star: &ScalarField, coeffs: &LichCoefficients) -> Result<ScalarField> {
    u_star.ensure_positive()?;
    let q = u_star.spec().critical_exponent();
    let lap = laplacian(u_star);
    let gy = gradient(u_star).dot(&coeffs.y);
    let values = (0..u_star.len())
        .map(|i| {
            let u = u_star.values()[i];
            let g = gy.values()[i];
            let inner = coeffs.f.values()[i] * pw(u, q - 1.0) + coeffs.a.values()[i] * pw(u, -q - 1.0)
                - lap.values()[i]
                - coeffs.h.values()[i] * u
                - g * g * pw(u, -q - 3.0)
                - coeffs.c.values()[i] * g * (coeffs.d.values()[i] / (u * u) + pw(u, -q - 2.0));
            u * inner
        })
        .collect();
    ScalarField::new(u_star.grid(), values)
}

/// `X* = div(ρ₃ ℒW*)`.
pub fn manufacture_momentum(w_star: &VectorField, rho3: &ScalarField) -> VectorField {
    tensor_divergence(&conformal_killing(w_star).scale_by(rho3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, GridSpec};
    use crate::scalar::scalar_residual;

    #[test]
    fn bubble_benchmark_is_sixth_order() {
        let coarse = bubble_residual(3.0, 3, 10.0);
        assert!(coarse <= 1e-8, "{coarse:e}");
        let fine = bubble_residual_with(3.0, 3, 10.0, 2 * BUBBLE_POINTS - 1);
        assert!(coarse / fine >= 32.0, "ratio {}", coarse / fine);
    }

    #[test]
    fn bubble_other_dimensions() {
        for n in [4, 5] {
            assert!(bubble_residual(2.0, n, 5.0) <= 1e-8);
        }
    }

    #[test]
    fn manufactured_constant_has_zero_b() {
        let g = Grid::new(GridSpec::torus(3, 8).unwrap());
        let c = LichCoefficients::constants(&g, 1.0, 0.5, 0.5);
        let b = manufacture_scalar(&ScalarField::constant(&g, 1.0), &c).unwrap();
        assert!(b.sup_norm() < 1e-15);
    }

    #[test]
    fn manufactured_scalar_closes() {
        let g = Grid::new(GridSpec::torus(3, 16).unwrap());
        let mut c = LichCoefficients::constants(&g, 1.0, 0.5, 0.5);
        c.y = VectorField::constant(&g, &[0.1, 0.0, 0.05]);
        c.c = ScalarField::constant(&g, 0.3);
        c.d = ScalarField::from_fn(&g, |x| 0.2 * x[2].cos());
        let u = ScalarField::from_fn(&g, |x| 1.0 + 0.2 * x[0].sin());
        let b = manufacture_scalar(&u, &c).unwrap();
        let r = scalar_residual(&u, &c.with_b(b.clone())).unwrap();
        assert!(r.sup_norm() <= 1e-12);

        let shifted = manufacture_scalar(&u, &c.with_a(c.a.scale(2.0))).unwrap();
        let expect = u.zip_map(&c.a, |u, a| u * a * u.powi(-7));
        assert!((&(&shifted - &b) - &expect).sup_norm() < 1e-13);
    }

    #[test]
    fn manufactured_momentum_examples() {
        let g = Grid::new(GridSpec::torus(3, 16).unwrap());
        let one = ScalarField::constant(&g, 1.0);
        let w = VectorField::axis_field(ScalarField::from_fn(&g, |x| -0.75 * x[0].sin()), 0);
        let x = manufacture_momentum(&w, &one);
        let expect = ScalarField::from_fn(&g, |x| x[0].sin());
        assert!((x.component(0) - &expect).sup_norm() < 1e-13);
        assert!(x.component(1).sup_norm() < 1e-14);
        let x = manufacture_momentum(&VectorField::constant(&g, &[1.0, 2.0, 3.0]), &one);
        assert!(x.max_abs_component() < 1e-14);
    }
}
