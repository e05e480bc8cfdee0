//! Closed-form Gaussian–trigonometric integrals over the real line.
//!
//! All four are products of Gaussians (possibly with a complex linear term),
//! completed to a square.

use std::f64::consts::PI;

use num_complex::Complex64;

/// ∫ e^{−α(x−τ)²} cos(θ₁τ + β) e^{iθ₂τ} dτ
pub fn i1a(x: f64, alpha: f64, theta1: f64, beta: f64, theta2: f64) -> Complex64 {
    let half = 0.5 * (PI / alpha).sqrt();
    let sp = theta1 + theta2;
    let sm = theta2 - theta1;
    let plus = Complex64::from_polar((-sp * sp / (4.0 * alpha)).exp(), beta + sp * x);
    let minus = Complex64::from_polar((-sm * sm / (4.0 * alpha)).exp(), -beta + sm * x);
    (plus + minus) * half
}

/// ∫ e^{−α(x−τ)²} e^{−ρ(τ−z)²} e^{iθτ} dτ
pub fn i1b(x: f64, alpha: f64, z: f64, rho: f64, theta: f64) -> Complex64 {
    let a = alpha + rho;
    let d = x - z;
    let m = (alpha * x + rho * z) / a;
    let mag = (PI / a).sqrt() * (-(alpha * rho * d * d) / a - theta * theta / (4.0 * a)).exp();
    Complex64::from_polar(mag, theta * m)
}

/// ∫ e^{−α(x−τ)²} cos(θτ + β) e^{−ρ(τ−z)²} dτ
pub fn i2a(x: f64, alpha: f64, theta: f64, beta: f64, rho: f64, z: f64) -> f64 {
    let a = alpha + rho;
    let d = x - z;
    let m = (alpha * x + rho * z) / a;
    (PI / a).sqrt() * (-(alpha * rho * d * d) / a - theta * theta / (4.0 * a)).exp() * (theta * m + beta).cos()
}

/// ∫ e^{−α(x−τ)²} e^{−ρ₁(τ−z₁)²} e^{−ρ₂(τ−z₂)²} dτ
pub fn i2b(x: f64, alpha: f64, rho1: f64, z1: f64, rho2: f64, z2: f64) -> f64 {
    let a = alpha + rho1 + rho2;
    let (d1, d2, d12) = (x - z1, x - z2, z1 - z2);
    let q = alpha * rho1 * d1 * d1 + alpha * rho2 * d2 * d2 + rho1 * rho2 * d12 * d12;
    (PI / a).sqrt() * (-q / a).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, integrate_complex};
    use crate::rng::rng_from;
    use rand::Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn crel(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm()
    }

    fn window(x: f64, alpha: f64) -> (f64, f64) {
        let w = 12.0 / alpha.sqrt();
        (x - w, x + w)
    }

    #[test]
    fn i1a_special_cases() {
        let (x, al, t, b) = (0.4, 1.3, 1.7, 0.6);
        let v = i1a(x, al, t, b, 0.0);
        let want = (PI / al).sqrt() * (-t * t / (4.0 * al)).exp() * (t * x + b).cos();
        assert!((v.re - want).abs() < 1e-15 && v.im.abs() < 1e-15);
        let v = i1a(x, al, 0.0, 0.0, t);
        let want = Complex64::from_polar((PI / al).sqrt() * (-t * t / (4.0 * al)).exp(), t * x);
        assert!((v - want).norm() < 1e-15);
    }

    #[test]
    fn i1b_special_cases() {
        let v = i1b(0.3, 1.1, 0.3, 0.6, 0.0);
        assert!((v.re - (PI / 1.7f64).sqrt()).abs() < 1e-15 && v.im == 0.0);
        let at = |x: f64| i1b(x, 1.1, 0.3, 0.6, 0.0).re;
        assert!(at(0.3) > at(0.2) && at(0.3) > at(0.4));
    }

    #[test]
    fn i2_special_cases() {
        let v = i2a(0.5, 0.8, 0.0, 0.0, 1.4, -0.2);
        let want = (PI / 2.2f64).sqrt() * (-0.8 * 1.4 * 0.49 / 2.2f64).exp();
        assert!((v - want).abs() < 1e-15);
        assert!((i2b(0.0, 0.8, 1.4, 0.0, 0.3, 0.0) - (PI / 2.5f64).sqrt()).abs() < 1e-15);
        let lim = i2b(0.4, 0.9, 1e-10, 1.0, 0.7, -0.3);
        let want = i1b(0.4, 0.9, -0.3, 0.7, 0.0).re;
        assert!(rel(lim, want) < 1e-6);
    }

    #[test]
    fn i2a_quarter_phase_at_origin_matches_quadrature() {
        let (al, t, rho) = (0.9, 1.3, 0.4);
        let beta = std::f64::consts::FRAC_PI_2;
        let v = i2a(0.0, al, t, beta, rho, 0.0);
        let q = integrate(
            |s| (-al * s * s).exp() * (t * s + beta).cos() * (-rho * s * s).exp(),
            -20.0,
            20.0,
            1e-16,
            1e-13,
        )
        .unwrap();
        assert!((v - q).abs() < 1e-12);
    }

    #[test]
    fn all_integrals_match_quadrature() {
        let mut rng = rng_from(2024, &[]);
        for _ in 0..100 {
            let x = rng.gen_range(-2.0..2.0);
            let alpha = rng.gen_range(0.1..3.0);
            let t1 = rng.gen_range(-3.0..3.0);
            let t2 = rng.gen_range(-3.0..3.0);
            let beta = rng.gen_range(0.0..2.0 * PI);
            let rho = rng.gen_range(0.1..3.0);
            let rho2 = rng.gen_range(0.1..3.0);
            let z = rng.gen_range(-2.0..2.0);
            let z2 = rng.gen_range(-2.0..2.0);
            let (lo, hi) = window(x, alpha);

            let q = integrate_complex(
                |t| Complex64::from_polar((-alpha * (x - t) * (x - t)).exp() * (t1 * t + beta).cos(), t2 * t),
                lo,
                hi,
                1e-17,
                1e-13,
            )
            .unwrap();
            let c = i1a(x, alpha, t1, beta, t2);
            assert!(crel(c, q) < 1e-8, "i1a {c} vs {q}");

            let q = integrate_complex(
                |t| Complex64::from_polar((-alpha * (x - t) * (x - t) - rho * (t - z) * (t - z)).exp(), t1 * t),
                lo,
                hi,
                1e-17,
                1e-13,
            )
            .unwrap();
            let c = i1b(x, alpha, z, rho, t1);
            assert!(crel(c, q) < 1e-8, "i1b {c} vs {q}");

            let q = integrate(
                |t| (-alpha * (x - t) * (x - t) - rho * (t - z) * (t - z)).exp() * (t1 * t + beta).cos(),
                lo,
                hi,
                1e-17,
                1e-13,
            )
            .unwrap();
            let c = i2a(x, alpha, t1, beta, rho, z);
            assert!(rel(c, q) < 1e-8, "i2a {c} vs {q}");

            let q = integrate(
                |t| (-alpha * (x - t) * (x - t) - rho * (t - z) * (t - z) - rho2 * (t - z2) * (t - z2)).exp(),
                lo,
                hi,
                1e-17,
                1e-13,
            )
            .unwrap();
            let c = i2b(x, alpha, rho, z, rho2, z2);
            assert!(rel(c, q) < 1e-8, "i2b {c} vs {q}");
        }
    }
}
