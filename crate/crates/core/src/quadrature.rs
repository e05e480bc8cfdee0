//! Adaptive Gauss–Kronrod (G7/K15) quadrature.
//!
//! Used as an independent oracle for the closed-form integrals and as the
//! integrator behind covariance extraction.

use num_complex::Complex64;

use crate::error::{numeric, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_SEGMENTS: usize = 20_000;

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Integral of `f` over [a, b] to within max(abs_tol, rel_tol·|I|).
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = kronrod(&mut f, a, b);
    let mut segs = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > abs_tol.max(rel_tol * total.abs()) {
        if segs.len() >= MAX_SEGMENTS {
            return Err(numeric(format!(
                "quadrature did not converge on [{a}, {b}]: estimate {total}, error {err}"
            )));
        }
        let (worst, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, v, e) = segs.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod(&mut f, lo, mid);
        let (v2, e2) = kronrod(&mut f, mid, hi);
        total += v1 + v2 - v;
        err += e1 + e2 - e;
        segs.push((lo, mid, v1, e1));
        segs.push((mid, hi, v2, e2));
        if !total.is_finite() {
            return Err(numeric("quadrature produced a non-finite estimate"));
        }
    }
    // Re-sum to shed the drift of incremental updates.
    Ok(segs.iter().map(|s| s.2).sum())
}

/// Complex integrand, real and imaginary parts integrated separately.
pub fn integrate_complex<F: Fn(f64) -> Complex64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Complex64> {
    let re = integrate(|t| f(t).re, a, b, abs_tol, rel_tol)?;
    let im = integrate(|t| f(t).im, a, b, abs_tol, rel_tol)?;
    Ok(Complex64::new(re, im))
}

/// Iterated integral over a rectangle.
pub fn integrate_2d<F: Fn(f64, f64) -> f64>(
    f: F,
    (ax, bx): (f64, f64),
    (ay, by): (f64, f64),
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    let inner_tol = abs_tol * 1e-2 / (bx - ax).abs().max(1.0);
    let mut failure = None;
    let value = integrate(
        |x| match integrate(|y| f(x, y), ay, by, inner_tol, rel_tol * 1e-2) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        ax,
        bx,
        abs_tol,
        rel_tol,
    );
    match failure {
        Some(e) => Err(e),
        None => value,
    }
}
