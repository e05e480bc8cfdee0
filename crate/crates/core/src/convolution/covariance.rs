//! Output covariance of a convolved process.
//!
//! With the kernel paths held fixed and unit-variance EQ input processes the
//! output is exactly stationary:
//!
//! k_d(r) = Σ_q a_{dq}² ∏_p E_θ[cos(θ r_p) |Ĝ_p(θ)|²],  θ ~ N(0, ℓ_qp⁻²).
//!
//! [`output_kernel_curve`] evaluates that expectation; [`estimate_output_covariance`]
//! is the model-agnostic Monte Carlo estimate over joint function draws.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use super::KernelPath;
use crate::error::{parameter, structural, Result};
use crate::rng::Rng;

/// How the spectral expectation over θ is evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralMethod {
    /// Dense trapezoid rule over ±10 standard deviations of θ.
    Trapezoid,
    /// Plain Monte Carlo with the given number of θ draws.
    MonteCarlo { samples: usize },
}

/// Covariance estimates over a lag grid with their standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceCurve {
    pub lags: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl CovarianceCurve {
    pub fn lower(&self) -> Vec<f64> {
        self.mean.iter().zip(&self.stderr).map(|(m, s)| m - 2.0 * s).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.mean.iter().zip(&self.stderr).map(|(m, s)| m + 2.0 * s).collect()
    }
}

/// E_θ[cos(θ r)|Ĝ(θ)|²] with θ ~ N(0, ℓ⁻²), for every r in `lags`.
pub fn spectral_factor(
    kernel: &KernelPath<f64>,
    lengthscale: f64,
    lags: &[f64],
    method: SpectralMethod,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if !(lengthscale > 0.0) || !(kernel.alpha > 0.0) {
        return Err(parameter(
            "spectral factor needs positive lengthscale and window precision",
        ));
    }
    match method {
        SpectralMethod::Trapezoid => {
            let sd = 1.0 / lengthscale;
            let reach = 6.0 / kernel.alpha.sqrt();
            let rmax = lags.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            // The integrand is the transform of something supported on ±(2·reach + rmax).
            let h = PI / (2.0 * (2.0 * reach + rmax));
            let half = (10.0 * sd / h).ceil() as usize;
            let norm = 1.0 / (sd * (2.0 * PI).sqrt());
            let mut nodes = Vec::with_capacity(2 * half + 1);
            for j in 0..=2 * half {
                let t = (j as f64 - half as f64) * h;
                let w = if j == 0 || j == 2 * half { 0.5 * h } else { h };
                let dens = norm * (-0.5 * (t / sd) * (t / sd)).exp();
                nodes.push((t, w * dens * kernel.spectrum(t).norm_sqr()));
            }
            Ok(lags
                .iter()
                .map(|r| nodes.iter().map(|(t, w)| w * (t * r).cos()).sum())
                .collect())
        }
        SpectralMethod::MonteCarlo { samples } => {
            if samples == 0 {
                return Err(parameter("Monte Carlo spectral factor needs at least one sample"));
            }
            let normal = Normal::new(0.0, 1.0 / lengthscale).map_err(|e| parameter(e.to_string()))?;
            let draws: Vec<(f64, f64)> = (0..samples)
                .map(|_| {
                    let t = normal.sample(rng);
                    (t, kernel.spectrum(t).norm_sqr())
                })
                .collect();
            Ok(lags
                .iter()
                .map(|r| draws.iter().map(|(t, g)| g * (t * r).cos()).sum::<f64>() / samples as f64)
                .collect())
        }
    }
}

/// Output covariance k(r) at each P-vector lag, given one kernel path per input
/// dimension, mixing weights a_q and input lengthscales ℓ_q (one P-vector per q).
pub fn output_kernel_curve(
    kernels: &[KernelPath<f64>],
    mixing: &[f64],
    lengthscales: &[Vec<f64>],
    lags: &[Vec<f64>],
    method: SpectralMethod,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let p = kernels.len();
    if mixing.len() != lengthscales.len() || lengthscales.iter().any(|l| l.len() != p) {
        return Err(structural(
            "mixing weights and lengthscales disagree with the kernel set",
        ));
    }
    if lags.iter().any(|r| r.len() != p) {
        return Err(structural(format!("lags must have {p} components")));
    }
    let mut out = vec![0.0; lags.len()];
    for (a, ells) in mixing.iter().zip(lengthscales) {
        let mut prod = vec![a * a; lags.len()];
        for (d, kern) in kernels.iter().enumerate() {
            let rs: Vec<f64> = lags.iter().map(|r| r[d]).collect();
            let f = spectral_factor(kern, ells[d], &rs, method, rng)?;
            for (v, fi) in prod.iter_mut().zip(f) {
                *v *= fi;
            }
        }
        for (o, v) in out.iter_mut().zip(prod) {
            *o += v;
        }
    }
    Ok(out)
}

/// Monte Carlo estimate of Cov[f_d(x₀), f_d(x₀ + r)] averaged over anchors x₀.
///
/// `sample` draws one joint function and evaluates it at the rows of its
/// argument, returning one column per output.
pub fn estimate_output_covariance<F>(
    mut sample: F,
    anchors: &DMatrix<f64>,
    lags: &[Vec<f64>],
    samples: usize,
    rng: &mut Rng,
) -> Result<Vec<CovarianceCurve>>
where
    F: FnMut(&DMatrix<f64>, &mut Rng) -> Result<DMatrix<f64>>,
{
    if samples < 2 {
        return Err(parameter("covariance estimate needs at least two samples"));
    }
    let (na, p) = (anchors.nrows(), anchors.ncols());
    if na == 0 || lags.iter().any(|r| r.len() != p) {
        return Err(structural(format!(
            "need at least one anchor and lags with {p} components"
        )));
    }
    let nl = lags.len();
    // Rows: anchors, then anchors + lag for each lag.
    let mut pts = DMatrix::zeros(na * (nl + 1), p);
    for a in 0..na {
        for d in 0..p {
            pts[(a, d)] = anchors[(a, d)];
        }
    }
    for (li, lag) in lags.iter().enumerate() {
        for a in 0..na {
            for d in 0..p {
                pts[((li + 1) * na + a, d)] = anchors[(a, d)] + lag[d];
            }
        }
    }
    let mut draws = Vec::with_capacity(samples);
    for _ in 0..samples {
        let f = sample(&pts, rng)?;
        if f.nrows() != pts.nrows() {
            return Err(structural("function sample returned the wrong number of rows"));
        }
        draws.push(f);
    }
    let outputs = draws[0].ncols();
    let s = samples as f64;
    let mut curves = Vec::with_capacity(outputs);
    for d in 0..outputs {
        let mean_at = |row: usize| draws.iter().map(|f| f[(row, d)]).sum::<f64>() / s;
        let centres: Vec<f64> = (0..pts.nrows()).map(mean_at).collect();
        let mut mean = Vec::with_capacity(nl);
        let mut stderr = Vec::with_capacity(nl);
        for li in 0..nl {
            let per_draw: Vec<f64> = draws
                .iter()
                .map(|f| {
                    (0..na)
                        .map(|a| {
                            let r = (li + 1) * na + a;
                            (f[(a, d)] - centres[a]) * (f[(r, d)] - centres[r])
                        })
                        .sum::<f64>()
                        / na as f64
                        * s
                        / (s - 1.0)
                })
                .collect();
            let m = per_draw.iter().sum::<f64>() / s;
            let var = per_draw.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (s - 1.0);
            mean.push(m);
            stderr.push((var / s).sqrt());
        }
        curves.push(CovarianceCurve {
            lags: lags.to_vec(),
            mean,
            stderr,
        });
    }
    Ok(curves)
}
