//! Closed-form convolution of sampled kernel paths with sampled input paths.
//!
//! A layer output is f_d(x) = Σ_q a_{(d,)q} ∫ G_d(x − τ) u_q(τ) dτ where both
//! G (product over input dimensions of 1-D paths) and u_q are Matheron
//! samples. Every path is a finite sum of cosines and Gaussian bumps, so the
//! integral reduces to the one-dimensional integrals in [`integrals`].

mod assembly;
mod covariance;
pub mod integrals;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{structural, Result};

pub use assembly::{layer_output_sample, layer_output_tape, RESIDUE_TOL};
pub use covariance::{estimate_output_covariance, output_kernel_curve, CovarianceCurve, SpectralMethod};
pub use integrals::{i1a, i1b, i2a, i2b};

/// Full: one kernel path set per output, scalar mixing a_q.
/// Fast: one shared kernel path set, mixing a_{d,q}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Fast,
}

/// A 1-D convolutional-kernel sample
/// G(s) = e^{−αs²} [Σᵢ cᵢ cos(θᵢ s + βᵢ) + Σⱼ qⱼ e^{−ρ(s − zⱼ)²}].
///
/// `c` already includes the RFF scale, `q` the DSE window factor at zⱼ and the
/// kernel variance.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelPath<T> {
    pub alpha: T,
    pub rho: T,
    pub c: Vec<T>,
    pub theta: Vec<T>,
    pub beta: Vec<f64>,
    pub q: Vec<T>,
    pub z: Vec<T>,
}

/// An input-process sample on ℝ^P
/// u(x) = Σ_k c_k cos(θ_k·x + β_k) + Σ_l q_l ∏_p e^{−ρ_p (x_p − z_lp)²}.
///
/// `theta` is B×P and `z` is M×P, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct InputPath<T> {
    pub dim: usize,
    pub c: Vec<T>,
    pub theta: Vec<T>,
    pub beta: Vec<f64>,
    pub q: Vec<T>,
    pub z: Vec<T>,
    pub rho: Vec<T>,
}

/// All sampled paths of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct PathCoefficients<T = f64> {
    pub variant: Variant,
    pub output_dim: usize,
    pub inputs: Vec<InputPath<T>>,
    /// Full: `output_dim` sets; fast: one set. Each set holds one path per input dimension.
    pub kernels: Vec<Vec<KernelPath<T>>>,
    /// Full: Q entries; fast: D×Q row-major.
    pub mixing: Vec<T>,
}

impl<T> KernelPath<T> {
    pub fn basis_len(&self) -> usize {
        self.c.len()
    }

    pub fn inducing_len(&self) -> usize {
        self.q.len()
    }

    fn check(&self) -> Result<()> {
        if self.theta.len() != self.c.len() || self.beta.len() != self.c.len() {
            return Err(structural("kernel path basis fields have different lengths"));
        }
        if self.z.len() != self.q.len() {
            return Err(structural("kernel path canonical fields have different lengths"));
        }
        Ok(())
    }
}

impl<T> InputPath<T> {
    pub fn basis_len(&self) -> usize {
        self.c.len()
    }

    pub fn inducing_len(&self) -> usize {
        self.q.len()
    }

    fn check(&self) -> Result<()> {
        let (b, m, p) = (self.c.len(), self.q.len(), self.dim);
        if self.theta.len() != b * p || self.beta.len() != b || self.z.len() != m * p || self.rho.len() != p {
            return Err(structural("input path fields disagree with its dimension"));
        }
        Ok(())
    }
}

impl<T> PathCoefficients<T> {
    pub fn latent_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.dim)
    }

    /// Index into `kernels` used by output d.
    pub fn kernel_set(&self, d: usize) -> usize {
        match self.variant {
            Variant::Full => d,
            Variant::Fast => 0,
        }
    }

    /// Index into `mixing` of a_{(d,)q}.
    pub fn mixing_index(&self, d: usize, q: usize) -> usize {
        match self.variant {
            Variant::Full => q,
            Variant::Fast => d * self.inputs.len() + q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (q, d) = (self.inputs.len(), self.output_dim);
        if q == 0 || d == 0 {
            return Err(structural("layer needs at least one latent process and one output"));
        }
        let p = self.input_dim();
        let sets = match self.variant {
            Variant::Full => d,
            Variant::Fast => 1,
        };
        let mix = match self.variant {
            Variant::Full => q,
            Variant::Fast => d * q,
        };
        if self.kernels.len() != sets || self.mixing.len() != mix {
            return Err(structural(format!(
                "layer expects {sets} kernel sets and {mix} mixing weights, found {} and {}",
                self.kernels.len(),
                self.mixing.len()
            )));
        }
        for u in &self.inputs {
            if u.dim != p {
                return Err(structural("input paths have different dimensions"));
            }
            u.check()?;
        }
        for set in &self.kernels {
            if set.len() != p {
                return Err(structural(format!(
                    "kernel set has {} paths for {p} input dimensions",
                    set.len()
                )));
            }
            for k in set {
                k.check()?;
            }
        }
        Ok(())
    }
}

impl KernelPath<f64> {
    pub fn eval(&self, s: f64) -> f64 {
        let mut v = 0.0;
        for i in 0..self.c.len() {
            v += self.c[i] * (self.theta[i] * s + self.beta[i]).cos();
        }
        for j in 0..self.q.len() {
            let d = s - self.z[j];
            v += self.q[j] * (-self.rho * d * d).exp();
        }
        (-self.alpha * s * s).exp() * v
    }

    /// Ĝ(ω) = ∫ G(s) e^{−iωs} ds.
    pub fn spectrum(&self, omega: f64) -> Complex64 {
        let mut v = Complex64::new(0.0, 0.0);
        for i in 0..self.c.len() {
            v += self.c[i] * i1a(0.0, self.alpha, self.theta[i], self.beta[i], -omega);
        }
        for j in 0..self.q.len() {
            v += self.q[j] * i1b(0.0, self.alpha, self.z[j], self.rho, -omega);
        }
        v
    }
}

impl InputPath<f64> {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let p = self.dim;
        let mut v = 0.0;
        for k in 0..self.c.len() {
            let arg: f64 = (0..p).map(|d| self.theta[k * p + d] * x[d]).sum::<f64>() + self.beta[k];
            v += self.c[k] * arg.cos();
        }
        for l in 0..self.q.len() {
            let e: f64 = (0..p)
                .map(|d| {
                    let t = x[d] - self.z[l * p + d];
                    self.rho[d] * t * t
                })
                .sum();
            v += self.q[l] * (-e).exp();
        }
        v
    }
}

/// Row-major copy of a matrix.
pub(crate) fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            out.push(x[(i, j)]);
        }
    }
    out
}
