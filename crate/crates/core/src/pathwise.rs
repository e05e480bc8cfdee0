//! Pathwise (Matheron) sampling with random Fourier feature priors, including
//! the Gaussian-window interdomain case.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{parameter, structural, Result};
use crate::kernels::{cov_matrix, factor_with_jitter, gram, EqArdKernel, Kernel};

/// Weights, frequencies (B×P) and phases of an RFF prior sample.
#[derive(Clone, Debug, PartialEq)]
pub struct RffBasis {
    pub weights: Vec<f64>,
    pub frequencies: DMatrix<f64>,
    pub phases: Vec<f64>,
    pub variance: f64,
}

impl RffBasis {
    pub fn new(weights: Vec<f64>, frequencies: DMatrix<f64>, phases: Vec<f64>, variance: f64) -> Result<Self> {
        let b = weights.len();
        if b == 0 || frequencies.nrows() != b || phases.len() != b {
            return Err(structural(format!(
                "basis fields disagree: {} weights, {} frequency rows, {} phases",
                b,
                frequencies.nrows(),
                phases.len()
            )));
        }
        if !(variance > 0.0) {
            return Err(parameter(format!("basis variance must be positive, got {variance}")));
        }
        Ok(Self {
            weights,
            frequencies,
            phases,
            variance,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.frequencies.ncols()
    }

    /// √(2·variance/B)
    pub fn scale(&self) -> f64 {
        (2.0 * self.variance / self.len() as f64).sqrt()
    }

    fn check_inputs(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(structural(format!(
                "basis has {} input dimensions, inputs have {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// N×B matrix of φᵢ(xₙ).
    pub fn features(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(x)?;
        let s = self.scale();
        let proj = x * self.frequencies.transpose();
        Ok(DMatrix::from_fn(x.nrows(), self.len(), |n, i| {
            s * (proj[(n, i)] + self.phases[i]).cos()
        }))
    }

    /// Σᵢ wᵢ φᵢ(xₙ) for every row.
    pub fn eval(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let phi = self.features(x)?;
        let w = DVector::from_column_slice(&self.weights);
        Ok((phi * w).iter().copied().collect())
    }
}

pub fn prior_sample_eval(basis: &RffBasis, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    basis.eval(x)
}

/// g(z, x) = a · exp(−Σₚ αₚ (zₚ − xₚ)²)
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianWindow {
    pub amplitude: f64,
    pub precisions: Vec<f64>,
}

impl GaussianWindow {
    pub fn new(amplitude: f64, precisions: Vec<f64>) -> Result<Self> {
        if precisions.is_empty() {
            return Err(parameter("window needs at least one precision"));
        }
        for &a in &precisions {
            if !(a > 0.0) || !a.is_finite() {
                return Err(parameter(format!("window precision must be positive, got {a}")));
            }
        }
        Ok(Self { amplitude, precisions })
    }

    /// Unit-mass window: a = ∏ √(αₚ/π).
    pub fn normalized(precisions: Vec<f64>) -> Result<Self> {
        let a = precisions.iter().map(|al| (al / PI).sqrt()).product();
        Self::new(a, precisions)
    }

    /// Window precision giving a window lengthscale `l`, i.e. α = 1/(2l²).
    pub fn precision_for_lengthscale(l: f64) -> f64 {
        0.5 / (l * l)
    }

    pub fn mass(&self) -> f64 {
        self.amplitude * self.precisions.iter().map(|a| (PI / a).sqrt()).product::<f64>()
    }

    pub fn eval(&self, z: &[f64], x: &[f64]) -> f64 {
        let s: f64 = self
            .precisions
            .iter()
            .zip(z.iter().zip(x))
            .map(|(a, (zp, xp))| a * (zp - xp) * (zp - xp))
            .sum();
        self.amplitude * (-s).exp()
    }
}

/// Inducing inputs Z (M×P) with q(v) = N(μ, L Lᵀ).
#[derive(Clone, Debug, PartialEq)]
pub struct InducingSet {
    pub inputs: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub scale_tril: DMatrix<f64>,
}

impl InducingSet {
    pub fn new(inputs: DMatrix<f64>, mean: DVector<f64>, scale_tril: DMatrix<f64>) -> Result<Self> {
        let m = inputs.nrows();
        if mean.len() != m || scale_tril.nrows() != m || scale_tril.ncols() != m {
            return Err(structural(format!(
                "inducing set of size {m} has mean of length {} and a {}x{} factor",
                mean.len(),
                scale_tril.nrows(),
                scale_tril.ncols()
            )));
        }
        for i in 0..m {
            for j in (i + 1)..m {
                if scale_tril[(i, j)] != 0.0 {
                    return Err(parameter("covariance factor must be lower-triangular"));
                }
            }
            if scale_tril[(i, i)] < 0.0 {
                return Err(parameter("covariance factor must have a nonnegative diagonal"));
            }
        }
        Ok(Self {
            inputs,
            mean,
            scale_tril,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.scale_tril * self.scale_tril.transpose()
    }
}

/// v = μ + L ε with ε ~ N(0, I).
pub fn sample_inducing_values<R: Rng + ?Sized>(ind: &InducingSet, rng: &mut R) -> DVector<f64> {
    let eps = DVector::from_fn(ind.len(), |_, _| StandardNormal.sample(rng));
    &ind.mean + &ind.scale_tril * eps
}

fn check_values(ind: &InducingSet, v: &DVector<f64>) -> Result<()> {
    if v.len() != ind.len() {
        return Err(structural(format!(
            "{} inducing values for {} inducing inputs",
            v.len(),
            ind.len()
        )));
    }
    Ok(())
}

fn update_weights(l: &DMatrix<f64>, residual: DVector<f64>) -> DVector<f64> {
    let y = l.solve_lower_triangular(&residual).expect("positive diagonal");
    l.tr_solve_lower_triangular(&y).expect("positive diagonal")
}

/// Same-domain update: prior(X) + k(X, Z) K⁻¹ (v − Φ_Z w).
pub fn matheron_update<K: Kernel + ?Sized>(
    basis: &RffBasis,
    ind: &InducingSet,
    kernel: &K,
    v_sample: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    check_values(ind, v_sample)?;
    let z = &ind.inputs;
    let prior_z = DVector::from_vec(basis.eval(z)?);
    let fac = cov_matrix(kernel, z, 0.0)?;
    let coef = update_weights(&fac.l, v_sample - prior_z);
    let kxz = gram(kernel, x, z)?;
    let upd = kxz * coef;
    let prior_x = basis.eval(x)?;
    Ok(prior_x.iter().zip(upd.iter()).map(|(a, b)| a + b).collect())
}

/// Φ̃ (M×B): ∫ g(zₘ, x) φᵢ(x) dx in closed form.
pub fn transformed_basis(basis: &RffBasis, win: &GaussianWindow, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() != basis.input_dim() || win.precisions.len() != basis.input_dim() {
        return Err(structural("window, basis and inputs disagree on dimension"));
    }
    let mass = win.mass();
    let s = basis.scale();
    let damp: Vec<f64> = (0..basis.len())
        .map(|i| {
            let e: f64 = win
                .precisions
                .iter()
                .enumerate()
                .map(|(p, a)| basis.frequencies[(i, p)].powi(2) / (4.0 * a))
                .sum();
            mass * s * (-e).exp()
        })
        .collect();
    let proj = z * basis.frequencies.transpose();
    Ok(DMatrix::from_fn(z.nrows(), basis.len(), |m, i| {
        damp[i] * (proj[(m, i)] + basis.phases[i]).cos()
    }))
}

/// Per-dimension precision of the smoothed EQ: Aα/(A+α) with A = 1/(2ℓ²).
pub fn smoothed_precision(lengthscale: f64, alpha: f64) -> f64 {
    let a = 0.5 / (lengthscale * lengthscale);
    a * alpha / (a + alpha)
}

fn check_eq_window(kernel: &EqArdKernel, win: &GaussianWindow) -> Result<()> {
    if kernel.lengthscales.len() != win.precisions.len() {
        return Err(structural(format!(
            "kernel has {} dimensions, window has {}",
            kernel.lengthscales.len(),
            win.precisions.len()
        )));
    }
    Ok(())
}

/// Cov[u(x), ũ(z)] = ∫ k(x, t) g(z, t) dt for an EQ kernel.
pub fn cross_cov(kernel: &EqArdKernel, win: &GaussianWindow, x: &[f64], z: &[f64]) -> f64 {
    let mut v = kernel.variance * win.amplitude;
    for (p, (&l, &al)) in kernel.lengthscales.iter().zip(&win.precisions).enumerate() {
        let a = 0.5 / (l * l);
        let d = x[p] - z[p];
        v *= (PI / (a + al)).sqrt() * (-a * al / (a + al) * d * d).exp();
    }
    v
}

/// Cov[ũ(z), ũ'(z')] = ∫∫ g(z, t) k(t, t') g'(z', t') dt dt' for an EQ kernel.
pub fn interdomain_cov(
    kernel: &EqArdKernel,
    win: &GaussianWindow,
    win2: &GaussianWindow,
    z: &[f64],
    z2: &[f64],
) -> f64 {
    let mut v = kernel.variance * win.amplitude * win2.amplitude;
    for p in 0..kernel.lengthscales.len() {
        let a = 0.5 / (kernel.lengthscales[p] * kernel.lengthscales[p]);
        let (b1, b2) = (win.precisions[p], win2.precisions[p]);
        let den = a * b1 + a * b2 + b1 * b2;
        let d = z[p] - z2[p];
        v *= PI / den.sqrt() * (-a * b1 * b2 / den * d * d).exp();
    }
    v
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn cross_cov_matrix(
    kernel: &EqArdKernel,
    win: &GaussianWindow,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_eq_window(kernel, win)?;
    let (xr, zr) = (rows(x), rows(z));
    Ok(DMatrix::from_fn(x.nrows(), z.nrows(), |i, j| {
        cross_cov(kernel, win, &xr[i], &zr[j])
    }))
}

pub fn interdomain_cov_matrix(
    kernel: &EqArdKernel,
    win: &GaussianWindow,
    z: &DMatrix<f64>,
    z2: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_eq_window(kernel, win)?;
    let (a, b) = (rows(z), rows(z2));
    Ok(DMatrix::from_fn(z.nrows(), z2.nrows(), |i, j| {
        interdomain_cov(kernel, win, win, &a[i], &b[j])
    }))
}

/// Interdomain update coefficients K̃⁻¹ (v − Φ̃ w).
fn interdomain_coefficients(
    basis: &RffBasis,
    win: &GaussianWindow,
    ind: &InducingSet,
    kernel: &EqArdKernel,
    v_sample: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_values(ind, v_sample)?;
    let z = &ind.inputs;
    let phi_t = transformed_basis(basis, win, z)?;
    let w = DVector::from_column_slice(&basis.weights);
    let kt = interdomain_cov_matrix(kernel, win, z, z)?;
    let fac = factor_with_jitter(kt, 0.0)?;
    Ok(update_weights(&fac.l, v_sample - phi_t * w))
}

/// prior(X) + k_{u,ũ}(X, Z) K̃⁻¹ (v − Φ̃ w).
pub fn interdomain_matheron_sample(
    basis: &RffBasis,
    win: &GaussianWindow,
    ind: &InducingSet,
    kernel: &EqArdKernel,
    v_sample: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let coef = interdomain_coefficients(basis, win, ind, kernel, v_sample)?;
    let upd = cross_cov_matrix(kernel, win, x, &ind.inputs)? * coef;
    let prior = basis.eval(x)?;
    Ok(prior.iter().zip(upd.iter()).map(|(a, b)| a + b).collect())
}

/// The smoothed path ∫ g(z*, x) u(x) dx of an interdomain sample, at query inputs z*.
pub fn interdomain_smoothed_sample(
    basis: &RffBasis,
    win: &GaussianWindow,
    ind: &InducingSet,
    kernel: &EqArdKernel,
    v_sample: &DVector<f64>,
    zq: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let coef = interdomain_coefficients(basis, win, ind, kernel, v_sample)?;
    let w = DVector::from_column_slice(&basis.weights);
    let prior = transformed_basis(basis, win, zq)? * w;
    let upd = interdomain_cov_matrix(kernel, win, zq, &ind.inputs)? * coef;
    Ok((prior + upd).iter().copied().collect())
}
