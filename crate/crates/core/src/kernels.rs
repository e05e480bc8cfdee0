//! Stationary covariance functions, spectral sampling and jittered Gram matrices.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{numeric, parameter, structural, Result};
use crate::pathwise::RffBasis;

/// Default diagonal jitter on standardised data.
pub const DEFAULT_JITTER: f64 = 1e-6;
/// Largest jitter tried before a factorisation is declared failed.
pub const MAX_JITTER: f64 = 1e-4;

pub trait Kernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;
    /// Number of input dimensions.
    fn input_dim(&self) -> usize;
}

/// A kernel with a Gaussian spectral factor from which RFF frequencies are drawn.
pub trait Spectral {
    fn variance(&self) -> f64;
    /// Per-dimension lengthscales of the EQ factor.
    fn spectral_lengthscales(&self) -> Vec<f64>;
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(parameter(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// variance · exp(−Σₚ (xₚ−x'ₚ)²/(2ℓₚ²))
#[derive(Clone, Debug, PartialEq)]
pub struct EqArdKernel {
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

impl EqArdKernel {
    pub fn new(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        positive("variance", variance)?;
        if lengthscales.is_empty() {
            return Err(parameter("EQ kernel needs at least one lengthscale"));
        }
        for &l in &lengthscales {
            positive("lengthscale", l)?;
        }
        Ok(Self { variance, lengthscales })
    }
}

impl Kernel for EqArdKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        eq_ard_eval(self, x, y)
    }

    fn input_dim(&self) -> usize {
        self.lengthscales.len()
    }
}

impl Spectral for EqArdKernel {
    fn variance(&self) -> f64 {
        self.variance
    }

    fn spectral_lengthscales(&self) -> Vec<f64> {
        self.lengthscales.clone()
    }
}

pub fn eq_ard_eval(k: &EqArdKernel, x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), k.lengthscales.len());
    debug_assert_eq!(y.len(), k.lengthscales.len());
    let mut s = 0.0;
    for ((a, b), l) in x.iter().zip(y).zip(&k.lengthscales) {
        let d = (a - b) / l;
        s += d * d;
    }
    k.variance * (-0.5 * s).exp()
}

/// Decaying squared exponential on the real line:
/// variance · e^{−decay·x²} · e^{−(x−x')²/(2ℓ²)} · e^{−decay·x'²}.
#[derive(Clone, Debug, PartialEq)]
pub struct DseKernel {
    pub variance: f64,
    pub lengthscale: f64,
    pub decay: f64,
}

impl DseKernel {
    pub fn new(variance: f64, lengthscale: f64, decay: f64) -> Result<Self> {
        positive("variance", variance)?;
        positive("lengthscale", lengthscale)?;
        positive("decay", decay)?;
        Ok(Self {
            variance,
            lengthscale,
            decay,
        })
    }
}

pub fn dse_eval(k: &DseKernel, x: f64, y: f64) -> f64 {
    let d = (x - y) / k.lengthscale;
    k.variance * (-k.decay * (x * x + y * y) - 0.5 * d * d).exp()
}

impl Kernel for DseKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        dse_eval(self, x[0], y[0])
    }

    fn input_dim(&self) -> usize {
        1
    }
}

impl Spectral for DseKernel {
    fn variance(&self) -> f64 {
        self.variance
    }

    fn spectral_lengthscales(&self) -> Vec<f64> {
        vec![self.lengthscale]
    }
}

/// EQ times a periodic factor exp(−2 sin²(π(x−x')/T)/ℓ_per²) in every dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicEqKernel {
    pub variance: f64,
    pub lengthscales: Vec<f64>,
    pub periods: Vec<f64>,
    pub periodic_lengthscales: Vec<f64>,
}

impl PeriodicEqKernel {
    pub fn new(
        variance: f64,
        lengthscales: Vec<f64>,
        periods: Vec<f64>,
        periodic_lengthscales: Vec<f64>,
    ) -> Result<Self> {
        positive("variance", variance)?;
        let p = lengthscales.len();
        if p == 0 || periods.len() != p || periodic_lengthscales.len() != p {
            return Err(parameter("periodic kernel needs matching per-dimension parameters"));
        }
        for v in lengthscales.iter().chain(&periods).chain(&periodic_lengthscales) {
            positive("periodic kernel parameter", *v)?;
        }
        Ok(Self {
            variance,
            lengthscales,
            periods,
            periodic_lengthscales,
        })
    }

    /// The purely periodic part (unit variance).
    pub fn periodic_factor(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for p in 0..self.periods.len() {
            let sn = (PI * (x[p] - y[p]) / self.periods[p]).sin();
            s += 2.0 * sn * sn / (self.periodic_lengthscales[p] * self.periodic_lengthscales[p]);
        }
        (-s).exp()
    }
}

impl Kernel for PeriodicEqKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for p in 0..self.lengthscales.len() {
            let d = (x[p] - y[p]) / self.lengthscales[p];
            s += d * d;
        }
        self.variance * (-0.5 * s).exp() * self.periodic_factor(x, y)
    }

    fn input_dim(&self) -> usize {
        self.lengthscales.len()
    }
}

/// Draw an RFF basis: θ ~ N(0, diag(1/ℓ²)), β ~ U(0, 2π), w ~ N(0, 1).
pub fn sample_frequencies<K: Spectral + ?Sized, R: Rng + ?Sized>(k: &K, b: usize, rng: &mut R) -> Result<RffBasis> {
    if b == 0 {
        return Err(parameter("basis size must be at least 1"));
    }
    let ls = k.spectral_lengthscales();
    let p = ls.len();
    let phase = Uniform::new(0.0, 2.0 * PI);
    let mut theta = DMatrix::zeros(b, p);
    let mut beta = Vec::with_capacity(b);
    let mut w = Vec::with_capacity(b);
    for i in 0..b {
        for (j, l) in ls.iter().enumerate() {
            let e: f64 = StandardNormal.sample(rng);
            theta[(i, j)] = e / l;
        }
        beta.push(phase.sample(rng));
        w.push(StandardNormal.sample(rng));
    }
    RffBasis::new(w, theta, beta, k.variance())
}

/// Gram matrix with diagonal jitter and its lower Cholesky factor.
#[derive(Clone, Debug)]
pub struct CovFactor {
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    /// Jitter actually applied after escalation.
    pub jitter: f64,
}

pub fn gram<K: Kernel + ?Sized>(kernel: &K, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != kernel.input_dim() || y.ncols() != kernel.input_dim() {
        return Err(structural(format!(
            "kernel expects {} input dimensions, got {} and {}",
            kernel.input_dim(),
            x.ncols(),
            y.ncols()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect();
    let cols: Vec<Vec<f64>> = (0..y.nrows()).map(|i| y.row(i).iter().copied().collect()).collect();
    Ok(DMatrix::from_fn(x.nrows(), y.nrows(), |i, j| {
        kernel.eval(&rows[i], &cols[j])
    }))
}

/// Factor a symmetric matrix, escalating the jitter by decades up to [`MAX_JITTER`].
pub fn factor_with_jitter(k: DMatrix<f64>, jitter: f64) -> Result<CovFactor> {
    if !(jitter >= 0.0) {
        return Err(parameter(format!("jitter must be nonnegative, got {jitter}")));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(numeric("covariance matrix contains non-finite entries"));
    }
    let mut candidates = vec![jitter];
    let mut j = 1e-10;
    while j <= MAX_JITTER * 1.0001 {
        if j > jitter {
            candidates.push(j);
        }
        j *= 10.0;
    }
    let n = k.nrows();
    for jit in candidates {
        let kj = &k + DMatrix::identity(n, n) * jit;
        if let Some(ch) = nalgebra::Cholesky::new(kj.clone()) {
            return Ok(CovFactor {
                k: kj,
                l: ch.l(),
                jitter: jit,
            });
        }
    }
    Err(numeric(format!(
        "Cholesky of a {n}x{n} covariance failed even with jitter {MAX_JITTER}"
    )))
}

pub fn cov_matrix<K: Kernel + ?Sized>(kernel: &K, x: &DMatrix<f64>, jitter: f64) -> Result<CovFactor> {
    factor_with_jitter(gram(kernel, x, x)?, jitter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::{prop, prop_assert_eq, proptest};

    fn random_inputs(m: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from(seed, &[]);
        DMatrix::from_fn(m, p, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn eq_examples() {
        let k = EqArdKernel::new(1.0, vec![1.0]).unwrap();
        assert_eq!(eq_ard_eval(&k, &[0.3], &[0.3]), 1.0);
        assert!((eq_ard_eval(&k, &[0.0], &[1.0]) - 0.606_530_659_712_633_4).abs() < 1e-12);
        assert!(EqArdKernel::new(1.0, vec![0.0]).is_err());
        assert!(EqArdKernel::new(-1.0, vec![1.0]).is_err());
    }

    #[test]
    fn dse_examples() {
        let k = DseKernel::new(2.0, 1.0, 0.5).unwrap();
        assert_eq!(dse_eval(&k, 0.0, 0.0), 2.0);
        let k1 = DseKernel::new(1.0, 1.0, 0.5).unwrap();
        assert!((dse_eval(&k1, 0.0, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for t in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let v = dse_eval(&k, t, t);
            assert!((v - 2.0 * (-2.0 * 0.5 * t * t).exp()).abs() < 1e-15);
            assert!(v < prev);
            prev = v;
        }
        assert!(dse_eval(&k, 40.0, 0.1) < 1e-100);
        assert!(DseKernel::new(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn periodic_factor_repeats() {
        let k = PeriodicEqKernel::new(1.0, vec![1.5, 1.5], vec![1.8, 2.1], vec![1.5, 1.5]).unwrap();
        let x = [0.2, -0.4];
        let shifted = [0.2 + 1.8, -0.4];
        assert!((k.periodic_factor(&x, &shifted) - 1.0).abs() < 1e-12);
        let shifted2 = [0.2, -0.4 + 2.1];
        assert!((k.periodic_factor(&x, &shifted2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_gram() {
        let k = EqArdKernel::new(1.7, vec![0.5, 2.0]).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[0.1, 0.2]);
        let f = cov_matrix(&k, &x, 1e-6).unwrap();
        assert!((f.k[(0, 0)] - (1.7 + 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn duplicated_inputs_factorise() {
        let k = EqArdKernel::new(1.0, vec![1.0]).unwrap();
        let x = DMatrix::from_row_slice(4, 1, &[0.5, 0.5, 0.5, -1.0]);
        let f = cov_matrix(&k, &x, 1e-6).unwrap();
        let eig = f.k.clone().symmetric_eigen().eigenvalues;
        let cond = eig.max() / eig.min();
        assert!(cond.is_finite() && cond > 0.0);
    }

    #[test]
    fn factor_reconstructs() {
        let k = EqArdKernel::new(1.3, vec![0.7, 1.1]).unwrap();
        let x = random_inputs(10, 2, 3);
        let f = cov_matrix(&k, &x, 1e-6).unwrap();
        assert!((&f.l * f.l.transpose() - &f.k).amax() < 1e-10);
    }

    #[test]
    fn jitter_escalates_then_fails() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.0 + 1e-9, 1.0 + 1e-9, 1.0]);
        let f = factor_with_jitter(bad, 0.0).unwrap();
        assert!(f.jitter > 0.0);
        let hopeless = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            factor_with_jitter(hopeless, 1e-6).unwrap_err(),
            crate::Error::Numeric(_)
        ));
    }

    #[test]
    fn gram_matrices_are_psd() {
        for seed in 0..10 {
            let m = 5 + (seed as usize * 7) % 26;
            let x = random_inputs(m, 2, seed);
            let eq = EqArdKernel::new(1.0, vec![0.6, 1.4]).unwrap();
            let dse = DseKernel::new(1.0, 0.8, 0.3).unwrap();
            let per = PeriodicEqKernel::new(1.0, vec![1.5, 1.5], vec![1.8, 2.1], vec![1.5, 1.5]).unwrap();
            let x1 = x.columns(0, 1).into_owned();
            for k in [gram(&eq, &x, &x), gram(&dse, &x1, &x1), gram(&per, &x, &x)] {
                let min = k.unwrap().symmetric_eigen().eigenvalues.min();
                assert!(min > -1e-8, "seed {seed}: min eigenvalue {min}");
            }
        }
    }

    #[test]
    fn rff_covariance_matches_kernel() {
        let k = EqArdKernel::new(1.5, vec![0.8, 1.3]).unwrap();
        let basis = sample_frequencies(&k, 100_000, &mut rng_from(11, &[])).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[0.1, -0.3, 0.6, 0.4]);
        let phi = basis.features(&x).unwrap();
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let est = phi.row(i).dot(&phi.row(j));
            let exact = eq_ard_eval(&k, &[x[(i, 0)], x[(i, 1)]], &[x[(j, 0)], x[(j, 1)]]);
            assert!((est - exact).abs() < 0.02, "({i},{j}): {est} vs {exact}");
        }
    }

    #[test]
    fn long_lengthscale_gives_nearly_constant_samples() {
        let k = EqArdKernel::new(1.0, vec![1e6]).unwrap();
        let basis = sample_frequencies(&k, 64, &mut rng_from(5, &[])).unwrap();
        let x = DMatrix::from_fn(50, 1, |i, _| -3.0 + 0.12 * i as f64);
        let f = basis.eval(&x).unwrap();
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        let var = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.len() as f64;
        assert!(var < 0.01);
        assert!(basis.frequencies.amax() < 1e-4);
    }

    #[test]
    fn sampling_is_deterministic() {
        let k = EqArdKernel::new(1.0, vec![0.5]).unwrap();
        let a = sample_frequencies(&k, 32, &mut rng_from(9, &[1])).unwrap();
        let b = sample_frequencies(&k, 32, &mut rng_from(9, &[1])).unwrap();
        assert_eq!(a, b);
        assert!(sample_frequencies(&k, 0, &mut rng_from(9, &[1])).is_err());
    }

    #[test]
    fn rff_error_shrinks_with_basis_size() {
        let k = EqArdKernel::new(1.0, vec![1.0]).unwrap();
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 0.7]);
        let exact = eq_ard_eval(&k, &[0.0], &[0.7]);
        let mut medians = Vec::new();
        for b in [100, 1000, 10_000] {
            let mut errs: Vec<f64> = (0..20)
                .map(|s| {
                    let basis = sample_frequencies(&k, b, &mut rng_from(s, &[b as u64])).unwrap();
                    let phi = basis.features(&x).unwrap();
                    (phi.row(0).dot(&phi.row(1)) - exact).abs()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            medians.push(0.5 * (errs[9] + errs[10]));
        }
        assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
    }

    proptest! {
        #[test]
        fn eq_is_symmetric_with_unit_diagonal_ratio(
            a in prop::collection::vec(-3.0f64..3.0, 3),
            b in prop::collection::vec(-3.0f64..3.0, 3),
            var in 0.1f64..5.0,
        ) {
            let k = EqArdKernel::new(var, vec![0.5, 1.0, 2.0]).unwrap();
            prop_assert_eq!(eq_ard_eval(&k, &a, &b), eq_ard_eval(&k, &b, &a));
            prop_assert_eq!(eq_ard_eval(&k, &a, &a), var);
        }

        #[test]
        fn dse_is_symmetric(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let k = DseKernel::new(1.2, 0.7, 0.4).unwrap();
            prop_assert_eq!(dse_eval(&k, x, y), dse_eval(&k, y, x));
        }
    }
}
