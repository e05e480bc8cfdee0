//! Two outputs mixing a smooth EQ process and a weakly periodic process.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{parameter, Result};
use crate::kernels::{cov_matrix, eq_ard_eval, EqArdKernel, Kernel, PeriodicEqKernel};
use crate::rng::{derive_seed, rng_from, stream, Rng};

/// Rows are outputs, columns the weights on (u_EQ, u_P).
pub const TOY_MIXING: [[f64; 2]; 2] = [[0.9, 0.1], [0.5, 0.5]];
pub const TOY_NOISE_STD: f64 = 0.01;
const LENGTHSCALE: f64 = 1.5;
const PERIODS: [f64; 2] = [1.8, 2.1];
const MAX_N: usize = 4000;
/// Latent sampling jitter; well below the observation noise variance.
const SAMPLING_JITTER: f64 = 1e-8;

fn eq_kernel() -> EqArdKernel {
    EqArdKernel::new(1.0, vec![LENGTHSCALE; 2]).expect("valid constants")
}

fn periodic_kernel() -> PeriodicEqKernel {
    PeriodicEqKernel::new(1.0, vec![LENGTHSCALE; 2], PERIODS.to_vec(), vec![LENGTHSCALE; 2]).expect("valid constants")
}

/// Ground-truth covariance of output `d` at a 2-vector lag.
pub fn toy_output_covariance(d: usize, lag: &[f64]) -> f64 {
    let [a, b] = TOY_MIXING[d];
    let zero = [0.0, 0.0];
    a * a * eq_ard_eval(&eq_kernel(), &zero, lag) + b * b * periodic_kernel().eval(&zero, lag)
}

fn sample_gp<K: Kernel>(k: &K, x: &DMatrix<f64>, rng: &mut Rng) -> Result<DVector<f64>> {
    let fac = cov_matrix(k, x, SAMPLING_JITTER)?;
    let eps = DVector::from_fn(x.nrows(), |_, _| StandardNormal.sample(rng));
    Ok(fac.l * eps)
}

/// Exact joint draws of (u_EQ, u_P) at the rows of x.
pub(crate) fn toy_latents(x: &DMatrix<f64>, rng: &mut Rng) -> Result<(DVector<f64>, DVector<f64>)> {
    let ueq = sample_gp(&eq_kernel(), x, rng)?;
    let up = sample_gp(&periodic_kernel(), x, rng)?;
    Ok((ueq, up))
}

pub fn toy_generate(n: usize, seed: u64) -> Result<Dataset> {
    toy_generate_with(
        n,
        derive_seed(seed, &[stream::TOY_LATENT]),
        derive_seed(seed, &[stream::TOY_NOISE]),
    )
}

/// Inputs and latents come from `latent_seed`; observation noise from `noise_seed`.
pub fn toy_generate_with(n: usize, latent_seed: u64, noise_seed: u64) -> Result<Dataset> {
    if n == 0 || n > MAX_N {
        return Err(parameter(format!("toy data supports 1..={MAX_N} rows, got {n}")));
    }
    let mut rng = rng_from(latent_seed, &[]);
    let x = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
    let (ueq, up) = toy_latents(&x, &mut rng)?;
    let mut noise = rng_from(noise_seed, &[]);
    let y = DMatrix::from_fn(n, 2, |i, d| {
        let e: f64 = StandardNormal.sample(&mut noise);
        TOY_MIXING[d][0] * ueq[i] + TOY_MIXING[d][1] * up[i] + TOY_NOISE_STD * e
    });
    Dataset::new(x, y, vec!["x1".into(), "x2".into()], vec!["y1".into(), "y2".into()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        let ds = toy_generate(300, 1).unwrap();
        assert_eq!((ds.x.nrows(), ds.x.ncols(), ds.y.ncols()), (300, 2, 2));
        assert!(toy_generate(MAX_N + 1, 1).is_err());
    }

    #[test]
    fn same_latents_differ_only_by_noise() {
        let a = toy_generate_with(400, 9, 1).unwrap();
        let b = toy_generate_with(400, 9, 2).unwrap();
        assert_eq!(a.x, b.x);
        let msd = (0..400).map(|i| (a.y[(i, 0)] - b.y[(i, 0)]).powi(2)).sum::<f64>() / 400.0;
        let want = 2.0 * TOY_NOISE_STD * TOY_NOISE_STD;
        assert!((msd - want).abs() < 0.2 * want, "{msd}");
    }

    #[test]
    fn eq_latent_covariance_matches_kernel() {
        let x = DMatrix::from_row_slice(2, 2, &[0.1, -0.3, 0.9, 0.4]);
        // 200 draws give a standard error near 0.09, so the 0.1 bound is about one sigma.
        let mut rng = rng_from(8, &[]);
        let draws: Vec<(f64, f64)> = (0..200)
            .map(|_| {
                let (u, _) = toy_latents(&x, &mut rng).unwrap();
                (u[0], u[1])
            })
            .collect();
        let cov = draws.iter().map(|(a, b)| a * b).sum::<f64>() / draws.len() as f64;
        let want = eq_ard_eval(&eq_kernel(), &[0.1, -0.3], &[0.9, 0.4]);
        assert!((cov - want).abs() < 0.1, "{cov} vs {want}");
    }

    fn curvature_sign_changes(d: usize) -> usize {
        let f: Vec<f64> = (0..=80)
            .map(|i| toy_output_covariance(d, &[0.05 * i as f64, 0.0]))
            .collect();
        let second: Vec<f64> = f.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect();
        second.windows(2).filter(|w| w[0].signum() != w[1].signum()).count()
    }

    #[test]
    fn second_output_carries_the_periodic_component() {
        // A Gaussian-shaped curve changes curvature once; the periodic factor adds more.
        assert_eq!(curvature_sign_changes(0), 1);
        assert!(curvature_sign_changes(1) > 1);
    }
}
