use nalgebra::DMatrix;

use super::sample::{draw_noise, model_paths, LayerNoise};
use super::Model;
use crate::convolution::layer_output_sample;
use crate::error::{numeric, parameter, Result};
use crate::rng::Rng;

/// Moment summary of the predictive distribution, each N×D.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: DMatrix<f64>,
    /// Sample variance of the latent outputs plus the noise variance.
    pub variance: DMatrix<f64>,
    /// Monte Carlo standard error of `mean`.
    pub stderr: DMatrix<f64>,
}

/// `samples` draws of the last layer's output, each N×D, with fresh paths per layer and sample.
pub fn forward_deep(model: &Model, x: &DMatrix<f64>, samples: usize, rng: &mut Rng) -> Result<Vec<DMatrix<f64>>> {
    let noise: Vec<_> = (0..samples).map(|s| draw_noise(model, s, rng)).collect();
    forward_with_noise(model, x, &noise)
}

pub(crate) fn forward_with_noise(
    model: &Model,
    x: &DMatrix<f64>,
    noise: &[Vec<LayerNoise>],
) -> Result<Vec<DMatrix<f64>>> {
    model.validate()?;
    model.check_inputs(x)?;
    noise
        .iter()
        .map(|nz| {
            let paths = model_paths(model, nz)?;
            let mut h = x.clone();
            for (li, p) in paths.iter().enumerate() {
                h = layer_output_sample(p, &h)?;
                if let Some(v) = h.iter().find(|v| !v.is_finite()) {
                    return Err(numeric(format!("layer {li} produced non-finite output {v}")));
                }
            }
            Ok(h)
        })
        .collect()
}

pub fn predict(model: &Model, x: &DMatrix<f64>, samples: usize, rng: &mut Rng) -> Result<Prediction> {
    if samples < 2 {
        return Err(parameter(format!(
            "predictive variance needs at least 2 samples, got {samples}"
        )));
    }
    let draws = forward_deep(model, x, samples, rng)?;
    Ok(summarize(&draws, model.noise_variance))
}

fn summarize(draws: &[DMatrix<f64>], noise_variance: f64) -> Prediction {
    let s = draws.len() as f64;
    let (n, d) = draws[0].shape();
    let mean = draws.iter().fold(DMatrix::zeros(n, d), |acc, f| acc + f) / s;
    let var = draws
        .iter()
        .fold(DMatrix::zeros(n, d), |acc, f| acc + (f - &mean).map(|e| e * e))
        / (s - 1.0);
    let stderr = var.map(|v| (v / s).sqrt());
    let variance = var.add_scalar(noise_variance);
    Prediction { mean, variance, stderr }
}
