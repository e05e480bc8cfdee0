use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;

use super::objective::elbo_with_grad;
use super::sample::draw_noise;
use super::Model;
use crate::error::{numeric, parameter, Error, Result};
use crate::grad::{adam_step, AdamState};
use crate::rng::{rng_from, stream};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Monte Carlo samples S per bound evaluation.
    pub samples: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// The callback receives the model every this many iterations; 0 disables it.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 1000,
            samples: 2,
            learning_rate: 0.01,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

/// Minibatch bound before the update of iteration `iteration` (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub elbo: f64,
    pub wall_seconds: f64,
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Adam on the negative minibatch bound.
///
/// `checkpoint(iteration, model, records)` runs every `checkpoint_every`
/// iterations and after the last one; an error from it stops training.
pub fn train<F>(
    model: &Model,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
    mut checkpoint: F,
) -> Result<(Model, Vec<TrainRecord>)>
where
    F: FnMut(usize, &Model, &[TrainRecord]) -> Result<()>,
{
    model.validate()?;
    let n = x.nrows();
    if n == 0 || y.nrows() != n {
        return Err(parameter(format!("{n} inputs and {} targets", y.nrows())));
    }
    if cfg.batch_size == 0 || cfg.samples == 0 || !(cfg.learning_rate > 0.0) {
        return Err(parameter("batch size, sample count and learning rate must be positive"));
    }
    let layout = model.layout();
    let mut theta = model.params();
    let mut adam = AdamState::new(theta.len(), cfg.learning_rate);
    let mut noise_rng = rng_from(cfg.seed, &[stream::TRAIN]);
    let mut batch_rng = rng_from(cfg.seed, &[stream::BATCH]);
    let mut current = model.clone();
    let mut records = Vec::with_capacity(cfg.iterations);
    let start = Instant::now();
    let batch = cfg.batch_size.min(n);
    for it in 1..=cfg.iterations {
        let (xb, yb) = if batch == n {
            (x.clone(), y.clone())
        } else {
            let idx = sample_indices(&mut batch_rng, n, batch).into_vec();
            (rows(x, &idx), rows(y, &idx))
        };
        let noise: Vec<_> = (0..cfg.samples)
            .map(|s| draw_noise(&current, s, &mut noise_rng))
            .collect();
        let (bound, grad) =
            elbo_with_grad(&current, &xb, &yb, n, &noise).map_err(|e| numeric(format!("iteration {it}: {e}")))?;
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        if let Some(i) = neg.iter().position(|g| !g.is_finite()) {
            return Err(numeric(format!(
                "iteration {it}: non-finite gradient for {}",
                layout.group_of(i).unwrap_or("?")
            )));
        }
        adam_step(&mut theta, &neg, &mut adam)?;
        current = current.with_params(&theta).map_err(|e| match e {
            Error::Parameter(msg) => numeric(format!("iteration {it}: parameters left their domain: {msg}")),
            other => other,
        })?;
        records.push(TrainRecord {
            iteration: it,
            elbo: bound,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0) || it == cfg.iterations {
            checkpoint(it, &current, &records)?;
        }
    }
    Ok((current, records))
}
