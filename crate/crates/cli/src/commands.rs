use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use npcgp::convolution::estimate_output_covariance;
use npcgp::data::{
    destandardize_predictions, kmeans, load_csv, split, standardize, toy_generate, Dataset, OutputColumns,
    Standardization,
};
use npcgp::kernels::{factor_with_jitter, gram, EqArdKernel, DEFAULT_JITTER};
use npcgp::model::{init_model, predict, svgp_predict, train, train_svgp, Model, TrainConfig, TrainRecord};
use npcgp::pathwise::{interdomain_cov_matrix, InducingSet};
use npcgp::rng::{derive_seed, rng_from, stream};

use crate::artifact::{dataset_csv, summary_csv, trajectory_csv, write_atomic, ModelFile, SvgpPart, Trained};
use crate::config::{ModelKind, RunConfig};
use crate::error::{CliError, Result};
use crate::metrics::{output_metrics, OutputMetrics};

pub const MODEL_FILE: &str = "model.json";
pub const TRAJECTORY_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
/// Anchors averaged over in covariance estimates, evenly spaced on the
/// diagonal of [−1, 1]^P in standardised units.
pub const COVARIANCE_ANCHORS: usize = 5;
pub const KMEANS_ITERS: usize = 100;

/// Standardised train/test split and the initial model of a run.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub standardization: Standardization,
    pub initial: ModelFile,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model_path: PathBuf,
    pub trajectory_path: PathBuf,
    pub summary_path: PathBuf,
    pub summary: Vec<OutputMetrics>,
}

fn svgp_prior(kernel: EqArdKernel, z: DMatrix<f64>, noise: f64) -> Result<SvgpPart> {
    let l = factor_with_jitter(gram(&kernel, &z, &z)?, DEFAULT_JITTER)?.l;
    let m = z.nrows();
    Ok(SvgpPart {
        kernel,
        inducing: InducingSet::new(z, DVector::zeros(m), l)?,
        noise_variance: noise,
    })
}

/// Load, standardise, split and initialise, exactly as `train` does.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let raw = load_csv(&cfg.data, &cfg.outputs)?;
    let (ds, standardization) = standardize(&raw)?;
    let (train_set, test_set) = split(&ds, cfg.train_fraction, cfg.seed)?;
    let init_seed = derive_seed(cfg.seed, &[stream::INIT]);
    let (p, d) = (ds.input_dim(), ds.output_dim());
    let model = match cfg.variant {
        ModelKind::Svgp => {
            let z = kmeans(&train_set.x, cfg.input_inducing[0], init_seed, KMEANS_ITERS)?;
            let parts = (0..d)
                .map(|_| {
                    let k = EqArdKernel::new(1.0, vec![cfg.input_lengthscale; p])?;
                    svgp_prior(k, z.clone(), cfg.noise_variance)
                })
                .collect::<Result<Vec<_>>>()?;
            Trained::Svgp(parts)
        }
        _ => Trained::Convolved(init_model(
            &cfg.layer_configs(p, d),
            &train_set.x,
            &cfg.init_config(),
            init_seed,
        )?),
    };
    let initial = ModelFile {
        iteration: 0,
        seed: cfg.seed,
        input_names: ds.input_names.clone(),
        output_names: ds.output_names.clone(),
        standardization: standardization.clone(),
        model,
    };
    Ok(Prepared {
        train: train_set,
        test: test_set,
        standardization,
        initial,
    })
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("cannot write {}: {e}", path.display()))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let prepared = prepare(cfg)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    let model_path = dir.join(MODEL_FILE);
    let trajectory_path = dir.join(TRAJECTORY_FILE);
    let summary_path = dir.join(SUMMARY_FILE);
    prepared.initial.save(&model_path).map_err(io_at(&model_path))?;
    write_atomic(&trajectory_path, trajectory_csv(&[]).as_bytes()).map_err(io_at(&trajectory_path))?;

    let (train_set, base) = (&prepared.train, &prepared.initial);
    let trained = match &base.model {
        Trained::Convolved(model) => {
            let tc = TrainConfig {
                iterations: cfg.iterations,
                batch_size: cfg.batch_size,
                samples: cfg.samples,
                learning_rate: cfg.learning_rate,
                seed: cfg.seed,
                checkpoint_every: cfg.checkpoint_every,
            };
            let result = train(model, &train_set.x, &train_set.y, &tc, |it, m, records| {
                let file = ModelFile {
                    iteration: it,
                    model: Trained::Convolved(m.clone()),
                    ..base.clone()
                };
                file.save(&model_path)?;
                write_atomic(&trajectory_path, trajectory_csv(records).as_bytes())?;
                Ok(())
            });
            let (model, records) = result.map_err(|e| match CliError::from(e) {
                CliError::Numeric(msg) => CliError::Numeric(format!(
                    "training aborted: {msg}; last checkpoint kept at {}",
                    model_path.display()
                )),
                other => other,
            })?;
            write_atomic(&trajectory_path, trajectory_csv(&records).as_bytes()).map_err(io_at(&trajectory_path))?;
            Trained::Convolved(model)
        }
        Trained::Svgp(parts) => {
            let start = Instant::now();
            let mut bound = vec![0.0; cfg.iterations];
            let fits = parts
                .iter()
                .enumerate()
                .map(|(d, part)| {
                    let y: Vec<f64> = train_set.y.column(d).iter().copied().collect();
                    let fit = train_svgp(
                        &part.kernel,
                        &part.inducing.inputs,
                        part.noise_variance,
                        &train_set.x,
                        &y,
                        cfg.iterations,
                        cfg.batch_size,
                        cfg.learning_rate,
                        derive_seed(cfg.seed, &[stream::TRAIN, d as u64]),
                    )?;
                    for (b, t) in bound.iter_mut().zip(&fit.trace) {
                        *b += t;
                    }
                    Ok(SvgpPart {
                        kernel: fit.kernel,
                        inducing: fit.inducing,
                        noise_variance: fit.noise_variance,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            // The outputs are fitted one after another, so wall time is spread evenly.
            let total = start.elapsed().as_secs_f64();
            let records: Vec<TrainRecord> = bound
                .iter()
                .enumerate()
                .map(|(i, &elbo)| TrainRecord {
                    iteration: i + 1,
                    elbo,
                    wall_seconds: total * (i + 1) as f64 / cfg.iterations as f64,
                })
                .collect();
            write_atomic(&trajectory_path, trajectory_csv(&records).as_bytes()).map_err(io_at(&trajectory_path))?;
            Trained::Svgp(fits)
        }
    };
    let file = ModelFile {
        iteration: cfg.iterations,
        model: trained,
        ..base.clone()
    };
    file.save(&model_path).map_err(io_at(&model_path))?;
    let y_raw = prepared.standardization.y.invert(&prepared.test.y);
    let summary = evaluate(&file, &prepared.test.x, &y_raw, cfg.eval_samples)?;
    write_atomic(&summary_path, summary_csv(&summary).as_bytes()).map_err(io_at(&summary_path))?;
    Ok(TrainOutcome {
        model_path,
        trajectory_path,
        summary_path,
        summary,
    })
}

/// Predictive mean and variance on the standardised scale.
pub fn predict_standardized(
    file: &ModelFile,
    x: &DMatrix<f64>,
    samples: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    match &file.model {
        Trained::Convolved(model) => {
            let pred = predict(model, x, samples, &mut rng_from(file.seed, &[stream::PREDICT]))?;
            Ok((pred.mean, pred.variance))
        }
        Trained::Svgp(parts) => {
            let (n, d) = (x.nrows(), parts.len());
            let mut mean = DMatrix::zeros(n, d);
            let mut var = DMatrix::zeros(n, d);
            for (j, part) in parts.iter().enumerate() {
                let (m, v) = svgp_predict(&part.kernel, &part.inducing, part.noise_variance, x)?;
                mean.set_column(j, &DVector::from_vec(m));
                var.set_column(j, &DVector::from_vec(v));
            }
            Ok((mean, var))
        }
    }
}

/// Scores on the original target scale for standardised inputs `x` and raw targets `y`.
pub fn evaluate(file: &ModelFile, x: &DMatrix<f64>, y: &DMatrix<f64>, samples: usize) -> Result<Vec<OutputMetrics>> {
    let (m, v) = predict_standardized(file, x, samples)?;
    let (m, v) = destandardize_predictions(&file.standardization, &m, &v);
    Ok(output_metrics(y, &m, &v))
}

pub fn cmd_eval(model_path: &Path, data_path: &Path, samples: usize) -> Result<Vec<OutputMetrics>> {
    let file = ModelFile::load(model_path)?;
    let ds = load_csv(data_path, &OutputColumns::Names(file.output_names.clone()))?;
    let p = file.input_names.len();
    if ds.input_dim() != p {
        return Err(CliError::Structural(format!(
            "model expects {p} inputs, {} has {}",
            data_path.display(),
            ds.input_dim()
        )));
    }
    let x = file.standardization.x.apply(&ds.x);
    evaluate(&file, &x, &ds.y, samples)
}

/// One point of a covariance curve, in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceRow {
    pub output: usize,
    pub dim: usize,
    pub lag: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// The same model with every input process reset to its prior, so output
/// draws integrate over u while keeping the learnt smoothing kernels.
pub fn with_prior_inputs(model: &Model) -> Result<Model> {
    let mut out = model.clone();
    for layer in &mut out.layers {
        for u in &mut layer.inputs {
            let z = u.inducing.inputs.clone();
            let k = interdomain_cov_matrix(&u.kernel, &u.window, &z, &z)?;
            let l = factor_with_jitter(k, DEFAULT_JITTER)?.l;
            u.inducing = InducingSet::new(z, DVector::zeros(l.nrows()), l)?;
        }
    }
    Ok(out)
}

/// `grid` evenly spaced lags on [−range, range]; a single point sits at zero.
pub fn lag_grid(range: f64, grid: usize) -> Vec<f64> {
    match grid {
        0 => Vec::new(),
        1 => vec![0.0],
        g => (0..g)
            .map(|i| -range + 2.0 * range * i as f64 / (g - 1) as f64)
            .collect(),
    }
}

/// Per-dimension output covariance curves of a single-layer convolved model.
///
/// Lags are in original input units and move one dimension at a time.
pub fn covariance_curves(file: &ModelFile, range: f64, grid: usize, samples: usize) -> Result<Vec<CovarianceRow>> {
    let model = match &file.model {
        Trained::Convolved(m) if m.layers.len() == 1 => m,
        _ => {
            return Err(CliError::Structural(
                "covariance curves need a single-layer convolved model".into(),
            ))
        }
    };
    if !(range >= 0.0 && range.is_finite()) || grid == 0 {
        return Err(CliError::Config(
            "lag range must be finite and non-negative and the grid non-empty".into(),
        ));
    }
    let prior = with_prior_inputs(model)?;
    let (p, d) = (model.input_dim(), model.output_dim());
    let sx = &file.standardization.x.std;
    let sy = &file.standardization.y.std;
    let mut rng = rng_from(file.seed, &[stream::COVARIANCE]);
    let anchors = DMatrix::from_fn(COVARIANCE_ANCHORS, p, |a, _| {
        -1.0 + 2.0 * a as f64 / (COVARIANCE_ANCHORS - 1) as f64
    });
    let lags = lag_grid(range, grid);
    let mut vectors = Vec::with_capacity(p * grid);
    for dim in 0..p {
        for &r in &lags {
            let mut v = vec![0.0; p];
            v[dim] = r / sx[dim];
            vectors.push(v);
        }
    }
    let curves = estimate_output_covariance(
        |pts, rng| Ok(npcgp::model::forward_deep(&prior, pts, 1, rng)?.remove(0)),
        &anchors,
        &vectors,
        samples,
        &mut rng,
    )?;
    let mut rows = Vec::with_capacity(d * p * grid);
    for (out, curve) in curves.iter().enumerate() {
        let s2 = sy[out] * sy[out];
        let (lo, hi) = (curve.lower(), curve.upper());
        for dim in 0..p {
            for (g, &r) in lags.iter().enumerate() {
                let k = dim * grid + g;
                rows.push(CovarianceRow {
                    output: out,
                    dim,
                    lag: r,
                    mean: curve.mean[k] * s2,
                    lower: lo[k] * s2,
                    upper: hi[k] * s2,
                });
            }
        }
    }
    Ok(rows)
}

pub fn covariance_csv(rows: &[CovarianceRow]) -> String {
    let mut s = String::from("output,dim,lag,mean,lower,upper\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.output, r.dim, r.lag, r.mean, r.lower, r.upper
        ));
    }
    s
}

pub fn cmd_covariance(model_path: &Path, range: f64, grid: usize, samples: usize) -> Result<Vec<CovarianceRow>> {
    covariance_curves(&ModelFile::load(model_path)?, range, grid, samples)
}

pub fn cmd_toygen(n: usize, seed: u64, out: &Path) -> Result<Dataset> {
    let ds = toy_generate(n, seed)?;
    write_atomic(out, dataset_csv(&ds).as_bytes()).map_err(io_at(out))?;
    Ok(ds)
}
