//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are skipped. Every key may appear
//! at most once and unknown keys are rejected. Per-layer keys take either one
//! value for all layers or a comma-separated list with one value per layer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use npcgp::convolution::Variant;
use npcgp::data::OutputColumns;
use npcgp::model::{BasisMode, InitConfig, LayerConfig};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// One layer, one smoothing kernel set per output.
    Npcgp,
    /// One layer, a single shared smoothing kernel set.
    Fnpcgp,
    /// Stacked shared-kernel layers.
    Npdgp,
    /// Sparse variational GP baseline, one per output.
    Svgp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InducingInit {
    Kmeans,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub outputs: OutputColumns,
    pub variant: ModelKind,
    pub layers: usize,
    /// Q per layer.
    pub latent_count: Vec<usize>,
    /// M_u per layer.
    pub input_inducing: Vec<usize>,
    /// M_G per layer.
    pub kernel_inducing: Vec<usize>,
    /// B per layer.
    pub basis_size: Vec<usize>,
    pub samples: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub noise_variance: f64,
    pub inducing_init: InducingInit,
    pub output_dir: PathBuf,
    pub checkpoint_every: usize,
    pub train_fraction: f64,
    pub basis_mode: BasisMode,
    /// Monte Carlo samples for the final test metrics.
    pub eval_samples: usize,
    pub input_lengthscale: f64,
    pub kernel_lengthscale: f64,
    pub kernel_window_lengthscale: f64,
}

pub const KEYS: &[&str] = &[
    "data",
    "outputs",
    "variant",
    "layers",
    "latent_count",
    "input_inducing",
    "kernel_inducing",
    "basis_size",
    "samples",
    "batch_size",
    "iterations",
    "learning_rate",
    "seed",
    "noise_variance",
    "inducing_init",
    "output_dir",
    "checkpoint_every",
    "train_fraction",
    "basis_mode",
    "eval_samples",
    "input_lengthscale",
    "kernel_lengthscale",
    "kernel_window_lengthscale",
];

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn scalar<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| config_err(format!("{key}: cannot parse {raw:?}")))
}

fn list(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',').map(|v| scalar(key, v.trim())).collect()
}

fn per_layer(key: &str, values: Vec<usize>, layers: usize) -> Result<Vec<usize>> {
    match values.len() {
        1 => Ok(vec![values[0]; layers]),
        n if n == layers => Ok(values),
        n => Err(config_err(format!("{key}: {n} values for {layers} layers"))),
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(config_err(format!("line {}: unknown key {k:?}", no + 1)));
            }
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(config_err(format!("line {}: duplicate key {k:?}", no + 1)));
            }
        }
        let get = |k: &str| kv.get(k).map(String::as_str);
        let data = get("data").ok_or_else(|| config_err("missing key \"data\""))?;
        let outputs = match get("outputs").ok_or_else(|| config_err("missing key \"outputs\""))? {
            v if v.starts_with("last:") => OutputColumns::Last(scalar("outputs", v["last:".len()..].trim())?),
            v => OutputColumns::Names(v.split(',').map(|s| s.trim().to_string()).collect()),
        };
        let variant = match get("variant").unwrap_or("npcgp") {
            "npcgp" => ModelKind::Npcgp,
            "fnpcgp" => ModelKind::Fnpcgp,
            "npdgp" => ModelKind::Npdgp,
            "svgp" => ModelKind::Svgp,
            other => return Err(config_err(format!("variant: unknown model {other:?}"))),
        };
        let layers: usize = get("layers").map_or(Ok(1), |v| scalar("layers", v))?;
        let lists = |k: &str, default: usize| -> Result<Vec<usize>> {
            let values = get(k).map_or(Ok(vec![default]), |v| list(k, v))?;
            per_layer(k, values, layers)
        };
        let num = |k: &str, default: f64| -> Result<f64> { get(k).map_or(Ok(default), |v| scalar(k, v)) };
        let count = |k: &str, default: usize| -> Result<usize> { get(k).map_or(Ok(default), |v| scalar(k, v)) };
        let cfg = RunConfig {
            data: resolve(base, data),
            outputs,
            variant,
            layers,
            latent_count: lists("latent_count", 1)?,
            input_inducing: lists("input_inducing", 100)?,
            kernel_inducing: lists("kernel_inducing", 15)?,
            basis_size: lists("basis_size", 16)?,
            samples: count("samples", 2)?,
            batch_size: count("batch_size", 1000)?,
            iterations: count("iterations", 40_000)?,
            learning_rate: num("learning_rate", 1e-3)?,
            seed: get("seed").map_or(Ok(0), |v| scalar("seed", v))?,
            noise_variance: num("noise_variance", 0.01)?,
            inducing_init: match get("inducing_init").unwrap_or("kmeans") {
                "kmeans" => InducingInit::Kmeans,
                other => return Err(config_err(format!("inducing_init: unknown method {other:?}"))),
            },
            output_dir: resolve(base, get("output_dir").unwrap_or("out")),
            checkpoint_every: count("checkpoint_every", 1000)?,
            train_fraction: num("train_fraction", 0.9)?,
            basis_mode: match get("basis_mode").unwrap_or("resample") {
                "resample" => BasisMode::Resample,
                "fixed" => BasisMode::Fixed,
                other => return Err(config_err(format!("basis_mode: unknown mode {other:?}"))),
            },
            eval_samples: count("eval_samples", 100)?,
            input_lengthscale: num("input_lengthscale", 0.5)?,
            kernel_lengthscale: num("kernel_lengthscale", 0.5)?,
            kernel_window_lengthscale: num("kernel_window_lengthscale", 1.0)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(config_err("layers must be positive"));
        }
        if self.layers > 1 && self.variant != ModelKind::Npdgp {
            return Err(config_err("only npdgp models may have more than one layer"));
        }
        let per_layer = [
            ("latent_count", &self.latent_count),
            ("input_inducing", &self.input_inducing),
            ("kernel_inducing", &self.kernel_inducing),
            ("basis_size", &self.basis_size),
        ];
        for (k, v) in per_layer {
            if v.len() != self.layers || v.contains(&0) {
                return Err(config_err(format!("{k} needs one positive value per layer")));
            }
        }
        for (k, v) in [
            ("samples", self.samples),
            ("batch_size", self.batch_size),
            ("checkpoint_every", self.checkpoint_every),
        ] {
            if v == 0 {
                return Err(config_err(format!("{k} must be positive")));
            }
        }
        if self.eval_samples < 2 {
            return Err(config_err("eval_samples must be at least 2"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(config_err("train_fraction must lie in (0, 1)"));
        }
        for (k, v) in [
            ("learning_rate", self.learning_rate),
            ("noise_variance", self.noise_variance),
            ("input_lengthscale", self.input_lengthscale),
            ("kernel_lengthscale", self.kernel_lengthscale),
            ("kernel_window_lengthscale", self.kernel_window_lengthscale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("{k} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Layer shapes for `p` inputs and `d` outputs; hidden layers keep width `p`.
    pub fn layer_configs(&self, p: usize, d: usize) -> Vec<LayerConfig> {
        let variant = match self.variant {
            ModelKind::Npcgp => Variant::Full,
            _ => Variant::Fast,
        };
        (0..self.layers)
            .map(|l| LayerConfig {
                output_dim: if l + 1 == self.layers { d } else { p },
                latent_count: self.latent_count[l],
                input_inducing: self.input_inducing[l],
                kernel_inducing: self.kernel_inducing[l],
                basis_size: self.basis_size[l],
                variant,
            })
            .collect()
    }

    pub fn init_config(&self) -> InitConfig {
        InitConfig {
            input_lengthscale: self.input_lengthscale,
            kernel_lengthscale: self.kernel_lengthscale,
            kernel_window_lengthscale: self.kernel_window_lengthscale,
            noise_variance: self.noise_variance,
            basis_mode: self.basis_mode,
            ..InitConfig::default()
        }
    }
}
