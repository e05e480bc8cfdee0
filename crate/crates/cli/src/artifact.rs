//! Model files and CSV outputs.
//!
//! A model file is a JSON document with `format = "npcgp-model"` and an
//! integer `version`. Matrices are stored as arrays of rows. Every write goes
//! to a temporary file in the target directory which is then renamed over
//! the destination, so readers never see a partial file.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use npcgp::convolution::Variant;
use npcgp::data::{Dataset, Standardization};
use npcgp::kernels::{DseKernel, EqArdKernel};
use npcgp::model::{BasisMode, InputProcess, KernelProcess, LayerState, Model, TrainRecord};
use npcgp::pathwise::{GaussianWindow, InducingSet};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::metrics::OutputMetrics;

pub const FORMAT: &str = "npcgp-model";
pub const VERSION: u32 = 1;

/// One fitted sparse GP, for a single output.
#[derive(Clone, Debug, PartialEq)]
pub struct SvgpPart {
    pub kernel: EqArdKernel,
    pub inducing: InducingSet,
    pub noise_variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Trained {
    Convolved(Model),
    Svgp(Vec<SvgpPart>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    /// Training iterations behind these parameters.
    pub iteration: usize,
    /// Root seed of the run; prediction streams derive from it.
    pub seed: u64,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub standardization: Standardization,
    pub model: Trained,
}

#[derive(Serialize, Deserialize)]
struct FileDto {
    format: String,
    version: u32,
    iteration: usize,
    seed: u64,
    input_names: Vec<String>,
    output_names: Vec<String>,
    standardization: Standardization,
    model: ModelDto,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelDto {
    Convolved(ConvolvedDto),
    Svgp { outputs: Vec<SvgpDto> },
}

#[derive(Serialize, Deserialize)]
struct ConvolvedDto {
    noise_variance: f64,
    seed: u64,
    basis_mode: String,
    layers: Vec<LayerDto>,
}

#[derive(Serialize, Deserialize)]
struct LayerDto {
    variant: Variant,
    input_dim: usize,
    output_dim: usize,
    basis_size: usize,
    mixing: Vec<f64>,
    inputs: Vec<InputDto>,
    kernels: Vec<Vec<KernelDto>>,
}

#[derive(Serialize, Deserialize)]
struct InputDto {
    variance: f64,
    lengthscales: Vec<f64>,
    window_amplitude: f64,
    window_precisions: Vec<f64>,
    inducing: InducingDto,
}

#[derive(Serialize, Deserialize)]
struct KernelDto {
    variance: f64,
    lengthscale: f64,
    decay: f64,
    inducing: InducingDto,
}

#[derive(Serialize, Deserialize)]
struct SvgpDto {
    variance: f64,
    lengthscales: Vec<f64>,
    noise_variance: f64,
    inducing: InducingDto,
}

#[derive(Serialize, Deserialize)]
struct InducingDto {
    inputs: Vec<Vec<f64>>,
    mean: Vec<f64>,
    scale_tril: Vec<Vec<f64>>,
}

fn bad_file(msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("invalid model file: {msg}"))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(bad_file("ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

impl InducingDto {
    fn from_set(s: &InducingSet) -> Self {
        Self {
            inputs: rows_of(&s.inputs),
            mean: s.mean.iter().copied().collect(),
            scale_tril: rows_of(&s.scale_tril),
        }
    }

    fn to_set(&self) -> Result<InducingSet> {
        Ok(InducingSet::new(
            matrix(&self.inputs)?,
            DVector::from_column_slice(&self.mean),
            matrix(&self.scale_tril)?,
        )?)
    }
}

fn basis_mode_name(m: BasisMode) -> &'static str {
    match m {
        BasisMode::Resample => "resample",
        BasisMode::Fixed => "fixed",
    }
}

impl ModelDto {
    fn from_trained(t: &Trained) -> Self {
        match t {
            Trained::Convolved(m) => ModelDto::Convolved(ConvolvedDto {
                noise_variance: m.noise_variance,
                seed: m.seed,
                basis_mode: basis_mode_name(m.basis_mode).into(),
                layers: m
                    .layers
                    .iter()
                    .map(|l| LayerDto {
                        variant: l.variant,
                        input_dim: l.input_dim,
                        output_dim: l.output_dim,
                        basis_size: l.basis_size,
                        mixing: l.mixing.clone(),
                        inputs: l
                            .inputs
                            .iter()
                            .map(|u| InputDto {
                                variance: u.kernel.variance,
                                lengthscales: u.kernel.lengthscales.clone(),
                                window_amplitude: u.window.amplitude,
                                window_precisions: u.window.precisions.clone(),
                                inducing: InducingDto::from_set(&u.inducing),
                            })
                            .collect(),
                        kernels: l
                            .kernels
                            .iter()
                            .map(|set| {
                                set.iter()
                                    .map(|g| KernelDto {
                                        variance: g.kernel.variance,
                                        lengthscale: g.kernel.lengthscale,
                                        decay: g.kernel.decay,
                                        inducing: InducingDto::from_set(&g.inducing),
                                    })
                                    .collect()
                            })
                            .collect(),
                    })
                    .collect(),
            }),
            Trained::Svgp(parts) => ModelDto::Svgp {
                outputs: parts
                    .iter()
                    .map(|p| SvgpDto {
                        variance: p.kernel.variance,
                        lengthscales: p.kernel.lengthscales.clone(),
                        noise_variance: p.noise_variance,
                        inducing: InducingDto::from_set(&p.inducing),
                    })
                    .collect(),
            },
        }
    }

    fn to_trained(&self) -> Result<Trained> {
        match self {
            ModelDto::Convolved(c) => {
                let basis_mode = match c.basis_mode.as_str() {
                    "resample" => BasisMode::Resample,
                    "fixed" => BasisMode::Fixed,
                    other => return Err(bad_file(format!("unknown basis mode {other:?}"))),
                };
                let layers = c
                    .layers
                    .iter()
                    .map(|l| {
                        let inputs = l
                            .inputs
                            .iter()
                            .map(|u| {
                                Ok(InputProcess {
                                    kernel: EqArdKernel::new(u.variance, u.lengthscales.clone())?,
                                    window: GaussianWindow::new(u.window_amplitude, u.window_precisions.clone())?,
                                    inducing: u.inducing.to_set()?,
                                })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let kernels = l
                            .kernels
                            .iter()
                            .map(|set| {
                                set.iter()
                                    .map(|g| {
                                        Ok(KernelProcess {
                                            kernel: DseKernel::new(g.variance, g.lengthscale, g.decay)?,
                                            inducing: g.inducing.to_set()?,
                                        })
                                    })
                                    .collect::<Result<Vec<_>>>()
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Ok(LayerState {
                            variant: l.variant,
                            input_dim: l.input_dim,
                            output_dim: l.output_dim,
                            basis_size: l.basis_size,
                            inputs,
                            kernels,
                            mixing: l.mixing.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let model = Model {
                    layers,
                    noise_variance: c.noise_variance,
                    seed: c.seed,
                    basis_mode,
                };
                model.validate().map_err(bad_file)?;
                Ok(Trained::Convolved(model))
            }
            ModelDto::Svgp { outputs } => Ok(Trained::Svgp(
                outputs
                    .iter()
                    .map(|o| {
                        Ok(SvgpPart {
                            kernel: EqArdKernel::new(o.variance, o.lengthscales.clone())?,
                            inducing: o.inducing.to_set()?,
                            noise_variance: o.noise_variance,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            )),
        }
    }
}

impl Trained {
    pub fn input_dim(&self) -> usize {
        match self {
            Trained::Convolved(m) => m.input_dim(),
            Trained::Svgp(parts) => parts.first().map_or(0, |p| p.inducing.inputs.ncols()),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Trained::Convolved(m) => m.output_dim(),
            Trained::Svgp(parts) => parts.len(),
        }
    }
}

impl ModelFile {
    pub fn to_json(&self) -> String {
        let dto = FileDto {
            format: FORMAT.into(),
            version: VERSION,
            iteration: self.iteration,
            seed: self.seed,
            input_names: self.input_names.clone(),
            output_names: self.output_names.clone(),
            standardization: self.standardization.clone(),
            model: ModelDto::from_trained(&self.model),
        };
        serde_json::to_string_pretty(&dto).expect("model file fields are plain data")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dto: FileDto = serde_json::from_str(text).map_err(bad_file)?;
        if dto.format != FORMAT {
            return Err(bad_file(format!("format is {:?}, expected {FORMAT:?}", dto.format)));
        }
        if dto.version != VERSION {
            return Err(bad_file(format!(
                "version {} is not supported (expected {VERSION})",
                dto.version
            )));
        }
        let model = dto.model.to_trained()?;
        let (p, d) = (dto.standardization.x.mean.len(), dto.standardization.y.mean.len());
        if dto.input_names.len() != p
            || dto.output_names.len() != d
            || model.input_dim() != p
            || model.output_dim() != d
        {
            return Err(bad_file("column names, statistics and model disagree on dimensions"));
        }
        Ok(Self {
            iteration: dto.iteration,
            seed: dto.seed,
            input_names: dto.input_names,
            output_names: dto.output_names,
            standardization: dto.standardization,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Write-temp-then-rename within the destination directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn trajectory_csv(records: &[TrainRecord]) -> String {
    let mut s = String::from("iteration,elbo,wall_seconds\n");
    for r in records {
        writeln!(s, "{},{},{}", r.iteration, r.elbo, r.wall_seconds).expect("writing to a string");
    }
    s
}

pub fn summary_csv(metrics: &[OutputMetrics]) -> String {
    let mut s = String::from("output,rmse,mnll\n");
    for m in metrics {
        writeln!(s, "{},{},{}", m.output, m.rmse, m.mnll).expect("writing to a string");
    }
    s
}

pub fn dataset_csv(ds: &Dataset) -> String {
    let mut s = ds
        .input_names
        .iter()
        .chain(&ds.output_names)
        .cloned()
        .collect::<Vec<_>>()
        .join(",");
    s.push('\n');
    for i in 0..ds.len() {
        let row: Vec<String> =
            ds.x.row(i)
                .iter()
                .chain(ds.y.row(i).iter())
                .map(|v| v.to_string())
                .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}
