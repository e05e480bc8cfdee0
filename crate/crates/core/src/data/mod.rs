//! Dataset ingestion, standardisation and splitting.

mod kmeans;
mod toy;

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{parameter, Error, Result};
use crate::rng::{rng_from, stream};

pub use kmeans::{kmeans, kmeans_with_trace, KMeans};
pub use toy::{toy_generate, toy_generate_with, toy_output_covariance, TOY_MIXING, TOY_NOISE_STD};

/// Inputs (N×P) and targets (N×D) with their column names.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
}

/// Which CSV columns are targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OutputColumns {
    Names(Vec<String>),
    /// The last `n` columns.
    Last(usize),
}

/// Per-column affine transform (value − mean) / std.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x: ColumnStats,
    pub y: ColumnStats,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, input_names: Vec<String>, output_names: Vec<String>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Data(format!(
                "{} input rows but {} target rows",
                x.nrows(),
                y.nrows()
            )));
        }
        if input_names.len() != x.ncols() || output_names.len() != y.ncols() {
            return Err(Error::Data("column names disagree with the data width".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        Ok(Self {
            x,
            y,
            input_names,
            output_names,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }

    /// The listed rows, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            input_names: self.input_names.clone(),
            output_names: self.output_names.clone(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, outputs: &OutputColumns) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(e, path))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(e, path))?
        .iter()
        .map(str::to_string)
        .collect();
    let width = header.len();
    let is_output: Vec<bool> = match outputs {
        OutputColumns::Last(n) => {
            if *n == 0 || *n >= width {
                return Err(Error::Config(format!(
                    "cannot take {n} output columns from a file with {width} columns"
                )));
            }
            (0..width).map(|c| c >= width - n).collect()
        }
        OutputColumns::Names(names) => {
            if names.is_empty() {
                return Err(Error::Config("no output columns named".into()));
            }
            let mut flags = vec![false; width];
            for name in names {
                let c = header
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::Config(format!("column {name:?} not found in {}", path.display())))?;
                flags[c] = true;
            }
            if flags.iter().all(|f| *f) {
                return Err(Error::Config("every column is an output; no inputs remain".into()));
            }
            flags
        }
    };

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        // Row numbers are 1-based file lines, the header being line 1.
        let line = r + 2;
        let record = record.map_err(|e| csv_error(e, path))?;
        if record.len() != width {
            return Err(Error::Parse {
                row: line,
                col: record.len().min(width) + 1,
                msg: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: line,
                col: c + 1,
                msg: format!("{field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    col: c + 1,
                    msg: format!("{field:?} is not finite"),
                });
            }
            if is_output[c] {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data(format!("{} has a header but no data rows", path.display())));
    }
    let d = is_output.iter().filter(|f| **f).count();
    let p = width - d;
    let names = |want: bool| -> Vec<String> {
        header
            .iter()
            .zip(&is_output)
            .filter(|(_, o)| **o == want)
            .map(|(h, _)| h.clone())
            .collect()
    };
    Dataset::new(
        DMatrix::from_row_slice(rows, p, &xs),
        DMatrix::from_row_slice(rows, d, &ys),
        names(false),
        names(true),
    )
}

fn csv_error(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

fn column_stats(m: &DMatrix<f64>, names: &[String]) -> Result<ColumnStats> {
    let n = m.nrows() as f64;
    if m.nrows() < 2 {
        return Err(Error::Data("standardisation needs at least two rows".into()));
    }
    let mut mean = Vec::with_capacity(m.ncols());
    let mut std = Vec::with_capacity(m.ncols());
    for (c, col) in m.column_iter().enumerate() {
        let mu = col.sum() / n;
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mu.abs().max(1.0)) {
            return Err(Error::Data(format!("column {:?} is constant", names[c])));
        }
        mean.push(mu);
        std.push(sd);
    }
    Ok(ColumnStats { mean, std })
}

impl ColumnStats {
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] - self.mean[j]) / self.std[j])
    }

    pub fn invert(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * self.std[j] + self.mean[j])
    }
}

/// Zero-mean, unit-std columns (population std), plus the statistics used.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, Standardization)> {
    let stats = Standardization {
        x: column_stats(&ds.x, &ds.input_names)?,
        y: column_stats(&ds.y, &ds.output_names)?,
    };
    let out = Dataset {
        x: stats.x.apply(&ds.x),
        y: stats.y.apply(&ds.y),
        input_names: ds.input_names.clone(),
        output_names: ds.output_names.clone(),
    };
    Ok((out, stats))
}

/// Maps standardised predictive means and variances back to the target scale.
pub fn destandardize_predictions(
    stats: &Standardization,
    mean: &DMatrix<f64>,
    var: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = stats.y.invert(mean);
    let v = DMatrix::from_fn(var.nrows(), var.ncols(), |i, j| {
        var[(i, j)] * stats.y.std[j] * stats.y.std[j]
    });
    (m, v)
}

/// Shuffled split; the train side gets round(N·fraction) rows.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(parameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(parameter(format!(
            "fraction {train_fraction} of {n} rows leaves one side of the split empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed, &[stream::SPLIT]));
    Ok((ds.select(&idx[..n_train]), ds.select(&idx[n_train..])))
}
