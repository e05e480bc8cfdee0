use std::f64::consts::PI;

use nalgebra::DMatrix;

/// Test-set scores for one output on the original target scale.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputMetrics {
    pub output: usize,
    pub rmse: f64,
    pub mnll: f64,
}

pub fn rmse(y: &[f64], mean: &[f64]) -> f64 {
    let sq: f64 = y.iter().zip(mean).map(|(y, m)| (y - m) * (y - m)).sum();
    (sq / y.len() as f64).sqrt()
}

/// Mean of −log N(y; m, v).
pub fn mnll(y: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let total: f64 = y
        .iter()
        .zip(mean)
        .zip(var)
        .map(|((y, m), v)| 0.5 * (2.0 * PI * v).ln() + (y - m) * (y - m) / (2.0 * v))
        .sum();
    total / y.len() as f64
}

/// Column-wise scores; all three matrices are N×D.
pub fn output_metrics(y: &DMatrix<f64>, mean: &DMatrix<f64>, var: &DMatrix<f64>) -> Vec<OutputMetrics> {
    (0..y.ncols())
        .map(|d| {
            let (yc, mc, vc) = (y.column(d), mean.column(d), var.column(d));
            OutputMetrics {
                output: d,
                rmse: rmse(yc.as_slice(), mc.as_slice()),
                mnll: mnll(yc.as_slice(), mc.as_slice(), vc.as_slice()),
            }
        })
        .collect()
}
