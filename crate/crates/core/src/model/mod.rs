//! Convolved GP layers, their deep composition, the variational objective and
//! a sparse variational GP baseline.
//!
//! Positive hyperparameters are optimised on the log scale. Inducing inputs
//! are fixed after initialisation; everything else in [`Model::params`] is
//! trained.

mod init;
mod objective;
mod params;
mod predict;
mod sample;
mod svgp;
mod train;

use nalgebra::DMatrix;

use crate::convolution::Variant;
use crate::error::{parameter, structural, Result};
use crate::kernels::{DseKernel, EqArdKernel};
use crate::pathwise::{GaussianWindow, InducingSet};

pub use init::{init_model, InitConfig, LayerConfig};
pub use objective::{elbo, elbo_tape, elbo_with_grad, exact_gp_log_evidence, kl_inducing, kl_inducing_tape};
pub use params::{InputVars, KernelVars, LayerVars, ModelVars, ParamGroup, ParamLayout};
pub use predict::{forward_deep, predict, Prediction};
pub use sample::{draw_noise, draw_path, layer_paths_tape, model_priors, LayerNoise, LayerPriors, ProcessNoise};
pub use svgp::{svgp_baseline_elbo, svgp_elbo_tape, svgp_predict, train_svgp, SvgpFit};
pub use train::{train, TrainConfig, TrainRecord};

/// Input process u_q: unit-variance EQ prior, Gaussian smoothing window and
/// inducing variables in the smoothed domain.
#[derive(Clone, Debug, PartialEq)]
pub struct InputProcess {
    pub kernel: EqArdKernel,
    pub window: GaussianWindow,
    pub inducing: InducingSet,
}

/// One-dimensional smoothing-kernel process with a DSE prior.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelProcess {
    pub kernel: DseKernel,
    pub inducing: InducingSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub variant: Variant,
    pub input_dim: usize,
    pub output_dim: usize,
    /// RFF basis size used for every process in the layer.
    pub basis_size: usize,
    pub inputs: Vec<InputProcess>,
    /// Full: one set per output; fast: a single shared set. Each set has one process per input dimension.
    pub kernels: Vec<Vec<KernelProcess>>,
    /// Full: Q weights; fast: D×Q row-major.
    pub mixing: Vec<f64>,
}

/// Whether RFF bases are redrawn for every Monte Carlo sample or fixed per run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisMode {
    Resample,
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub layers: Vec<LayerState>,
    pub noise_variance: f64,
    pub seed: u64,
    pub basis_mode: BasisMode,
}

impl LayerState {
    pub fn latent_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (p, d, q) = (self.input_dim, self.output_dim, self.inputs.len());
        if p == 0 || d == 0 || q == 0 || self.basis_size == 0 {
            return Err(structural(
                "layer dimensions, latent count and basis size must be positive",
            ));
        }
        let (sets, mix) = match self.variant {
            Variant::Full => (d, q),
            Variant::Fast => (1, d * q),
        };
        if self.kernels.len() != sets || self.mixing.len() != mix {
            return Err(structural(format!(
                "layer expects {sets} kernel sets and {mix} mixing weights, found {} and {}",
                self.kernels.len(),
                self.mixing.len()
            )));
        }
        for u in &self.inputs {
            if u.kernel.lengthscales.len() != p || u.window.precisions.len() != p || u.inducing.inputs.ncols() != p {
                return Err(structural(format!("input process is not {p}-dimensional")));
            }
            if u.inducing.is_empty() {
                return Err(structural("input process has no inducing points"));
            }
        }
        for set in &self.kernels {
            if set.len() != p {
                return Err(structural(format!(
                    "kernel set has {} processes for {p} dimensions",
                    set.len()
                )));
            }
            for g in set {
                if g.inducing.inputs.ncols() != 1 || g.inducing.is_empty() {
                    return Err(structural("kernel process inducing inputs must be a non-empty column"));
                }
            }
        }
        Ok(())
    }
}

impl Model {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(structural("model has no layers"));
        }
        if !(self.noise_variance > 0.0) || !self.noise_variance.is_finite() {
            return Err(parameter(format!(
                "noise variance must be positive, got {}",
                self.noise_variance
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate().map_err(|e| structural(format!("layer {i}: {e}")))?;
            if i > 0 && self.layers[i - 1].output_dim != l.input_dim {
                return Err(structural(format!(
                    "layer {} outputs {} dimensions but layer {i} expects {}",
                    i - 1,
                    self.layers[i - 1].output_dim,
                    l.input_dim
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn check_inputs(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(structural(format!(
                "model expects {} input dimensions, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }
}
