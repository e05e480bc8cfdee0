//! Model initialisation from training inputs.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{BasisMode, InputProcess, KernelProcess, LayerState, Model};
use crate::convolution::Variant;
use crate::data::kmeans;
use crate::error::{parameter, Result};
use crate::kernels::{cov_matrix, factor_with_jitter, DseKernel, EqArdKernel, DEFAULT_JITTER};
use crate::pathwise::{interdomain_cov_matrix, GaussianWindow, InducingSet};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerConfig {
    pub output_dim: usize,
    /// Q, the number of input processes.
    pub latent_count: usize,
    pub input_inducing: usize,
    pub kernel_inducing: usize,
    pub basis_size: usize,
    pub variant: Variant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitConfig {
    pub input_lengthscale: f64,
    pub kernel_lengthscale: f64,
    /// Lengthscale of the DSE decay window; also sets the span of the kernel inducing grid.
    pub kernel_window_lengthscale: f64,
    pub noise_variance: f64,
    /// Scale of the initial variational factor relative to the prior factor.
    pub factor_scale: f64,
    pub kmeans_iters: usize,
    pub basis_mode: BasisMode,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            input_lengthscale: 0.5,
            kernel_lengthscale: 0.5,
            kernel_window_lengthscale: 1.0,
            noise_variance: 0.01,
            factor_scale: 0.1,
            kmeans_iters: 100,
            basis_mode: BasisMode::Resample,
        }
    }
}

/// Median distance from each centre to its nearest neighbour; 1 when undefined.
fn median_nn_distance(z: &DMatrix<f64>) -> f64 {
    let m = z.nrows();
    let mut nn: Vec<f64> = (0..m)
        .map(|i| {
            (0..m)
                .filter(|&j| j != i)
                .map(|j| (z.row(i) - z.row(j)).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .filter(|d| d.is_finite())
        .collect();
    if nn.is_empty() {
        return 1.0;
    }
    nn.sort_by(|a, b| a.total_cmp(b));
    let med = nn[nn.len() / 2];
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn input_process(z: DMatrix<f64>, cfg: &InitConfig) -> Result<InputProcess> {
    let p = z.ncols();
    let kernel = EqArdKernel::new(1.0, vec![cfg.input_lengthscale; p])?;
    let alpha = GaussianWindow::precision_for_lengthscale(median_nn_distance(&z));
    let window = GaussianWindow::normalized(vec![alpha; p])?;
    let k = interdomain_cov_matrix(&kernel, &window, &z, &z)?;
    let l = factor_with_jitter(k, DEFAULT_JITTER)?.l * cfg.factor_scale;
    let inducing = InducingSet::new(z, DVector::zeros(l.nrows()), l)?;
    Ok(InputProcess {
        kernel,
        window,
        inducing,
    })
}

fn kernel_process(m: usize, cfg: &InitConfig) -> Result<KernelProcess> {
    let lw = cfg.kernel_window_lengthscale;
    let decay = GaussianWindow::precision_for_lengthscale(lw);
    let a_g = 0.5 / cfg.kernel_lengthscale.powi(2);
    let a_u = 0.5 / cfg.input_lengthscale.powi(2);
    // Variance and mean bump chosen so a unit-variance input convolved with G has output variance near one.
    let variance = (decay * decay + 2.0 * decay * (a_g + a_u)).sqrt() / PI;
    let bump = ((decay * decay + 2.0 * decay * a_u).sqrt() / PI).sqrt();
    let kernel = DseKernel::new(variance, cfg.kernel_lengthscale, decay)?;
    let z = if m == 1 {
        DMatrix::zeros(1, 1)
    } else {
        DMatrix::from_fn(m, 1, |i, _| -2.0 * lw + 4.0 * lw * i as f64 / (m - 1) as f64)
    };
    let l = cov_matrix(&kernel, &z, DEFAULT_JITTER)?.l * cfg.factor_scale;
    let mean = DVector::from_fn(m, |i, _| bump * (-decay * z[(i, 0)].powi(2)).exp());
    Ok(KernelProcess {
        kernel,
        inducing: InducingSet::new(z, mean, l)?,
    })
}

/// Builds a model whose first layer reads `x`.
///
/// Input inducing points are k-means centres of `x`; hidden layers must keep
/// the input width so the same centres can be propagated through them.
pub fn init_model(layers: &[LayerConfig], x: &DMatrix<f64>, cfg: &InitConfig, seed: u64) -> Result<Model> {
    if layers.is_empty() {
        return Err(parameter("model needs at least one layer"));
    }
    let p0 = x.ncols();
    let mut states = Vec::with_capacity(layers.len());
    let mut p = p0;
    for (li, lc) in layers.iter().enumerate() {
        if p != p0 {
            return Err(parameter(format!(
                "layer {li} reads {p} dimensions; hidden layers must keep the input width {p0}"
            )));
        }
        if lc.output_dim == 0 || lc.latent_count == 0 || lc.kernel_inducing == 0 || lc.basis_size == 0 {
            return Err(parameter(format!("layer {li} has a zero size in its configuration")));
        }
        let centres = kmeans(x, lc.input_inducing, seed, cfg.kmeans_iters)?;
        let inputs = (0..lc.latent_count)
            .map(|_| input_process(centres.clone(), cfg))
            .collect::<Result<Vec<_>>>()?;
        let sets = match lc.variant {
            Variant::Full => lc.output_dim,
            Variant::Fast => 1,
        };
        let kernels = (0..sets)
            .map(|_| {
                (0..p)
                    .map(|_| kernel_process(lc.kernel_inducing, cfg))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mix_len = match lc.variant {
            Variant::Full => lc.latent_count,
            Variant::Fast => lc.output_dim * lc.latent_count,
        };
        states.push(LayerState {
            variant: lc.variant,
            input_dim: p,
            output_dim: lc.output_dim,
            basis_size: lc.basis_size,
            inputs,
            kernels,
            mixing: vec![1.0 / (lc.latent_count as f64).sqrt(); mix_len],
        });
        p = lc.output_dim;
    }
    let model = Model {
        layers: states,
        noise_variance: cfg.noise_variance,
        seed,
        basis_mode: cfg.basis_mode,
    };
    model.validate()?;
    Ok(model)
}
