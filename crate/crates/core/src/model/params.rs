//! Flat parameter vector of a model and its named groups.
//!
//! Order: log noise variance, then per layer: every input process
//! (log lengthscales, log window precisions, mean, packed lower factor), every
//! kernel process (log variance, log lengthscale, log decay, mean, packed
//! lower factor) and finally the mixing weights.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::{InputProcess, KernelProcess, LayerState, Model};
use crate::error::{structural, Result};
use crate::kernels::{DseKernel, EqArdKernel};
use crate::pathwise::{GaussianWindow, InducingSet};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub range: Range<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamLayout {
    pub groups: Vec<ParamGroup>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.groups.last().map_or(0, |g| g.range.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Name of the group holding parameter `i`.
    pub fn group_of(&self, i: usize) -> Option<&str> {
        self.groups
            .iter()
            .find(|g| g.range.contains(&i))
            .map(|g| g.name.as_str())
    }

    fn push(&mut self, name: String, len: usize) {
        let start = self.len();
        self.groups.push(ParamGroup {
            name,
            range: start..start + len,
        });
    }
}

#[derive(Clone, Debug)]
pub struct InputVars<T> {
    pub log_lengthscale: Vec<T>,
    pub log_precision: Vec<T>,
    pub mean: Vec<T>,
    /// Row-major packed lower triangle.
    pub tril: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct KernelVars<T> {
    pub log_variance: T,
    pub log_lengthscale: T,
    pub log_decay: T,
    pub mean: Vec<T>,
    pub tril: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct LayerVars<T> {
    pub inputs: Vec<InputVars<T>>,
    pub kernels: Vec<Vec<KernelVars<T>>>,
    pub mixing: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct ModelVars<T> {
    pub log_noise: T,
    pub layers: Vec<LayerVars<T>>,
}

fn packed_len(m: usize) -> usize {
    m * (m + 1) / 2
}

fn pack_lower(l: &DMatrix<f64>, out: &mut Vec<f64>) {
    for i in 0..l.nrows() {
        for j in 0..=i {
            out.push(l[(i, j)]);
        }
    }
}

/// Lower factor from packed entries, with column signs flipped so the diagonal is nonnegative.
fn unpack_lower(m: usize, packed: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(m, m);
    let mut k = 0;
    for i in 0..m {
        for j in 0..=i {
            l[(i, j)] = packed[k];
            k += 1;
        }
    }
    for j in 0..m {
        if l[(j, j)] < 0.0 {
            for i in j..m {
                l[(i, j)] = -l[(i, j)];
            }
        }
    }
    l
}

struct Cursor<'a, T> {
    data: &'a [T],
    pos: usize,
}

impl<'a, T: Copy> Cursor<'a, T> {
    fn take(&mut self, n: usize) -> Vec<T> {
        let v = self.data[self.pos..self.pos + n].to_vec();
        self.pos += n;
        v
    }

    fn one(&mut self) -> T {
        self.pos += 1;
        self.data[self.pos - 1]
    }
}

impl Model {
    pub fn layout(&self) -> ParamLayout {
        let mut lay = ParamLayout::default();
        lay.push("noise.log_variance".into(), 1);
        for (li, layer) in self.layers.iter().enumerate() {
            let p = layer.input_dim;
            for (q, u) in layer.inputs.iter().enumerate() {
                let m = u.inducing.len();
                let base = format!("layer{li}.u{q}");
                lay.push(format!("{base}.log_lengthscale"), p);
                lay.push(format!("{base}.log_window_precision"), p);
                lay.push(format!("{base}.mean"), m);
                lay.push(format!("{base}.scale_tril"), packed_len(m));
            }
            for (g, set) in layer.kernels.iter().enumerate() {
                for (d, k) in set.iter().enumerate() {
                    let m = k.inducing.len();
                    let base = format!("layer{li}.g{g}.dim{d}");
                    lay.push(format!("{base}.log_variance"), 1);
                    lay.push(format!("{base}.log_lengthscale"), 1);
                    lay.push(format!("{base}.log_decay"), 1);
                    lay.push(format!("{base}.mean"), m);
                    lay.push(format!("{base}.scale_tril"), packed_len(m));
                }
            }
            lay.push(format!("layer{li}.mixing"), layer.mixing.len());
        }
        lay
    }

    /// Unconstrained parameter vector in [`Model::layout`] order.
    pub fn params(&self) -> Vec<f64> {
        let mut v = vec![self.noise_variance.ln()];
        for layer in &self.layers {
            for u in &layer.inputs {
                v.extend(u.kernel.lengthscales.iter().map(|l| l.ln()));
                v.extend(u.window.precisions.iter().map(|a| a.ln()));
                v.extend(u.inducing.mean.iter());
                pack_lower(&u.inducing.scale_tril, &mut v);
            }
            for set in &layer.kernels {
                for k in set {
                    v.push(k.kernel.variance.ln());
                    v.push(k.kernel.lengthscale.ln());
                    v.push(k.kernel.decay.ln());
                    v.extend(k.inducing.mean.iter());
                    pack_lower(&k.inducing.scale_tril, &mut v);
                }
            }
            v.extend(&layer.mixing);
        }
        v
    }

    /// A copy of the model carrying the given parameter vector.
    pub fn with_params(&self, theta: &[f64]) -> Result<Model> {
        let n = self.layout().len();
        if theta.len() != n {
            return Err(structural(format!("model has {n} parameters, got {}", theta.len())));
        }
        let vars = ModelVars::unpack(self, theta)?;
        let mut out = self.clone();
        out.noise_variance = vars.log_noise.exp();
        for (layer, lv) in out.layers.iter_mut().zip(vars.layers) {
            for (u, iv) in layer.inputs.iter_mut().zip(lv.inputs) {
                let m = u.inducing.len();
                *u = InputProcess {
                    kernel: EqArdKernel::new(u.kernel.variance, iv.log_lengthscale.iter().map(|v| v.exp()).collect())?,
                    window: GaussianWindow::normalized(iv.log_precision.iter().map(|v| v.exp()).collect())?,
                    inducing: InducingSet::new(
                        u.inducing.inputs.clone(),
                        DVector::from_vec(iv.mean),
                        unpack_lower(m, &iv.tril),
                    )?,
                };
            }
            for (set, sv) in layer.kernels.iter_mut().zip(lv.kernels) {
                for (k, kv) in set.iter_mut().zip(sv) {
                    let m = k.inducing.len();
                    *k = KernelProcess {
                        kernel: DseKernel::new(kv.log_variance.exp(), kv.log_lengthscale.exp(), kv.log_decay.exp())?,
                        inducing: InducingSet::new(
                            k.inducing.inputs.clone(),
                            DVector::from_vec(kv.mean),
                            unpack_lower(m, &kv.tril),
                        )?,
                    };
                }
            }
            layer.mixing = lv.mixing;
        }
        Ok(out)
    }
}

impl<T: Copy> ModelVars<T> {
    /// Splits a flat vector (values or tape nodes) along the model's layout.
    pub fn unpack(model: &Model, flat: &[T]) -> Result<Self> {
        let n = model.layout().len();
        if flat.len() != n {
            return Err(structural(format!("model has {n} parameters, got {}", flat.len())));
        }
        let mut c = Cursor { data: flat, pos: 0 };
        let log_noise = c.one();
        let layers = model.layers.iter().map(|layer| unpack_layer(layer, &mut c)).collect();
        Ok(Self { log_noise, layers })
    }
}

fn unpack_layer<T: Copy>(layer: &LayerState, c: &mut Cursor<'_, T>) -> LayerVars<T> {
    let p = layer.input_dim;
    let inputs = layer
        .inputs
        .iter()
        .map(|u| {
            let m = u.inducing.len();
            InputVars {
                log_lengthscale: c.take(p),
                log_precision: c.take(p),
                mean: c.take(m),
                tril: c.take(packed_len(m)),
            }
        })
        .collect();
    let kernels = layer
        .kernels
        .iter()
        .map(|set| {
            set.iter()
                .map(|k| {
                    let m = k.inducing.len();
                    KernelVars {
                        log_variance: c.one(),
                        log_lengthscale: c.one(),
                        log_decay: c.one(),
                        mean: c.take(m),
                        tril: c.take(packed_len(m)),
                    }
                })
                .collect()
        })
        .collect();
    let mixing = c.take(layer.mixing.len());
    LayerVars {
        inputs,
        kernels,
        mixing,
    }
}
