//! Prior factors, reparameterisation noise and Matheron path coefficients.
//!
//! Paths are built on a tape so the same code serves training (parameters as
//! leaves) and sampling (parameters as constants). Every random quantity is
//! drawn up front into a [`LayerNoise`], which keeps paths reproducible for a
//! given noise draw regardless of the batch they are evaluated on.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use super::params::{InputVars, KernelVars, LayerVars, ModelVars};
use super::{BasisMode, LayerState, Model};
use crate::convolution::{InputPath, KernelPath, PathCoefficients};
use crate::error::{numeric, Result};
use crate::grad::{cholesky, solve_lower, solve_lower_transpose, Tape, Var, VarMatrix};
use crate::kernels::{factor_with_jitter, DEFAULT_JITTER};
use crate::rng::{rng_from, stream, Rng};

/// Standard-normal and phase draws for one process.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessNoise {
    /// B×P row-major; frequencies are these divided by the lengthscales.
    pub eps_theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub w: Vec<f64>,
    /// Whitened inducing draw, v = μ + L ε.
    pub eps_v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNoise {
    pub inputs: Vec<ProcessNoise>,
    pub kernels: Vec<Vec<ProcessNoise>>,
}

/// Cholesky factors of the jittered prior covariances at the inducing inputs.
#[derive(Clone)]
pub struct LayerPriors<'t> {
    pub inputs: Vec<VarMatrix<'t>>,
    pub kernels: Vec<Vec<VarMatrix<'t>>>,
}

fn basis_noise(b: usize, p: usize, rng: &mut Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let eps = (0..b * p).map(|_| StandardNormal.sample(rng)).collect();
    let beta = (0..b).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let w = (0..b).map(|_| StandardNormal.sample(rng)).collect();
    (eps, beta, w)
}

fn normals(m: usize, rng: &mut Rng) -> Vec<f64> {
    (0..m).map(|_| StandardNormal.sample(rng)).collect()
}

fn layer_noise(layer: &LayerState, basis_rng: &mut Rng, value_rng: &mut Rng) -> LayerNoise {
    let b = layer.basis_size;
    let inputs = layer
        .inputs
        .iter()
        .map(|u| {
            let (eps_theta, beta, w) = basis_noise(b, layer.input_dim, basis_rng);
            ProcessNoise {
                eps_theta,
                beta,
                w,
                eps_v: normals(u.inducing.len(), value_rng),
            }
        })
        .collect();
    let kernels = layer
        .kernels
        .iter()
        .map(|set| {
            set.iter()
                .map(|g| {
                    let (eps_theta, beta, w) = basis_noise(b, 1, basis_rng);
                    ProcessNoise {
                        eps_theta,
                        beta,
                        w,
                        eps_v: normals(g.inducing.len(), value_rng),
                    }
                })
                .collect()
        })
        .collect();
    LayerNoise { inputs, kernels }
}

/// Noise for Monte Carlo sample `sample` of every layer.
///
/// Inducing draws always come from `rng`. Bases come from `rng` too unless the
/// model fixes them, in which case they depend only on the model seed and `sample`.
pub fn draw_noise(model: &Model, sample: usize, rng: &mut Rng) -> Vec<LayerNoise> {
    let mut fixed = match model.basis_mode {
        BasisMode::Fixed => Some(rng_from(model.seed, &[stream::BASIS, sample as u64])),
        BasisMode::Resample => None,
    };
    model
        .layers
        .iter()
        .map(|layer| match fixed.as_mut() {
            Some(basis) => layer_noise(layer, basis, rng),
            None => {
                let mut basis = Rng::seed_from_u64(rng.gen());
                layer_noise(layer, &mut basis, rng)
            }
        })
        .collect()
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    crate::convolution::row_major(m)
}

/// Smallest jitter from [`DEFAULT_JITTER`] upwards under which `k` factors.
fn jitter_for(k: &DMatrix<f64>, what: &str) -> Result<f64> {
    factor_with_jitter(k.clone(), DEFAULT_JITTER)
        .map(|f| f.jitter)
        .map_err(|e| numeric(format!("{what}: {e}")))
}

/// Interdomain prior covariance of a unit-variance EQ process under a
/// unit-mass Gaussian window, as a differentiable block in (A, α) with
/// A = 1/(2ℓ²) per dimension.
fn interdomain_gram<'t>(
    tape: &'t Tape,
    a: &[Var<'t>],
    alpha: &[Var<'t>],
    z: &DMatrix<f64>,
    what: &str,
) -> Result<VarMatrix<'t>> {
    let (m, p) = (z.nrows(), z.ncols());
    let av = tape.values(a);
    let alv = tape.values(alpha);
    let zr = row_major(z);
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let mut v = 1.0;
            for d in 0..p {
                let (aa, al) = (av[d], alv[d]);
                let den = 2.0 * aa + al;
                let t = zr[i * p + d] - zr[j * p + d];
                v *= (al / den).sqrt() * (-aa * al / den * t * t).exp();
            }
            k[(i, j)] = v;
        }
    }
    let jit = jitter_for(&k, what)?;
    let mut out = row_major(&k);
    for i in 0..m {
        out[i * m + i] += jit;
    }
    let mut inputs = a.to_vec();
    inputs.extend_from_slice(alpha);
    let vars = tape.custom("interdomain_gram", &inputs, out, move |adj, inp| {
        for i in 0..m {
            for j in 0..m {
                let g = adj[i * m + j] * k[(i, j)];
                if g == 0.0 {
                    continue;
                }
                for d in 0..p {
                    let (aa, al) = (av[d], alv[d]);
                    let den = 2.0 * aa + al;
                    let t = zr[i * p + d] - zr[j * p + d];
                    let t2 = t * t;
                    inp[d] += g * (-1.0 / den - t2 * al * al / (den * den));
                    inp[p + d] += g * (0.5 / al - 0.5 / den - t2 * 2.0 * aa * aa / (den * den));
                }
            }
        }
    });
    VarMatrix::from_vars(tape, m, m, vars)
}

/// DSE prior covariance at 1-D inputs, differentiable in its log parameters.
fn dse_gram<'t>(
    tape: &'t Tape,
    log_var: Var<'t>,
    log_ls: Var<'t>,
    log_decay: Var<'t>,
    z: &[f64],
    what: &str,
) -> Result<VarMatrix<'t>> {
    let m = z.len();
    let (var, ls, decay) = (log_var.value().exp(), log_ls.value().exp(), log_decay.value().exp());
    let k = DMatrix::from_fn(m, m, |i, j| {
        let d = (z[i] - z[j]) / ls;
        var * (-decay * (z[i] * z[i] + z[j] * z[j]) - 0.5 * d * d).exp()
    });
    let jit = jitter_for(&k, what)?;
    let mut out = row_major(&k);
    for i in 0..m {
        out[i * m + i] += jit;
    }
    let z = z.to_vec();
    let vars = tape.custom("dse_gram", &[log_var, log_ls, log_decay], out, move |adj, inp| {
        for i in 0..m {
            for j in 0..m {
                let g = adj[i * m + j] * k[(i, j)];
                let d = (z[i] - z[j]) / ls;
                inp[0] += g;
                inp[1] += g * d * d;
                inp[2] -= g * decay * (z[i] * z[i] + z[j] * z[j]);
            }
        }
    });
    VarMatrix::from_vars(tape, m, m, vars)
}

fn input_prior<'t>(tape: &'t Tape, v: &InputVars<Var<'t>>, z: &DMatrix<f64>, what: &str) -> Result<VarMatrix<'t>> {
    let a: Vec<Var<'t>> = v.log_lengthscale.iter().map(|l| (*l * -2.0).exp() * 0.5).collect();
    let alpha: Vec<Var<'t>> = v.log_precision.iter().map(|l| l.exp()).collect();
    cholesky(&interdomain_gram(tape, &a, &alpha, z, what)?)
}

/// Prior Cholesky factors of every process in every layer.
pub fn model_priors<'t>(tape: &'t Tape, model: &Model, vars: &ModelVars<Var<'t>>) -> Result<Vec<LayerPriors<'t>>> {
    model
        .layers
        .iter()
        .zip(&vars.layers)
        .enumerate()
        .map(|(li, (layer, lv))| {
            let inputs = layer
                .inputs
                .iter()
                .zip(&lv.inputs)
                .enumerate()
                .map(|(q, (u, v))| {
                    input_prior(
                        tape,
                        v,
                        &u.inducing.inputs,
                        &format!("layer {li} input process {q} prior"),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let kernels = layer
                .kernels
                .iter()
                .zip(&lv.kernels)
                .enumerate()
                .map(|(g, (set, sv))| {
                    set.iter()
                        .zip(sv)
                        .enumerate()
                        .map(|(p, (k, kv))| {
                            let z: Vec<f64> = k.inducing.inputs.iter().copied().collect();
                            let what = format!("layer {li} kernel set {g} dimension {p} prior");
                            cholesky(&dse_gram(
                                tape,
                                kv.log_variance,
                                kv.log_lengthscale,
                                kv.log_decay,
                                &z,
                                &what,
                            )?)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LayerPriors { inputs, kernels })
        })
        .collect()
}

/// v = μ + L ε with L given by its packed rows.
fn reparam<'t>(tape: &'t Tape, mean: &[Var<'t>], tril: &[Var<'t>], eps: &[f64]) -> Vec<Var<'t>> {
    let mut start = 0;
    mean.iter()
        .enumerate()
        .map(|(i, mu)| {
            let row = &tril[start..start + i + 1];
            start += i + 1;
            *mu + tape.dot_const(row, &eps[..=i])
        })
        .collect()
}

/// K⁻¹ r through the prior factor.
fn prior_solve<'t>(tape: &'t Tape, chol: &VarMatrix<'t>, r: Vec<Var<'t>>) -> Result<Vec<Var<'t>>> {
    let y = solve_lower(chol, &VarMatrix::column(tape, r))?;
    Ok(solve_lower_transpose(chol, &y)?.into_vec())
}

/// Σ_k c_k ∏_p e^{−θ_kp²/(4α_p)} cos(θ_k·z_m + β_k), differentiable in θ and α.
fn transformed_prior<'t>(
    tape: &'t Tape,
    theta: &[Var<'t>],
    alpha: &[Var<'t>],
    c: Vec<f64>,
    beta: Vec<f64>,
    z: &DMatrix<f64>,
) -> Vec<Var<'t>> {
    let (m, p, b) = (z.nrows(), z.ncols(), c.len());
    let th = tape.values(theta);
    let al = tape.values(alpha);
    let zr = row_major(z);
    let damp: Vec<f64> = (0..b)
        .map(|k| {
            let e: f64 = (0..p).map(|d| th[k * p + d] * th[k * p + d] / (4.0 * al[d])).sum();
            c[k] * (-e).exp()
        })
        .collect();
    let phase =
        move |mi: usize, k: usize| -> f64 { (0..p).map(|d| th[k * p + d] * zr[mi * p + d]).sum::<f64>() + beta[k] };
    let out: Vec<f64> = (0..m)
        .map(|mi| (0..b).map(|k| damp[k] * phase(mi, k).cos()).sum())
        .collect();
    let mut inputs = theta.to_vec();
    inputs.extend_from_slice(alpha);
    let th = tape.values(theta);
    let al = tape.values(alpha);
    let zr = row_major(z);
    tape.custom("transformed_prior", &inputs, out, move |adj, inp| {
        for mi in 0..m {
            if adj[mi] == 0.0 {
                continue;
            }
            for k in 0..b {
                let ph = phase(mi, k);
                let (cs, sn) = (ph.cos(), ph.sin());
                let g = adj[mi] * damp[k];
                for d in 0..p {
                    let t = th[k * p + d];
                    inp[k * p + d] += g * (-t / (2.0 * al[d]) * cs - sn * zr[mi * p + d]);
                    inp[b * p + d] += g * cs * t * t / (4.0 * al[d] * al[d]);
                }
            }
        }
    })
}

fn input_path<'t>(
    tape: &'t Tape,
    z: &DMatrix<f64>,
    v: &InputVars<Var<'t>>,
    chol: &VarMatrix<'t>,
    noise: &ProcessNoise,
) -> Result<InputPath<Var<'t>>> {
    let p = z.ncols();
    let b = noise.beta.len();
    let scale = (2.0 / b as f64).sqrt();
    let c: Vec<f64> = noise.w.iter().map(|w| w * scale).collect();
    let inv_ls: Vec<Var<'t>> = v.log_lengthscale.iter().map(|l| (-*l).exp()).collect();
    let theta: Vec<Var<'t>> = (0..b * p).map(|i| inv_ls[i % p] * noise.eps_theta[i]).collect();
    let a: Vec<Var<'t>> = v.log_lengthscale.iter().map(|l| (*l * -2.0).exp() * 0.5).collect();
    let alpha: Vec<Var<'t>> = v.log_precision.iter().map(|l| l.exp()).collect();

    let prior_z = transformed_prior(tape, &theta, &alpha, c.clone(), noise.beta.clone(), z);
    let vals = reparam(tape, &v.mean, &v.tril, &noise.eps_v);
    let resid = vals.iter().zip(&prior_z).map(|(v, f)| *v - *f).collect();
    let coef = prior_solve(tape, chol, resid)?;
    // Cross-covariance amplitude of the unit-mass window, ∏ √(α/(A+α)).
    let amp = (0..p)
        .map(|d| (alpha[d] / (a[d] + alpha[d])).sqrt())
        .reduce(|x, y| x * y)
        .expect("at least one dimension");
    let rho = (0..p).map(|d| a[d] * alpha[d] / (a[d] + alpha[d])).collect();
    Ok(InputPath {
        dim: p,
        c: tape.constants(&c),
        theta,
        beta: noise.beta.clone(),
        q: coef.into_iter().map(|x| x * amp).collect(),
        z: tape.constants(&row_major(z)),
        rho,
    })
}

fn kernel_path<'t>(
    tape: &'t Tape,
    z: &[f64],
    v: &KernelVars<Var<'t>>,
    chol: &VarMatrix<'t>,
    noise: &ProcessNoise,
) -> Result<KernelPath<Var<'t>>> {
    let b = noise.beta.len();
    let variance = v.log_variance.exp();
    let decay = v.log_decay.exp();
    let inv_ls = (-v.log_lengthscale).exp();
    let amp = (v.log_variance * 0.5).exp() * (2.0 / b as f64).sqrt();
    let c: Vec<Var<'t>> = noise.w.iter().map(|w| amp * *w).collect();
    let theta: Vec<Var<'t>> = noise.eps_theta.iter().map(|e| inv_ls * *e).collect();
    let env: Vec<Var<'t>> = z.iter().map(|zj| (decay * (-zj * zj)).exp()).collect();

    let prior_z: Vec<Var<'t>> = z
        .iter()
        .zip(&env)
        .map(|(zj, e)| {
            let terms: Vec<Var<'t>> = (0..b).map(|i| c[i] * (theta[i] * *zj + noise.beta[i]).cos()).collect();
            *e * tape.sum(&terms)
        })
        .collect();
    let vals = reparam(tape, &v.mean, &v.tril, &noise.eps_v);
    let resid = vals.iter().zip(&prior_z).map(|(v, f)| *v - *f).collect();
    let coef = prior_solve(tape, chol, resid)?;
    Ok(KernelPath {
        alpha: decay,
        rho: (v.log_lengthscale * -2.0).exp() * 0.5,
        c,
        theta,
        beta: noise.beta.clone(),
        q: coef.iter().zip(&env).map(|(k, e)| *k * variance * *e).collect(),
        z: tape.constants(z),
    })
}

/// Path coefficients of one layer for one noise draw.
pub fn layer_paths_tape<'t>(
    tape: &'t Tape,
    layer: &LayerState,
    vars: &LayerVars<Var<'t>>,
    priors: &LayerPriors<'t>,
    noise: &LayerNoise,
) -> Result<PathCoefficients<Var<'t>>> {
    let inputs = layer
        .inputs
        .iter()
        .zip(&vars.inputs)
        .zip(&priors.inputs)
        .zip(&noise.inputs)
        .map(|(((u, v), chol), nz)| input_path(tape, &u.inducing.inputs, v, chol, nz))
        .collect::<Result<Vec<_>>>()?;
    let kernels = layer
        .kernels
        .iter()
        .zip(&vars.kernels)
        .zip(&priors.kernels)
        .zip(&noise.kernels)
        .map(|(((set, sv), sc), sn)| {
            set.iter()
                .zip(sv)
                .zip(sc)
                .zip(sn)
                .map(|(((g, v), chol), nz)| {
                    let z: Vec<f64> = g.inducing.inputs.iter().copied().collect();
                    kernel_path(tape, &z, v, chol, nz)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathCoefficients {
        variant: layer.variant,
        output_dim: layer.output_dim,
        inputs,
        kernels,
        mixing: vars.mixing.clone(),
    })
}

pub(crate) fn path_values(tape: &Tape, p: &PathCoefficients<Var<'_>>) -> PathCoefficients<f64> {
    PathCoefficients {
        variant: p.variant,
        output_dim: p.output_dim,
        inputs: p
            .inputs
            .iter()
            .map(|u| InputPath {
                dim: u.dim,
                c: tape.values(&u.c),
                theta: tape.values(&u.theta),
                beta: u.beta.clone(),
                q: tape.values(&u.q),
                z: tape.values(&u.z),
                rho: tape.values(&u.rho),
            })
            .collect(),
        kernels: p
            .kernels
            .iter()
            .map(|set| {
                set.iter()
                    .map(|k| KernelPath {
                        alpha: k.alpha.value(),
                        rho: k.rho.value(),
                        c: tape.values(&k.c),
                        theta: tape.values(&k.theta),
                        beta: k.beta.clone(),
                        q: tape.values(&k.q),
                        z: tape.values(&k.z),
                    })
                    .collect()
            })
            .collect(),
        mixing: tape.values(&p.mixing),
    }
}

/// Paths of every layer for one noise draw, evaluated at the current parameters.
pub(crate) fn model_paths(model: &Model, noise: &[LayerNoise]) -> Result<Vec<PathCoefficients<f64>>> {
    let tape = Tape::new();
    let flat = tape.constants(&model.params());
    let vars = ModelVars::unpack(model, &flat)?;
    let priors = model_priors(&tape, model, &vars)?;
    model
        .layers
        .iter()
        .zip(&vars.layers)
        .zip(&priors)
        .zip(noise)
        .map(|(((layer, lv), pr), nz)| Ok(path_values(&tape, &layer_paths_tape(&tape, layer, lv, pr, nz)?)))
        .collect()
}

/// One posterior path sample of a single layer.
pub fn draw_path(layer: &LayerState, rng: &mut Rng) -> Result<PathCoefficients<f64>> {
    layer.validate()?;
    let model = Model {
        layers: vec![layer.clone()],
        noise_variance: 1.0,
        seed: 0,
        basis_mode: BasisMode::Resample,
    };
    let noise = draw_noise(&model, 0, rng);
    Ok(model_paths(&model, &noise)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, InitConfig, LayerConfig};
    use super::*;
    use crate::convolution::{layer_output_sample, Variant};
    use crate::grad::finite_diff_check;
    use crate::kernels::EqArdKernel;
    use crate::kernels::{dse_eval, gram, DseKernel};
    use crate::pathwise::{interdomain_cov_matrix, GaussianWindow, InducingSet};
    use nalgebra::DVector;

    fn small_model(variant: Variant, d: usize, q: usize, seed: u64) -> Model {
        let mut rng = rng_from(seed, &[]);
        let x = DMatrix::from_fn(40, 2, |_, _| rng.gen_range(-1.5..1.5));
        let cfg = [LayerConfig {
            output_dim: d,
            latent_count: q,
            input_inducing: 5,
            kernel_inducing: 4,
            basis_size: 8,
            variant,
        }];
        init_model(&cfg, &x, &InitConfig::default(), seed).unwrap()
    }

    #[test]
    fn interdomain_gram_matches_pathwise_covariance() {
        let tape = Tape::new();
        let z = DMatrix::from_row_slice(3, 2, &[0.1, -0.4, 0.7, 0.2, -0.5, 0.9]);
        let ls = [0.6, 1.3];
        let al = [2.0, 0.7];
        let a: Vec<Var> = ls.iter().map(|l| tape.constant(0.5 / (l * l))).collect();
        let alpha = tape.constants(&al);
        let k = interdomain_gram(&tape, &a, &alpha, &z, "test").unwrap().values();
        let kern = EqArdKernel::new(1.0, ls.to_vec()).unwrap();
        let win = GaussianWindow::normalized(al.to_vec()).unwrap();
        let want = interdomain_cov_matrix(&kern, &win, &z, &z).unwrap() + DMatrix::identity(3, 3) * DEFAULT_JITTER;
        assert!((k - want).amax() < 1e-12);
    }

    #[test]
    fn dse_gram_matches_kernel() {
        let tape = Tape::new();
        let z = [-1.0, -0.2, 0.5, 1.4];
        let lv = tape.constants(&[0.3f64.ln(), 0.8f64.ln(), 0.4f64.ln()]);
        let k = dse_gram(&tape, lv[0], lv[1], lv[2], &z, "test").unwrap().values();
        let kern = DseKernel::new(0.3, 0.8, 0.4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = dse_eval(&kern, z[i], z[j]) + if i == j { DEFAULT_JITTER } else { 0.0 };
                assert!((k[(i, j)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn prior_blocks_have_correct_gradients() {
        let z = DMatrix::from_row_slice(4, 2, &[0.1, -0.4, 0.7, 0.2, -0.5, 0.9, 1.1, -1.0]);
        let c = vec![0.4, -1.1, 0.8];
        let beta = vec![0.3, 2.0, 4.1];
        let x0 = [-0.3, 0.2, 0.5, -0.2, 0.1, 0.3, 0.7, -0.5, 1.2, 0.4, -0.6, 0.9, 0.2];
        let check = finite_diff_check(
            |tape, v| {
                let a: Vec<Var> = v[..2].iter().map(|l| (*l * -2.0).exp() * 0.5).collect();
                let alpha: Vec<Var> = v[2..4].iter().map(|l| l.exp()).collect();
                let k = interdomain_gram(tape, &a, &alpha, &z, "test")?;
                let g = dse_gram(tape, v[4], v[5], v[6], &[-0.5, 0.0, 0.8], "test")?;
                let t = transformed_prior(tape, &v[7..13], &alpha, c.clone(), beta.clone(), &z);
                let w: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
                let wg: Vec<f64> = (0..9).map(|i| (i as f64 * 0.71).cos()).collect();
                let wt = [0.3, -0.8, 1.1, 0.5];
                Ok(tape.dot_const(k.as_slice(), &w) + tape.dot_const(g.as_slice(), &wg) + tape.dot_const(&t, &wt))
            },
            &x0,
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-4, "{check:?}");
    }

    #[test]
    fn fixed_seed_gives_identical_paths() {
        let m = small_model(Variant::Full, 2, 2, 1);
        let a = draw_path(&m.layers[0], &mut rng_from(5, &[])).unwrap();
        let b = draw_path(&m.layers[0], &mut rng_from(5, &[])).unwrap();
        let c = draw_path(&m.layers[0], &mut rng_from(6, &[])).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fixed_basis_mode_shares_bases_across_draws() {
        let mut m = small_model(Variant::Fast, 2, 2, 2);
        m.basis_mode = BasisMode::Fixed;
        let mut rng = rng_from(1, &[]);
        let a = draw_noise(&m, 0, &mut rng);
        let b = draw_noise(&m, 0, &mut rng);
        assert_eq!(a[0].inputs[0].eps_theta, b[0].inputs[0].eps_theta);
        assert_ne!(a[0].inputs[0].eps_v, b[0].inputs[0].eps_v);
        m.basis_mode = BasisMode::Resample;
        let c = draw_noise(&m, 0, &mut rng);
        let d = draw_noise(&m, 0, &mut rng);
        assert_ne!(c[0].inputs[0].eps_theta, d[0].inputs[0].eps_theta);
    }

    #[test]
    fn zero_means_factors_and_weights_give_zero_output() {
        let mut m = small_model(Variant::Full, 2, 2, 3);
        let mut theta = m.params();
        for g in m.layout().groups {
            if g.name.ends_with(".mean") || g.name.ends_with(".scale_tril") {
                theta[g.range].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        m = m.with_params(&theta).unwrap();
        let mut noise = draw_noise(&m, 0, &mut rng_from(4, &[]));
        for layer in &mut noise {
            for pn in layer.inputs.iter_mut().chain(layer.kernels.iter_mut().flatten()) {
                pn.w.iter_mut().for_each(|w| *w = 0.0);
            }
        }
        let paths = model_paths(&m, &noise).unwrap().remove(0);
        for u in &paths.inputs {
            assert!(u.q.iter().all(|q| q.is_finite() && q.abs() < 1e-12));
        }
        let x = DMatrix::from_fn(7, 2, |i, j| 0.3 * i as f64 - 0.2 * j as f64);
        let f = layer_output_sample(&paths, &x).unwrap();
        assert!(f.amax() < 1e-12);
    }

    /// Monte Carlo moments of a kernel path at one point against the Gaussian
    /// conditional of the DSE prior given q(v), with the prior sample exact
    /// only up to the RFF approximation.
    #[test]
    fn kernel_path_marginal_matches_gaussian_algebra() {
        let mut m = small_model(Variant::Fast, 1, 1, 4);
        m.layers[0].basis_size = 1000;
        let kp = &m.layers[0].kernels[0][0];
        let z = kp.inducing.inputs.clone();
        let mg = z.nrows();
        let mean = DVector::from_fn(mg, |i, _| 0.3 + 0.2 * i as f64);
        let l = DMatrix::from_fn(mg, mg, |i, j| {
            if i == j {
                0.3
            } else if i > j {
                0.05
            } else {
                0.0
            }
        });
        m.layers[0].kernels[0][0].inducing = InducingSet::new(z.clone(), mean.clone(), l.clone()).unwrap();
        let kern = m.layers[0].kernels[0][0].kernel.clone();
        let s = DMatrix::from_element(1, 1, 0.35);

        let kzz = gram(&kern, &z, &z).unwrap() + DMatrix::identity(mg, mg) * DEFAULT_JITTER;
        let ksz = gram(&kern, &s, &z).unwrap();
        let kinv = kzz.clone().cholesky().unwrap().inverse();
        let a = &ksz * &kinv;
        let want_mean = (&a * &mean)[(0, 0)];
        let want_var = dse_eval(&kern, 0.35, 0.35) - (&a * ksz.transpose())[(0, 0)]
            + (&a * (&l * l.transpose()) * a.transpose())[(0, 0)];

        let mut rng = rng_from(11, &[]);
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| draw_path(&m.layers[0], &mut rng).unwrap().kernels[0][0].eval(0.35))
            .collect();
        let mu = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mu - want_mean).abs() < 0.05, "{mu} vs {want_mean}");
        assert!((var - want_var).abs() < 0.05, "{var} vs {want_var}");
    }
}
