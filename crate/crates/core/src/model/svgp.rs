//! Sparse variational GP with an EQ kernel and Gaussian likelihood.
//!
//! Parameter order: log variance, log lengthscales (P), log noise variance,
//! variational mean (M), packed lower factor.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;

use super::objective::{gaussian_loglik, kl_inducing_tape};
use crate::convolution::row_major;
use crate::error::{numeric, parameter, structural, Result};
use crate::grad::{
    adam_step, cholesky, matmul, solve_lower, solve_lower_transpose, sum_squares, AdamState, Tape, Var, VarMatrix,
};
use crate::kernels::{factor_with_jitter, gram, EqArdKernel, DEFAULT_JITTER};
use crate::pathwise::InducingSet;
use crate::rng::{rng_from, stream};

#[derive(Clone, Debug, PartialEq)]
pub struct SvgpFit {
    pub kernel: EqArdKernel,
    pub inducing: InducingSet,
    pub noise_variance: f64,
    /// Minibatch bound at every iteration.
    pub trace: Vec<f64>,
}

/// EQ cross-covariance, differentiable in its log parameters.
fn eq_gram<'t>(
    tape: &'t Tape,
    log_var: Var<'t>,
    log_ls: &[Var<'t>],
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    jitter: f64,
) -> Result<VarMatrix<'t>> {
    let (n, m, p) = (a.nrows(), b.nrows(), a.ncols());
    let var = log_var.value().exp();
    let ls: Vec<f64> = tape.values(log_ls).iter().map(|l| l.exp()).collect();
    let kern = EqArdKernel::new(var, ls.clone())?;
    let k = gram(&kern, a, b)?;
    let mut out = row_major(&k);
    if jitter > 0.0 {
        for i in 0..n.min(m) {
            out[i * m + i] += jitter;
        }
    }
    let (ar, br) = (row_major(a), row_major(b));
    let mut inputs = vec![log_var];
    inputs.extend_from_slice(log_ls);
    let vars = tape.custom("eq_gram", &inputs, out, move |adj, inp| {
        for i in 0..n {
            for j in 0..m {
                let g = adj[i * m + j] * k[(i, j)];
                inp[0] += g;
                for d in 0..p {
                    let t = (ar[i * p + d] - br[j * p + d]) / ls[d];
                    inp[1 + d] += g * t * t;
                }
            }
        }
    });
    VarMatrix::from_vars(tape, n, m, vars)
}

/// Minibatch bound (N/|b|)·Σ_b [log N(y; m_i, σ²) − v_i/(2σ²)] − KL(q(u) ‖ p(u)).
pub fn svgp_elbo_tape<'t>(
    tape: &'t Tape,
    params: &[Var<'t>],
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &[f64],
    n_total: usize,
) -> Result<Var<'t>> {
    let (m, p, n) = (z.nrows(), z.ncols(), x.nrows());
    if params.len() != 2 + p + m + m * (m + 1) / 2 {
        return Err(structural(format!(
            "SVGP with {m} inducing points in {p} dimensions has a different parameter count"
        )));
    }
    if x.ncols() != p || y.len() != n || n == 0 || n_total < n {
        return Err(structural("SVGP batch does not match the inducing inputs"));
    }
    let (log_var, log_ls, log_noise) = (params[0], &params[1..1 + p], params[1 + p]);
    let mean = &params[2 + p..2 + p + m];
    let tril = &params[2 + p + m..];

    let kzz_vals = gram(
        &EqArdKernel::new(
            log_var.value().exp(),
            tape.values(log_ls).iter().map(|l| l.exp()).collect(),
        )?,
        z,
        z,
    )?;
    let jitter = factor_with_jitter(kzz_vals, DEFAULT_JITTER)?.jitter;
    let lk = cholesky(&eq_gram(tape, log_var, log_ls, z, z, jitter)?)?;
    let kzx = eq_gram(tape, log_var, log_ls, z, x, 0.0)?;
    let w = solve_lower(&lk, &kzx)?;
    let b = solve_lower_transpose(&lk, &w)?;
    let l = VarMatrix::lower_from_packed(tape, m, tril)?;
    let lb = matmul(&l.transpose(), &b)?;
    let mu = VarMatrix::column(tape, mean.to_vec());
    let f = matmul(&b.transpose(), &mu)?.into_vec();

    // Σ_i [k_ii − ‖w_i‖² + ‖Lᵀb_i‖²], with k_ii the kernel variance.
    let col = |mat: &VarMatrix<'t>, i: usize| -> Vec<Var<'t>> { (0..m).map(|r| mat.get(r, i)).collect() };
    let var_terms: Vec<Var<'t>> = (0..n)
        .map(|i| sum_squares(tape, &col(&lb, i)) - sum_squares(tape, &col(&w, i)))
        .collect();
    let var_sum = tape.sum(&var_terms) + log_var.exp() * n as f64;

    let ll = gaussian_loglik(tape, &f, log_noise, y) - var_sum * (-log_noise).exp() * 0.5;
    let kl = kl_inducing_tape(tape, &lk, mean, tril)?;
    let bound = ll * (n_total as f64 / n as f64) - kl;
    tape.check_finite(&[bound], "SVGP bound")?;
    Ok(bound)
}

fn pack(kernel: &EqArdKernel, ind: &InducingSet, noise: f64) -> Vec<f64> {
    let mut v = vec![kernel.variance.ln()];
    v.extend(kernel.lengthscales.iter().map(|l| l.ln()));
    v.push(noise.ln());
    v.extend(ind.mean.iter());
    for i in 0..ind.len() {
        for j in 0..=i {
            v.push(ind.scale_tril[(i, j)]);
        }
    }
    v
}

pub fn svgp_baseline_elbo(
    kernel: &EqArdKernel,
    ind: &InducingSet,
    x: &DMatrix<f64>,
    y: &[f64],
    n_total: usize,
    noise: f64,
) -> Result<f64> {
    if !(noise > 0.0) {
        return Err(parameter(format!("noise variance must be positive, got {noise}")));
    }
    if kernel.lengthscales.len() != ind.inputs.ncols() {
        return Err(structural("kernel and inducing inputs disagree on dimension"));
    }
    let tape = Tape::new();
    let vars = tape.constants(&pack(kernel, ind, noise));
    Ok(svgp_elbo_tape(&tape, &vars, &ind.inputs, x, y, n_total)?.value())
}

/// Predictive mean and variance of y at the rows of `x`; the variance includes the noise.
pub fn svgp_predict(
    kernel: &EqArdKernel,
    ind: &InducingSet,
    noise: f64,
    x: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(noise > 0.0) {
        return Err(parameter(format!("noise variance must be positive, got {noise}")));
    }
    let z = &ind.inputs;
    let lk = factor_with_jitter(gram(kernel, z, z)?, DEFAULT_JITTER)?.l;
    let kzx = gram(kernel, z, x)?;
    let a = lk
        .solve_lower_triangular(&kzx)
        .ok_or_else(|| numeric("singular prior factor"))?;
    // Columns of w are K_zz⁻¹ k_z(x).
    let w = lk
        .transpose()
        .solve_upper_triangular(&a)
        .ok_or_else(|| numeric("singular prior factor"))?;
    let lw = ind.scale_tril.transpose() * &w;
    let mean = (0..x.nrows()).map(|i| w.column(i).dot(&ind.mean)).collect();
    let var = (0..x.nrows())
        .map(|i| (kernel.variance - a.column(i).norm_squared()).max(0.0) + lw.column(i).norm_squared() + noise)
        .collect();
    Ok((mean, var))
}

/// Adam on the negative bound from q(u) = p(u), with hyperparameters trained jointly.
pub fn train_svgp(
    kernel: &EqArdKernel,
    z: &DMatrix<f64>,
    noise: f64,
    x: &DMatrix<f64>,
    y: &[f64],
    iterations: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<SvgpFit> {
    let (m, p, n) = (z.nrows(), z.ncols(), x.nrows());
    if batch_size == 0 || n == 0 {
        return Err(parameter("SVGP training needs data and a positive batch size"));
    }
    let l = factor_with_jitter(gram(kernel, z, z)?, DEFAULT_JITTER)?.l;
    let ind = InducingSet::new(z.clone(), DVector::zeros(m), l)?;
    let mut theta = pack(kernel, &ind, noise);
    let mut adam = AdamState::new(theta.len(), learning_rate);
    let mut rng = rng_from(seed, &[stream::BATCH]);
    let batch = batch_size.min(n);
    let mut trace = Vec::with_capacity(iterations);
    for it in 1..=iterations {
        let (xb, yb) = if batch == n {
            (x.clone(), y.to_vec())
        } else {
            let idx = sample_indices(&mut rng, n, batch).into_vec();
            (
                DMatrix::from_fn(batch, p, |i, j| x[(idx[i], j)]),
                idx.iter().map(|&i| y[i]).collect(),
            )
        };
        let tape = Tape::new();
        let vars = tape.params(&theta);
        let bound =
            svgp_elbo_tape(&tape, &vars, z, &xb, &yb, n).map_err(|e| numeric(format!("iteration {it}: {e}")))?;
        let grad: Vec<f64> = tape.backward(bound)?.into_vec().iter().map(|g| -g).collect();
        adam_step(&mut theta, &grad, &mut adam)?;
        trace.push(bound.value());
    }
    let mut tril = DMatrix::zeros(m, m);
    let mut k = 2 + p + m;
    for i in 0..m {
        for j in 0..=i {
            tril[(i, j)] = theta[k];
            k += 1;
        }
    }
    // Flip columns with negative diagonal; LLᵀ is unchanged.
    for j in 0..m {
        if tril[(j, j)] < 0.0 {
            for i in j..m {
                tril[(i, j)] = -tril[(i, j)];
            }
        }
    }
    Ok(SvgpFit {
        kernel: EqArdKernel::new(theta[0].exp(), theta[1..1 + p].iter().map(|l| l.exp()).collect())?,
        inducing: InducingSet::new(z.clone(), DVector::from_column_slice(&theta[2 + p..2 + p + m]), tril)?,
        noise_variance: theta[1 + p].exp(),
        trace,
    })
}
