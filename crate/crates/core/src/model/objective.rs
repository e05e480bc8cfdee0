//! KL terms, the Gaussian likelihood and the doubly stochastic lower bound.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::params::ModelVars;
use super::sample::{draw_noise, layer_paths_tape, model_priors, LayerNoise};
use super::Model;
use crate::convolution::{layer_output_tape, row_major};
use crate::error::{numeric, parameter, structural, Result};
use crate::grad::{log_diag_sum, solve_lower, sum_squares, Tape, Var, VarMatrix};
use crate::kernels::{gram, EqArdKernel};
use crate::pathwise::InducingSet;
use crate::rng::Rng;

/// KL(N(μ, LLᵀ) ‖ N(0, K)).
pub fn kl_inducing(ind: &InducingSet, prior_k: &DMatrix<f64>) -> Result<f64> {
    let m = ind.len();
    if prior_k.nrows() != m || prior_k.ncols() != m {
        return Err(structural(format!("prior covariance must be {m}x{m}")));
    }
    let lk = prior_k
        .clone()
        .cholesky()
        .ok_or_else(|| numeric("prior covariance is not positive definite"))?
        .l();
    let l = &ind.scale_tril;
    if (0..m).any(|i| l[(i, i)] == 0.0) {
        return Err(numeric("variational covariance factor is singular"));
    }
    let a = lk
        .solve_lower_triangular(l)
        .ok_or_else(|| numeric("singular prior factor"))?;
    let b = lk
        .solve_lower_triangular(&ind.mean)
        .ok_or_else(|| numeric("singular prior factor"))?;
    let logdet_k: f64 = (0..m).map(|i| lk[(i, i)].ln()).sum();
    let logdet_s: f64 = (0..m).map(|i| l[(i, i)].abs().ln()).sum();
    Ok(0.5 * (a.norm_squared() + b.norm_squared() - m as f64) + logdet_k - logdet_s)
}

/// Differentiable KL against a prior given by its Cholesky factor; `tril` is
/// the packed row-major variational factor.
pub fn kl_inducing_tape<'t>(
    tape: &'t Tape,
    prior_chol: &VarMatrix<'t>,
    mean: &[Var<'t>],
    tril: &[Var<'t>],
) -> Result<Var<'t>> {
    let m = mean.len();
    let l = VarMatrix::lower_from_packed(tape, m, tril)?;
    let a = solve_lower(prior_chol, &l)?;
    let b = solve_lower(prior_chol, &VarMatrix::column(tape, mean.to_vec()))?;
    let quad = sum_squares(tape, a.as_slice()) + sum_squares(tape, b.as_slice());
    Ok((quad - m as f64) * 0.5 + log_diag_sum(prior_chol)? - log_diag_sum(&l)?)
}

/// Σ log N(y; f, σ²) over all entries, as one block in (f, log σ²).
pub(crate) fn gaussian_loglik<'t>(tape: &'t Tape, f: &[Var<'t>], log_noise: Var<'t>, y: &[f64]) -> Var<'t> {
    let fv = tape.values(f);
    let s2 = log_noise.value().exp();
    let resid: Vec<f64> = y.iter().zip(&fv).map(|(y, f)| y - f).collect();
    let sq: f64 = resid.iter().map(|r| r * r).sum();
    let n = y.len() as f64;
    let ll = -0.5 * n * (2.0 * PI * s2).ln() - 0.5 * sq / s2;
    let mut inputs = f.to_vec();
    inputs.push(log_noise);
    tape.custom("gaussian_loglik", &inputs, vec![ll], move |adj, inp| {
        let k = resid.len();
        for (slot, r) in inp.iter_mut().zip(&resid) {
            *slot += adj[0] * r / s2;
        }
        inp[k] += adj[0] * (-0.5 * n + 0.5 * sq / s2);
    })[0]
}

fn check_batch(model: &Model, x: &DMatrix<f64>, y: &DMatrix<f64>, n_total: usize) -> Result<()> {
    model.check_inputs(x)?;
    if y.nrows() != x.nrows() || y.ncols() != model.output_dim() {
        return Err(structural(format!(
            "targets are {}x{}, expected {}x{}",
            y.nrows(),
            y.ncols(),
            x.nrows(),
            model.output_dim()
        )));
    }
    if x.nrows() == 0 || n_total < x.nrows() {
        return Err(parameter(format!(
            "batch of {} rows from a dataset of {n_total}",
            x.nrows()
        )));
    }
    Ok(())
}

/// Sum of all KL terms of the model.
pub(crate) fn total_kl<'t>(
    tape: &'t Tape,
    vars: &ModelVars<Var<'t>>,
    priors: &[super::sample::LayerPriors<'t>],
) -> Result<Var<'t>> {
    let mut terms = Vec::new();
    for (lv, pr) in vars.layers.iter().zip(priors) {
        for (v, chol) in lv.inputs.iter().zip(&pr.inputs) {
            terms.push(kl_inducing_tape(tape, chol, &v.mean, &v.tril)?);
        }
        for (sv, sc) in lv.kernels.iter().zip(&pr.kernels) {
            for (v, chol) in sv.iter().zip(sc) {
                terms.push(kl_inducing_tape(tape, chol, &v.mean, &v.tril)?);
            }
        }
    }
    Ok(tape.sum(&terms))
}

/// Deep forward pass on the tape; returns the N×D row-major output of the last layer.
pub(crate) fn forward_tape<'t>(
    tape: &'t Tape,
    model: &Model,
    vars: &ModelVars<Var<'t>>,
    priors: &[super::sample::LayerPriors<'t>],
    x: &DMatrix<f64>,
    noise: &[LayerNoise],
) -> Result<Vec<Var<'t>>> {
    let n = x.nrows();
    let mut h = tape.constants(&row_major(x));
    for (li, ((layer, lv), pr)) in model.layers.iter().zip(&vars.layers).zip(priors).enumerate() {
        let paths = layer_paths_tape(tape, layer, lv, pr, &noise[li])?;
        h = layer_output_tape(tape, &paths, &h, n)?;
        tape.check_finite(&h, &format!("layer {li} output"))?;
    }
    Ok(h)
}

/// (N/|b|)·(1/S)Σ_s log p(y_b | F^(s)) − Σ KL, with one noise draw per sample.
pub fn elbo_tape<'t>(
    tape: &'t Tape,
    model: &Model,
    vars: &ModelVars<Var<'t>>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    n_total: usize,
    noise: &[Vec<LayerNoise>],
) -> Result<Var<'t>> {
    check_batch(model, x, y, n_total)?;
    if noise.is_empty() {
        return Err(parameter("the bound needs at least one Monte Carlo sample"));
    }
    let priors = model_priors(tape, model, vars)?;
    let kl = total_kl(tape, vars, &priors)?;
    let yv = row_major(y);
    let lls = noise
        .iter()
        .map(|nz| {
            let f = forward_tape(tape, model, vars, &priors, x, nz)?;
            Ok(gaussian_loglik(tape, &f, vars.log_noise, &yv))
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = n_total as f64 / x.nrows() as f64 / noise.len() as f64;
    let bound = tape.sum(&lls) * scale - kl;
    tape.check_finite(&[bound], "evidence lower bound")?;
    Ok(bound)
}

/// Monte Carlo estimate of the bound with `samples` fresh noise draws.
pub fn elbo(
    model: &Model,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    n_total: usize,
    samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let noise: Vec<_> = (0..samples).map(|s| draw_noise(model, s, rng)).collect();
    let tape = Tape::new();
    let flat = tape.constants(&model.params());
    let vars = ModelVars::unpack(model, &flat)?;
    Ok(elbo_tape(&tape, model, &vars, x, y, n_total, &noise)?.value())
}

/// The bound and its gradient with respect to [`Model::params`].
pub fn elbo_with_grad(
    model: &Model,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    n_total: usize,
    noise: &[Vec<LayerNoise>],
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let flat = tape.params(&model.params());
    let vars = ModelVars::unpack(model, &flat)?;
    let bound = elbo_tape(&tape, model, &vars, x, y, n_total, noise)?;
    let grad = tape.backward(bound)?.into_vec();
    Ok((bound.value(), grad))
}

/// log N(y; 0, K + σ²I) for an EQ kernel.
pub fn exact_gp_log_evidence(kernel: &EqArdKernel, x: &DMatrix<f64>, y: &[f64], noise: f64) -> Result<f64> {
    let n = x.nrows();
    if y.len() != n {
        return Err(structural(format!("{} targets for {n} inputs", y.len())));
    }
    if !(noise > 0.0) {
        return Err(parameter(format!("noise variance must be positive, got {noise}")));
    }
    let k = gram(kernel, x, x)? + DMatrix::identity(n, n) * noise;
    let l = k
        .cholesky()
        .ok_or_else(|| numeric("evidence covariance is not positive definite"))?
        .l();
    let a = l
        .solve_lower_triangular(&nalgebra::DVector::from_column_slice(y))
        .ok_or_else(|| numeric("singular evidence factor"))?;
    let logdet: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    Ok(-0.5 * a.norm_squared() - logdet - 0.5 * n as f64 * (2.0 * PI).ln())
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, InitConfig, LayerConfig};
    use super::*;
    use crate::convolution::Variant;
    use crate::grad::finite_diff_check;
    use crate::rng::rng_from;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn kl_is_zero_for_identical_distributions() {
        let k = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 1.5]);
        let l = k.clone().cholesky().unwrap().l();
        let ind = InducingSet::new(DMatrix::zeros(3, 1), DVector::zeros(3), l).unwrap();
        assert!(kl_inducing(&ind, &k).unwrap().abs() < 1e-8);
    }

    #[test]
    fn scalar_kl_by_hand() {
        // ½[1 + 1 − 1 + 0 − 0]
        let ind = InducingSet::new(
            DMatrix::zeros(1, 1),
            DVector::from_element(1, 1.0),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        assert!((kl_inducing(&ind, &DMatrix::identity(1, 1)).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_factor_is_numeric_error() {
        let ind = InducingSet::new(DMatrix::zeros(2, 1), DVector::zeros(2), DMatrix::zeros(2, 2)).unwrap();
        assert!(matches!(
            kl_inducing(&ind, &DMatrix::identity(2, 2)),
            Err(crate::Error::Numeric(_))
        ));
        let ind = InducingSet::new(DMatrix::zeros(1, 1), DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        assert!(kl_inducing(&ind, &DMatrix::from_element(1, 1, -1.0)).is_err());
    }

    fn random_spd(m: usize, rng: &mut crate::rng::Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(m, m) * 0.1
    }

    fn random_instance(seed: u64) -> (InducingSet, DMatrix<f64>) {
        let mut rng = rng_from(seed, &[]);
        let m = rng.gen_range(1..7);
        let k = random_spd(m, &mut rng);
        let l = random_spd(m, &mut rng).cholesky().unwrap().l();
        let mu = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
        (InducingSet::new(DMatrix::zeros(m, 1), mu, l).unwrap(), k)
    }

    #[test]
    fn kl_is_nonnegative_on_random_instances() {
        for seed in 0..50 {
            let (ind, k) = random_instance(seed);
            assert!(kl_inducing(&ind, &k).unwrap() >= -1e-12, "seed {seed}");
        }
    }

    proptest! {
        #[test]
        fn tape_kl_matches_closed_form(seed in 0u64..1000) {
            let (ind, k) = random_instance(seed);
            let m = ind.len();
            let tape = Tape::new();
            let chol = VarMatrix::constant(&tape, &k.clone().cholesky().unwrap().l());
            let mean = tape.constants(ind.mean.as_slice());
            let packed: Vec<f64> = (0..m).flat_map(|i| (0..=i).map(move |j| (i, j))).map(|(i, j)| ind.scale_tril[(i, j)]).collect();
            let tril = tape.constants(&packed);
            let got = kl_inducing_tape(&tape, &chol, &mean, &tril).unwrap().value();
            let want = kl_inducing(&ind, &k).unwrap();
            prop_assert!((got - want).abs() < 1e-9 * want.abs().max(1.0));
        }
    }

    fn tiny_model(seed: u64) -> (Model, DMatrix<f64>, DMatrix<f64>) {
        let mut rng = rng_from(seed, &[]);
        let x = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(6, 1, |_, _| rng.gen_range(-1.0..1.0));
        let cfg = [LayerConfig {
            output_dim: 1,
            latent_count: 1,
            input_inducing: 5,
            kernel_inducing: 4,
            basis_size: 8,
            variant: Variant::Full,
        }];
        let mut m = init_model(&cfg, &x, &InitConfig::default(), seed).unwrap();
        // Move away from the initial point so no parameter group sits at a special value.
        let theta: Vec<f64> = m.params().iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
        m = m.with_params(&theta).unwrap();
        (m, x, y)
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let (model, x, y) = tiny_model(1);
        let noise: Vec<_> = (0..2).map(|s| draw_noise(&model, s, &mut rng_from(2, &[]))).collect();
        let check = finite_diff_check(
            |tape, v| {
                let vars = ModelVars::unpack(&model, v)?;
                elbo_tape(tape, &model, &vars, &x, &y, 30, &noise)
            },
            &model.params(),
            1e-5,
        )
        .unwrap();
        let lay = model.layout();
        assert!(
            check.max_rel_error < 1e-4,
            "worst {} in {:?}",
            check.max_rel_error,
            lay.group_of(check.worst_index)
        );
    }

    #[test]
    fn bound_is_invariant_to_batch_order() {
        let (model, x, y) = tiny_model(3);
        let noise: Vec<_> = (0..2).map(|s| draw_noise(&model, s, &mut rng_from(4, &[]))).collect();
        let perm = [3, 0, 5, 1, 4, 2];
        let xp = DMatrix::from_fn(6, 2, |i, j| x[(perm[i], j)]);
        let yp = DMatrix::from_fn(6, 1, |i, j| y[(perm[i], j)]);
        let a = elbo_with_grad(&model, &x, &y, 6, &noise).unwrap().0;
        let b = elbo_with_grad(&model, &xp, &yp, 6, &noise).unwrap().0;
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn minibatch_average_equals_full_batch() {
        let (model, _, _) = tiny_model(5);
        let mut rng = rng_from(6, &[]);
        let x = DMatrix::from_fn(12, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(12, 1, |_, _| rng.gen_range(-1.0..1.0));
        let noise: Vec<_> = (0..3).map(|s| draw_noise(&model, s, &mut rng)).collect();
        let full = elbo_with_grad(&model, &x, &y, 12, &noise).unwrap().0;
        let parts: Vec<f64> = (0..3)
            .map(|b| {
                let xb = x.rows(4 * b, 4).into_owned();
                let yb = y.rows(4 * b, 4).into_owned();
                elbo_with_grad(&model, &xb, &yb, 12, &noise).unwrap().0
            })
            .collect();
        let mean = parts.iter().sum::<f64>() / 3.0;
        assert!((mean - full).abs() < 1e-8, "{mean} vs {full}");
    }

    #[test]
    fn estimates_agree_across_sample_counts() {
        let (model, x, y) = tiny_model(7);
        let mut rng = rng_from(8, &[]);
        let stats: Vec<(f64, f64)> = [1, 2, 8]
            .iter()
            .map(|&s| {
                let v: Vec<f64> = (0..100)
                    .map(|_| elbo(&model, &x, &y, 6, s, &mut rng).unwrap())
                    .collect();
                let mean = v.iter().sum::<f64>() / 100.0;
                let var = v.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 99.0;
                (mean, (var / 100.0).sqrt())
            })
            .collect();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let se = (stats[i].1.powi(2) + stats[j].1.powi(2)).sqrt();
                assert!((stats[i].0 - stats[j].0).abs() < 2.0 * se + 1e-9, "{stats:?}");
            }
        }
    }

    #[test]
    fn shape_errors() {
        let (model, x, y) = tiny_model(9);
        let mut rng = rng_from(1, &[]);
        assert!(elbo(&model, &x, &y, 3, 1, &mut rng).is_err());
        assert!(elbo(&model, &x.columns(0, 1).into_owned(), &y, 6, 1, &mut rng).is_err());
        assert!(elbo(&model, &x, &y, 6, 0, &mut rng).is_err());
    }

    #[test]
    fn exact_evidence_of_a_single_point() {
        let k = EqArdKernel::new(2.0, vec![1.0]).unwrap();
        let got = exact_gp_log_evidence(&k, &DMatrix::zeros(1, 1), &[1.0], 0.5).unwrap();
        let want = -0.5 * (2.0 * PI * 2.5).ln() - 0.5 / 2.5;
        assert!((got - want).abs() < 1e-14);
    }
}
