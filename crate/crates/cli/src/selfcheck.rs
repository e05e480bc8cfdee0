//! Numerical self-verification against independent references.
//!
//! Every category compares a closed form with something computed another
//! way: adaptive quadrature, exact Gaussian conditioning, central
//! differences or dense linear algebra. Seeds are fixed, so repeated runs
//! give identical reports.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use npcgp::convolution::{i1a, i1b, i2a, i2b, Variant};
use npcgp::grad::finite_diff_check;
use npcgp::kernels::{eq_ard_eval, gram, sample_frequencies, EqArdKernel};
use npcgp::model::{draw_noise, elbo_tape, init_model, kl_inducing, InitConfig, LayerConfig, ModelVars};
use npcgp::pathwise::{
    cross_cov, cross_cov_matrix, interdomain_cov, interdomain_cov_matrix, interdomain_matheron_sample, matheron_update,
    sample_inducing_values, transformed_basis, GaussianWindow, InducingSet, RffBasis,
};
use npcgp::quadrature::{integrate, integrate_2d, integrate_complex};
use npcgp::rng::{rng_from, Rng};
use num_complex::Complex64;
use rand::Rng as _;

/// The closed-form integrals under test; replaceable for fault injection.
#[derive(Clone, Copy)]
pub struct Integrals {
    pub i1a: fn(f64, f64, f64, f64, f64) -> Complex64,
    pub i1b: fn(f64, f64, f64, f64, f64) -> Complex64,
    pub i2a: fn(f64, f64, f64, f64, f64, f64) -> f64,
    pub i2b: fn(f64, f64, f64, f64, f64, f64) -> f64,
}

impl Default for Integrals {
    fn default() -> Self {
        Self { i1a, i1b, i2a, i2b }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Category {
    pub name: &'static str,
    pub max_error: f64,
    pub threshold: f64,
}

impl Category {
    pub fn passed(&self) -> bool {
        self.max_error < self.threshold
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub categories: Vec<Category>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.categories.iter().all(Category::passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.categories.iter().filter(|c| !c.passed()).map(|c| c.name).collect()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.categories {
            writeln!(
                f,
                "{:<14} {}  max error {:.3e}  threshold {:.0e}",
                c.name,
                if c.passed() { "pass" } else { "FAIL" },
                c.max_error,
                c.threshold
            )?;
        }
        Ok(())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// NaN counts as an infinite error so it can never pass.
fn worst(acc: f64, e: f64) -> f64 {
    if e.is_nan() {
        f64::INFINITY
    } else {
        acc.max(e)
    }
}

const TUPLES: usize = 100;

fn quadrature_errors(ints: &Integrals) -> (f64, f64) {
    let mut rng = rng_from(11, &[]);
    let mut closed_form = 0.0f64;
    let fail = |r: npcgp::Result<f64>| r.unwrap_or(f64::NAN);
    for _ in 0..TUPLES {
        let x = rng.gen_range(-2.0..2.0);
        let alpha: f64 = rng.gen_range(0.1..3.0);
        let (t1, t2) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let beta = rng.gen_range(0.0..2.0 * PI);
        let (r1, r2) = (rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0));
        let (z1, z2) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let half = 12.0 / alpha.sqrt();
        let (lo, hi) = (x - half, x + half);
        let env = move |t: f64| (-alpha * (x - t) * (x - t)).exp();

        let cerr = |c: Complex64, q: npcgp::Result<Complex64>| match q {
            Ok(q) => (c - q).norm() / q.norm(),
            Err(_) => f64::NAN,
        };
        let q = integrate_complex(
            |t| Complex64::from_polar(env(t) * (t1 * t + beta).cos(), t2 * t),
            lo,
            hi,
            1e-17,
            1e-13,
        );
        closed_form = worst(closed_form, cerr((ints.i1a)(x, alpha, t1, beta, t2), q));
        let q = integrate_complex(
            |t| Complex64::from_polar(env(t) * (-r1 * (t - z1) * (t - z1)).exp(), t2 * t),
            lo,
            hi,
            1e-17,
            1e-13,
        );
        closed_form = worst(closed_form, cerr((ints.i1b)(x, alpha, z1, r1, t2), q));
        let q = fail(integrate(
            |t| env(t) * (t1 * t + beta).cos() * (-r1 * (t - z1) * (t - z1)).exp(),
            lo,
            hi,
            1e-17,
            1e-13,
        ));
        closed_form = worst(closed_form, rel((ints.i2a)(x, alpha, t1, beta, r1, z1), q));
        let q = fail(integrate(
            |t| env(t) * (-r1 * (t - z1) * (t - z1) - r2 * (t - z2) * (t - z2)).exp(),
            lo,
            hi,
            1e-17,
            1e-13,
        ));
        closed_form = worst(closed_form, rel((ints.i2b)(x, alpha, r1, z1, r2, z2), q));
    }

    let mut covariances = 0.0f64;
    for _ in 0..10 {
        let l = [rng.gen_range(0.3..1.5), rng.gen_range(0.3..1.5)];
        let al = [rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0)];
        let k = EqArdKernel::new(rng.gen_range(0.5..2.0), l.to_vec()).expect("positive draws");
        let win = GaussianWindow::new(rng.gen_range(0.5..2.0), al.to_vec()).expect("positive draws");
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let z = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let span = |c: f64| (c - 9.0, c + 9.0);
        let q = fail(integrate_2d(
            |a, b| eq_ard_eval(&k, &x, &[a, b]) * win.eval(&z, &[a, b]),
            span(0.5 * (x[0] + z[0])),
            span(0.5 * (x[1] + z[1])),
            1e-14,
            1e-11,
        ));
        covariances = worst(covariances, rel(cross_cov(&k, &win, &x, &z), q));

        let k1 = EqArdKernel::new(k.variance, vec![l[0]]).expect("positive draws");
        let w1 = GaussianWindow::new(win.amplitude, vec![al[0]]).expect("positive draws");
        let q = fail(integrate_2d(
            |t, s| w1.eval(&[z[0]], &[t]) * eq_ard_eval(&k1, &[t], &[s]) * w1.eval(&[x[0]], &[s]),
            span(z[0]),
            span(x[0]),
            1e-14,
            1e-11,
        ));
        covariances = worst(covariances, rel(interdomain_cov(&k1, &w1, &w1, &[z[0]], &[x[0]]), q));

        let theta = rng.gen_range(-3.0..3.0);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let basis =
            RffBasis::new(vec![1.0], DMatrix::from_element(1, 1, theta), vec![phase], 1.0).expect("valid basis");
        let closed = transformed_basis(&basis, &w1, &DMatrix::from_element(1, 1, z[0])).map_or(f64::NAN, |t| t[(0, 0)]);
        let (lo, hi) = span(z[0]);
        let q = fail(integrate(
            |t| w1.eval(&[z[0]], &[t]) * basis.scale() * (theta * t + phase).cos(),
            lo,
            hi,
            1e-16,
            1e-12,
        ));
        covariances = worst(covariances, rel(closed, q));
    }
    (closed_form, covariances)
}

/// Max deviation of Monte Carlo path moments from the exact conditional (mean, covariance).
fn matheron_errors() -> npcgp::Result<(f64, f64)> {
    const PATHS: usize = 8000;
    const BASIS: usize = 1000;
    let k = EqArdKernel::new(1.0, vec![0.7])?;
    let win = GaussianWindow::new(1.0, vec![2.0])?;
    let z = DMatrix::from_column_slice(4, 1, &[-1.2, -0.3, 0.5, 1.4]);
    let x = DMatrix::from_column_slice(5, 1, &[-1.5, -0.6, 0.0, 0.8, 2.0]);
    let mean = DVector::from_column_slice(&[0.4, -0.2, 0.7, 0.1]);
    let s_l = DMatrix::from_fn(4, 4, |i, j| {
        if i == j {
            0.3
        } else if i > j {
            0.05
        } else {
            0.0
        }
    });
    let ind = InducingSet::new(z.clone(), mean.clone(), s_l.clone())?;
    let s = &s_l * s_l.transpose();
    let mut rng = rng_from(21, &[]);

    let mut err_mean = 0.0f64;
    let mut err_cov = 0.0f64;
    for interdomain in [false, true] {
        let (kzz, kxz) = if interdomain {
            (
                interdomain_cov_matrix(&k, &win, &z, &z)?,
                cross_cov_matrix(&k, &win, &x, &z)?,
            )
        } else {
            (gram(&k, &z, &z)?, gram(&k, &x, &z)?)
        };
        let kzz_inv = kzz
            .clone()
            .cholesky()
            .ok_or_else(|| npcgp::Error::Numeric("gram".into()))?
            .inverse();
        let a = &kxz * &kzz_inv;
        let want_mean = &a * &mean;
        let want_cov = gram(&k, &x, &x)? - &a * kxz.transpose() + &a * &s * a.transpose();

        let draws: Vec<DVector<f64>> = (0..PATHS)
            .map(|_| {
                let basis = sample_frequencies(&k, BASIS, &mut rng)?;
                let v = sample_inducing_values(&ind, &mut rng);
                let f = if interdomain {
                    interdomain_matheron_sample(&basis, &win, &ind, &k, &v, &x)?
                } else {
                    matheron_update(&basis, &ind, &k, &v, &x)?
                };
                Ok(DVector::from_vec(f))
            })
            .collect::<npcgp::Result<_>>()?;
        let (mc_mean, mc_cov) = moments(&draws);
        err_mean = worst(err_mean, (mc_mean - want_mean).amax());
        err_cov = worst(err_cov, (mc_cov - want_cov).amax());
    }
    Ok((err_mean, err_cov))
}

fn moments(draws: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = draws.len() as f64;
    let d = draws[0].len();
    let mean = draws.iter().fold(DVector::zeros(d), |acc, f| acc + f) / n;
    let cov = draws.iter().fold(DMatrix::zeros(d, d), |acc, f| {
        let c = f - &mean;
        acc + &c * c.transpose()
    }) / (n - 1.0);
    (mean, cov)
}

/// Worst relative error of the bound's gradient on a small one-layer model.
fn gradient_error() -> npcgp::Result<f64> {
    let mut rng = rng_from(31, &[]);
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
    let mut model = init_model(&cfg, &x, &InitConfig::default(), 31)?;
    let theta: Vec<f64> = model.params().iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
    model = model.with_params(&theta)?;
    let noise: Vec<_> = (0..2).map(|s| draw_noise(&model, s, &mut rng)).collect();
    let check = finite_diff_check(
        |tape, v| {
            let vars = ModelVars::unpack(&model, v)?;
            elbo_tape(tape, &model, &vars, &x, &y, 30, &noise)
        },
        &model.params(),
        1e-5,
    )?;
    Ok(check.max_rel_error)
}

fn random_spd(m: usize, rng: &mut Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(m, m) * 0.2
}

/// KL against the dense formula ½[tr(K⁻¹S) + μᵀK⁻¹μ − M + log|K| − log|S|].
fn kl_error() -> npcgp::Result<f64> {
    let mut rng = rng_from(41, &[]);
    let mut err = 0.0f64;
    for _ in 0..50 {
        let m = rng.gen_range(1..7);
        let k = random_spd(m, &mut rng);
        let s = random_spd(m, &mut rng);
        let mu = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
        let l = s.clone().cholesky().expect("spd by construction").l();
        let ind = InducingSet::new(DMatrix::zeros(m, 1), mu.clone(), l)?;
        let ki = k.clone().try_inverse().expect("spd by construction");
        let dense = 0.5
            * ((&ki * &s).trace() + (mu.transpose() * &ki * &mu)[0] - m as f64 + k.determinant().ln()
                - s.determinant().ln());
        err = worst(err, rel(kl_inducing(&ind, &k)?, dense));
    }
    Ok(err)
}

pub fn run_selfcheck() -> Report {
    run_selfcheck_with(&Integrals::default())
}

pub fn run_selfcheck_with(ints: &Integrals) -> Report {
    let (closed_form, covariances) = quadrature_errors(ints);
    let (mean, cov) = matheron_errors().unwrap_or((f64::INFINITY, f64::INFINITY));
    Report {
        categories: vec![
            Category {
                name: "quadrature",
                max_error: closed_form,
                threshold: 1e-8,
            },
            Category {
                name: "covariances",
                max_error: covariances,
                threshold: 1e-6,
            },
            Category {
                name: "matheron-mean",
                max_error: mean,
                threshold: 0.05,
            },
            Category {
                name: "matheron-cov",
                max_error: cov,
                threshold: 0.1,
            },
            Category {
                name: "gradient",
                max_error: gradient_error().unwrap_or(f64::INFINITY),
                threshold: 1e-4,
            },
            Category {
                name: "kl",
                max_error: kl_error().unwrap_or(f64::INFINITY),
                threshold: 1e-8,
            },
        ],
    }
}
