//! One test per acceptance criterion, each printing a single PASS/FAIL line.
//!
//! References are computed here, independently of the library: composite
//! Gauss–Legendre quadrature, closed-form Gaussian conditioning, and direct
//! numerical convolution of evaluated paths. Criteria 5 and 6 train for
//! thousands of iterations and are ignored by default; run them with
//! `cargo test --release --test acceptance -- --ignored`.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use npcgp::convolution::{
    i1a, i1b, i2a, i2b, layer_output_sample, output_kernel_curve, KernelPath, SpectralMethod, Variant,
};
use npcgp::data::{toy_generate, toy_output_covariance};
use npcgp::grad::finite_diff_check;
use npcgp::kernels::{sample_frequencies, EqArdKernel};
use npcgp::model::{
    draw_noise, draw_path, elbo, elbo_tape, exact_gp_log_evidence, forward_deep, init_model, svgp_baseline_elbo,
    train_svgp, InitConfig, LayerConfig, Model, ModelVars,
};
use npcgp::pathwise::{
    cross_cov, interdomain_cov, interdomain_matheron_sample, matheron_update, sample_inducing_values,
    transformed_basis, GaussianWindow, InducingSet, RffBasis,
};
use npcgp::rng::rng_from;
use npcgp_cli::artifact::{dataset_csv, ModelFile};
use npcgp_cli::commands::{cmd_train, covariance_curves};
use npcgp_cli::config::RunConfig;
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn report(n: usize, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// NaN must never look like a small error.
fn worst(acc: f64, e: f64) -> f64 {
    if e.is_nan() {
        f64::INFINITY
    } else {
        acc.max(e)
    }
}

// Five-point Gauss–Legendre rule on [−1, 1].
const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Composite Gauss–Legendre nodes and weights on [lo, hi].
fn gl_rule(lo: f64, hi: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = (hi - lo) / panels as f64;
    let mut out = Vec::with_capacity(5 * panels);
    for k in 0..panels {
        let mid = lo + (k as f64 + 0.5) * h;
        for (t, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            out.push((mid + 0.5 * h * t, 0.5 * h * w));
        }
    }
    out
}

fn quad(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    gl_rule(lo, hi, 2000).iter().map(|&(t, w)| w * f(t)).sum()
}

fn quad_c(f: impl Fn(f64) -> Complex64, lo: f64, hi: f64) -> Complex64 {
    gl_rule(lo, hi, 2000).iter().map(|&(t, w)| f(t) * w).sum()
}

fn quad2(f: impl Fn(f64, f64) -> f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (ra, rb) = (gl_rule(a.0, a.1, 160), gl_rule(b.0, b.1, 160));
    ra.iter()
        .map(|&(s, ws)| ws * rb.iter().map(|&(t, wt)| wt * f(s, t)).sum::<f64>())
        .sum()
}

#[test]
fn criterion_1_integrals_match_quadrature() {
    let start = Instant::now();
    let mut rng = rng_from(1001, &[]);
    let mut closed = [0.0f64; 4];
    for _ in 0..100 {
        let x = rng.gen_range(-2.0..2.0);
        let alpha: f64 = rng.gen_range(0.1..3.0);
        let (t1, t2) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let beta = rng.gen_range(0.0..2.0 * PI);
        let (r1, r2) = (rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0));
        let (z1, z2) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let (lo, hi) = (x - 12.0 / alpha.sqrt(), x + 12.0 / alpha.sqrt());
        let env = |t: f64| (-alpha * (x - t) * (x - t)).exp();
        let phase = |t: f64, th: f64| Complex64::new(0.0, th * t).exp();

        let q = quad_c(|t| phase(t, t2) * (env(t) * (t1 * t + beta).cos()), lo, hi);
        closed[0] = worst(closed[0], (i1a(x, alpha, t1, beta, t2) - q).norm() / q.norm());
        let q = quad_c(|t| phase(t, t2) * (env(t) * (-r1 * (t - z1).powi(2)).exp()), lo, hi);
        closed[1] = worst(closed[1], (i1b(x, alpha, z1, r1, t2) - q).norm() / q.norm());
        let q = quad(
            |t| env(t) * (t1 * t + beta).cos() * (-r1 * (t - z1).powi(2)).exp(),
            lo,
            hi,
        );
        closed[2] = worst(closed[2], rel(i2a(x, alpha, t1, beta, r1, z1), q));
        let q = quad(
            |t| env(t) * (-r1 * (t - z1).powi(2) - r2 * (t - z2).powi(2)).exp(),
            lo,
            hi,
        );
        closed[3] = worst(closed[3], rel(i2b(x, alpha, r1, z1, r2, z2), q));
    }

    let mut cov = [0.0f64; 3];
    for _ in 0..10 {
        let ls = [rng.gen_range(0.3..1.5), rng.gen_range(0.3..1.5)];
        let prec = [rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0)];
        let var = rng.gen_range(0.5..2.0);
        let amp = rng.gen_range(0.5..2.0);
        let k = EqArdKernel::new(var, ls.to_vec()).unwrap();
        let win = GaussianWindow::new(amp, prec.to_vec()).unwrap();
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let z = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let kern = |a: &[f64], b: &[f64]| {
            var * (0..a.len())
                .map(|p| (-(a[p] - b[p]).powi(2) / (2.0 * ls[p] * ls[p])).exp())
                .product::<f64>()
        };
        let window =
            |c: &[f64], t: &[f64]| amp * (-(0..c.len()).map(|p| prec[p] * (c[p] - t[p]).powi(2)).sum::<f64>()).exp();
        let span = |c: f64| (c - 9.0, c + 9.0);

        let q = quad2(
            |a, b| kern(&x, &[a, b]) * window(&z, &[a, b]),
            span(0.5 * (x[0] + z[0])),
            span(0.5 * (x[1] + z[1])),
        );
        cov[0] = worst(cov[0], rel(cross_cov(&k, &win, &x, &z), q));

        let k1 = EqArdKernel::new(var, vec![ls[0]]).unwrap();
        let w1 = GaussianWindow::new(amp, vec![prec[0]]).unwrap();
        let q = quad2(
            |t, s| window(&[z[0]], &[t]) * kern(&[t], &[s]) * window(&[x[0]], &[s]),
            span(z[0]),
            span(x[0]),
        );
        cov[1] = worst(cov[1], rel(interdomain_cov(&k1, &w1, &w1, &[z[0]], &[x[0]]), q));

        let theta = rng.gen_range(-3.0..3.0);
        let beta = rng.gen_range(0.0..2.0 * PI);
        let basis = RffBasis::new(vec![1.0], DMatrix::from_element(1, 1, theta), vec![beta], var).unwrap();
        let closed_tb = transformed_basis(&basis, &w1, &DMatrix::from_element(1, 1, z[0])).unwrap()[(0, 0)];
        let (lo, hi) = span(z[0]);
        let q = quad(
            |t| window(&[z[0]], &[t]) * (2.0 * var).sqrt() * (theta * t + beta).cos(),
            lo,
            hi,
        );
        cov[2] = worst(cov[2], rel(closed_tb, q));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = closed.iter().all(|e| *e < 1e-8) && cov.iter().all(|e| *e < 1e-6) && secs < 60.0;
    report(
        1,
        pass,
        format!(
            "I1A {:.1e} I1B {:.1e} I2A {:.1e} I2B {:.1e} (< 1e-8); cross {:.1e} interdomain {:.1e} basis {:.1e} (< 1e-6); {secs:.1}s",
            closed[0], closed[1], closed[2], closed[3], cov[0], cov[1], cov[2]
        ),
    );
}

/// Exact conditional moments of f(X) given q(v) = N(μ, S) on the inducing variables.
fn conditional_moments(
    kxx: &DMatrix<f64>,
    kxz: &DMatrix<f64>,
    kzz: &DMatrix<f64>,
    mu: &DVector<f64>,
    s: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let a = kxz * kzz.clone().try_inverse().unwrap();
    (&a * mu, kxx - &a * kxz.transpose() + &a * s * a.transpose())
}

#[test]
fn criterion_2_matheron_samples_match_conditional_moments() {
    const PATHS: usize = 20_000;
    const BASIS: usize = 2000;
    let start = Instant::now();
    let (var, ell, prec, amp) = (1.3, 0.7, 2.0, 0.8);
    let big_a = 1.0 / (2.0 * ell * ell);
    let k = EqArdKernel::new(var, vec![ell]).unwrap();
    let win = GaussianWindow::new(amp, vec![prec]).unwrap();
    let zs = [-1.3, -0.6, 0.1, 0.7, 1.5, 2.2];
    let xs = [-1.8, -0.9, -0.2, 0.4, 1.1, 2.6];
    let z = DMatrix::from_column_slice(zs.len(), 1, &zs);
    let x = DMatrix::from_column_slice(xs.len(), 1, &xs);
    let mu = DVector::from_column_slice(&[0.4, -0.2, 0.7, 0.1, -0.5, 0.3]);
    let s_l = DMatrix::from_fn(6, 6, |i, j| {
        if i == j {
            0.3
        } else if i > j {
            0.05
        } else {
            0.0
        }
    });
    let s = &s_l * s_l.transpose();
    let ind = InducingSet::new(z.clone(), mu.clone(), s_l).unwrap();

    let eq = |a: f64, b: f64| var * (-big_a * (a - b) * (a - b)).exp();
    let cross = |a: f64, c: f64| {
        var * amp * (PI / (big_a + prec)).sqrt() * (-big_a * prec / (big_a + prec) * (a - c).powi(2)).exp()
    };
    let smoothed = big_a * prec / (big_a + prec);
    let inter = |c: f64, c2: f64| {
        amp * amp
            * var
            * (PI / (prec + big_a)).sqrt()
            * (PI / (smoothed + prec)).sqrt()
            * (-smoothed * prec / (smoothed + prec) * (c - c2).powi(2)).exp()
    };
    let mat =
        |r: &[f64], c: &[f64], f: &dyn Fn(f64, f64) -> f64| DMatrix::from_fn(r.len(), c.len(), |i, j| f(r[i], c[j]));
    let kxx = mat(&xs, &xs, &eq);

    let mut rng = rng_from(1002, &[]);
    let mut errs = [(0.0f64, 0.0f64); 2];
    for (slot, interdomain) in [false, true].into_iter().enumerate() {
        let (kzz, kxz) = if interdomain {
            (mat(&zs, &zs, &inter), mat(&xs, &zs, &cross))
        } else {
            (mat(&zs, &zs, &eq), mat(&xs, &zs, &eq))
        };
        let (want_mean, want_cov) = conditional_moments(&kxx, &kxz, &kzz, &mu, &s);
        let n = xs.len();
        let mut sum = DVector::zeros(n);
        let mut outer = DMatrix::zeros(n, n);
        for _ in 0..PATHS {
            let basis = sample_frequencies(&k, BASIS, &mut rng).unwrap();
            let v = sample_inducing_values(&ind, &mut rng);
            let f = if interdomain {
                interdomain_matheron_sample(&basis, &win, &ind, &k, &v, &x).unwrap()
            } else {
                matheron_update(&basis, &ind, &k, &v, &x).unwrap()
            };
            let f = DVector::from_vec(f);
            outer += &f * f.transpose();
            sum += f;
        }
        let m = PATHS as f64;
        let mean = &sum / m;
        let cov = (outer - &mean * mean.transpose() * m) / (m - 1.0);
        errs[slot] = ((mean - want_mean).amax(), (cov - want_cov).amax());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = errs.iter().all(|(m, c)| *m < 0.05 && *c < 0.1) && secs < 300.0;
    report(
        2,
        pass,
        format!(
            "same-domain mean {:.3} cov {:.3}; interdomain mean {:.3} cov {:.3} (< 0.05 / 0.1); {secs:.1}s",
            errs[0].0, errs[0].1, errs[1].0, errs[1].1
        ),
    );
}

#[test]
fn criterion_3_elbo_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = rng_from(1003, &[]);
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
    let base = init_model(&cfg, &x, &InitConfig::default(), 1003).unwrap();
    // Move away from the symmetric initial point so every group has a nonzero gradient.
    let theta: Vec<f64> = base.params().iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
    let model = base.with_params(&theta).unwrap();
    let noise: Vec<_> = (0..2).map(|s| draw_noise(&model, s, &mut rng)).collect();
    let check = finite_diff_check(
        |tape, v| {
            let vars = ModelVars::unpack(&model, v)?;
            elbo_tape(tape, &model, &vars, &x, &y, 30, &noise)
        },
        &theta,
        1e-5,
    )
    .unwrap();
    let layout = model.layout();
    let mut per_group = Vec::new();
    for g in &layout.groups {
        let e = g.range.clone().fold(0.0f64, |acc, i| {
            worst(
                acc,
                (check.analytic[i] - check.numeric[i]).abs() / (check.numeric[i].abs() + 1e-12),
            )
        });
        per_group.push((g.name.clone(), e));
    }
    let secs = start.elapsed().as_secs_f64();
    let max = per_group.iter().fold(0.0f64, |a, (_, e)| a.max(*e));
    let groups: Vec<String> = per_group.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    report(
        3,
        max < 1e-4 && secs < 120.0,
        format!(
            "worst {max:.1e} (< 1e-4) over {} groups [{}]; {secs:.1}s",
            per_group.len(),
            groups.join(", ")
        ),
    );
}

#[test]
fn criterion_4_assembly_matches_numerical_convolution() {
    let start = Instant::now();
    let grid = DMatrix::from_fn(200, 1, |i, _| -3.0 + 6.0 * i as f64 / 199.0);
    let cfg = [LayerConfig {
        output_dim: 1,
        latent_count: 2,
        input_inducing: 12,
        kernel_inducing: 9,
        basis_size: 16,
        variant: Variant::Full,
    }];
    let model = init_model(&cfg, &grid, &InitConfig::default(), 1004).unwrap();
    let mut rng = rng_from(1004, &[]);
    let mut worst_rel = 0.0f64;
    for _ in 0..3 {
        let paths = draw_path(&model.layers[0], &mut rng).unwrap();
        let closed = layer_output_sample(&paths, &grid).unwrap();
        let g = &paths.kernels[0][0];
        let half = (28.0 / g.alpha).sqrt();
        const STEPS: usize = 4000;
        let numeric: Vec<f64> = (0..grid.nrows())
            .map(|i| {
                let x = grid[(i, 0)];
                let h = 2.0 * half / STEPS as f64;
                (0..=STEPS)
                    .map(|k| {
                        let s = -half + k as f64 * h;
                        let w = if k == 0 || k == STEPS { 0.5 * h } else { h };
                        let u: f64 = paths
                            .inputs
                            .iter()
                            .enumerate()
                            .map(|(q, u)| paths.mixing[q] * u.eval(&[x - s]))
                            .sum();
                        w * g.eval(s) * u
                    })
                    .sum()
            })
            .collect();
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = numeric
            .iter()
            .enumerate()
            .fold(0.0f64, |m, (i, v)| worst(m, (v - closed[(i, 0)]).abs()));
        worst_rel = worst(worst_rel, diff / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        4,
        worst_rel < 1e-4 && secs < 60.0,
        format!("sup-norm relative error {worst_rel:.1e} (< 1e-4) on 200 points, 3 path draws; {secs:.1}s"),
    );
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn train_config(dir: &Path, text: &str) -> RunConfig {
    RunConfig::parse(text, dir).unwrap()
}

#[test]
#[ignore = "trains for 10000 iterations"]
fn criterion_5_toy_covariance_recovery() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.csv"), dataset_csv(&toy_generate(3000, 5).unwrap())).unwrap();
    let cfg = train_config(
        dir.path(),
        "data = toy.csv\noutputs = last:2\nvariant = npcgp\nlatent_count = 2\niterations = 10000\n",
    );
    let out = cmd_train(&cfg).unwrap();
    let file = ModelFile::load(&out.model_path).unwrap();
    const GRID: usize = 41;
    let rows = covariance_curves(&file, 3.0, GRID, 200).unwrap();
    let mut rs = Vec::new();
    for chunk in rows.chunks(GRID) {
        let (d, p) = (chunk[0].output, chunk[0].dim);
        let est: Vec<f64> = chunk.iter().map(|r| r.mean).collect();
        let truth: Vec<f64> = chunk
            .iter()
            .map(|r| {
                let mut lag = [0.0; 2];
                lag[p] = r.lag;
                toy_output_covariance(d, &lag)
            })
            .collect();
        rs.push((d, p, pearson(&est, &truth)));
    }
    let secs = start.elapsed().as_secs_f64();
    let shown: Vec<String> = rs
        .iter()
        .map(|(d, p, r)| format!("y{} x{} r={r:.3}", d + 1, p + 1))
        .collect();
    report(
        5,
        rs.len() == 4 && rs.iter().all(|(_, _, r)| *r > 0.9),
        format!("{} (> 0.9); {secs:.0}s", shown.join(", ")),
    );
}

#[test]
#[ignore = "needs the UCI power plant CSV in NPCGP_POWER_CSV and trains for hours"]
fn criterion_6_power_regression() {
    let Some(path) = std::env::var_os("NPCGP_POWER_CSV") else {
        report(
            6,
            false,
            "NPCGP_POWER_CSV is not set; the power plant data is not available".into(),
        );
        return;
    };
    let data = std::path::PathBuf::from(path);
    let dir = tempfile::tempdir().unwrap();
    let mut scores = Vec::new();
    for seed in 0..3 {
        let text = format!(
            "data = {}\noutputs = last:1\nvariant = npcgp\niterations = 10000\nseed = {seed}\noutput_dir = split{seed}\n",
            data.display()
        );
        let out = cmd_train(&train_config(dir.path(), &text)).unwrap();
        scores.push((out.summary[0].rmse, out.summary[0].mnll));
    }
    let rmse = scores.iter().map(|s| s.0).sum::<f64>() / 3.0;
    let mnll = scores.iter().map(|s| s.1).sum::<f64>() / 3.0;
    report(
        6,
        rmse <= 4.2 && mnll <= 2.95,
        format!("mean over 3 splits RMSE {rmse:.3} (<= 4.2), MNLL {mnll:.3} (<= 2.95); splits {scores:?}"),
    );
}

#[test]
fn criterion_7_fast_variant_coincides_at_one_output() {
    let mut rng = rng_from(1007, &[]);
    let x = DMatrix::from_fn(40, 2, |_, _| rng.gen_range(-1.5f64..1.5));
    let y = DMatrix::from_fn(40, 1, |i, _| x[(i, 0)].sin() + 0.5 * x[(i, 1)]);
    let cfg = [LayerConfig {
        output_dim: 1,
        latent_count: 2,
        input_inducing: 10,
        kernel_inducing: 6,
        basis_size: 12,
        variant: Variant::Full,
    }];
    let full = init_model(&cfg, &x, &InitConfig::default(), 1007).unwrap();
    let mut fast: Model = full.clone();
    fast.layers[0].variant = Variant::Fast;

    let fa = forward_deep(&full, &x, 8, &mut rng_from(77, &[])).unwrap();
    let fb = forward_deep(&fast, &x, 8, &mut rng_from(77, &[])).unwrap();
    let out_diff = fa.iter().zip(&fb).fold(0.0f64, |m, (a, b)| worst(m, (a - b).amax()));
    let ea = elbo(&full, &x, &y, 40, 4, &mut rng_from(78, &[])).unwrap();
    let eb = elbo(&fast, &x, &y, 40, 4, &mut rng_from(78, &[])).unwrap();
    let elbo_diff = (ea - eb).abs();
    report(
        7,
        out_diff <= 1e-10 && elbo_diff <= 1e-10,
        format!("max output difference {out_diff:.1e}, bound difference {elbo_diff:.1e} (<= 1e-10)"),
    );
}

/// A DSE-prior kernel path with no inducing correction.
fn prior_kernel_path(seed: u64) -> KernelPath<f64> {
    const B: usize = 64;
    let mut rng = rng_from(seed, &[]);
    let scale = (2.0 / B as f64).sqrt();
    let c = (0..B)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            scale * e
        })
        .collect();
    let theta = (0..B)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            e / 0.5
        })
        .collect();
    let beta = (0..B).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    KernelPath {
        alpha: 0.5,
        rho: 1.0,
        c,
        theta,
        beta,
        q: Vec::new(),
        z: Vec::new(),
    }
}

#[test]
fn criterion_8_output_covariance_approaches_input_covariance() {
    let lags: Vec<Vec<f64>> = (0..=60).map(|i| vec![i as f64 * 0.1]).collect();
    let mut verdicts = Vec::new();
    for seed in 0..3u64 {
        let g = prior_kernel_path(2000 + seed);
        let mut rng = rng_from(3000 + seed, &[]);
        let dists: Vec<f64> = [0.1, 1.0, 10.0]
            .iter()
            .map(|&ell| {
                let curve = output_kernel_curve(
                    std::slice::from_ref(&g),
                    &[1.0],
                    &[vec![ell]],
                    &lags,
                    SpectralMethod::MonteCarlo { samples: 500 },
                    &mut rng,
                )
                .unwrap();
                lags.iter()
                    .zip(&curve)
                    .map(|(r, k)| (k / curve[0] - (-r[0] * r[0] / (2.0 * ell * ell)).exp()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        verdicts.push((dists[1] <= dists[0] && dists[2] <= dists[1], dists));
    }
    let holds = verdicts.iter().filter(|(ok, _)| *ok).count();
    let shown: Vec<String> = verdicts
        .iter()
        .map(|(_, d)| format!("[{:.3}, {:.3}, {:.3}]", d[0], d[1], d[2]))
        .collect();
    report(
        8,
        holds >= 2,
        format!(
            "nonincreasing for {holds}/3 seeds; sup distances at lengthscales 0.1, 1, 10: {}",
            shown.join(" ")
        ),
    );
}

#[test]
fn criterion_9_svgp_bound_is_tight_with_inducing_points_at_the_data() {
    let ds = toy_generate(20, 1009).unwrap();
    let y: Vec<f64> = ds.y.column(0).iter().copied().collect();
    let kernel = EqArdKernel::new(1.0, vec![1.0, 1.0]).unwrap();
    // The learned noise is small, so q needs many steps to approach the exact posterior.
    let fit = train_svgp(&kernel, &ds.x, 0.05, &ds.x, &y, 30_000, 20, 0.01, 1009).unwrap();
    let bound = svgp_baseline_elbo(&fit.kernel, &fit.inducing, &ds.x, &y, 20, fit.noise_variance).unwrap();
    let exact = exact_gp_log_evidence(&fit.kernel, &ds.x, &y, fit.noise_variance).unwrap();
    let gap = exact - bound;
    report(
        9,
        gap.abs() <= 0.5,
        format!("exact log evidence {exact:.3}, bound {bound:.3}, gap {gap:.3} nats (<= 0.5)"),
    );
}
