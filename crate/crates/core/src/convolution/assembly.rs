//! Batched evaluation of layer outputs and their reverse-mode adjoints.
//!
//! For one (kernel set, input path) pair the convolution splits into
//!
//! * an RFF part: Σ_k Re[C_k e^{iθ_k·x}] with C_k = c_k e^{iβ_k} ∏_p Ĝ_p(θ_kp),
//! * a canonical part: Σ_l q_l ∏_p H_p(x_p − z_lp) where
//!   H_p(δ) = ∫ G_p(s) e^{−ρ_p (s − δ)²} ds.
//!
//! The canonical part dominates the cost (N·M·P·(B + M_G) per pair). The
//! cosine and cross-term exponentials of H_p factor into per-row and
//! per-centre tables, so the inner loop is multiply-add only.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{row_major, InputPath, KernelPath, PathCoefficients};
use crate::error::{numeric, structural, Result};
use crate::grad::{Tape, Var};

/// Largest tolerated |Ĝ(−ω) − conj Ĝ(ω)| relative to max(1, |Ĝ(ω)|).
pub const RESIDUE_TOL: f64 = 1e-8;

/// Beyond this |b·x| the separable cross-term tables risk overflow.
const SEPARABLE_LIMIT: f64 = 300.0;

#[derive(Clone, Debug, Default)]
struct KernelGrad {
    alpha: f64,
    rho: f64,
    c: Vec<f64>,
    theta: Vec<f64>,
    q: Vec<f64>,
    z: Vec<f64>,
}

impl KernelGrad {
    fn zeros(k: &KernelPath<f64>) -> Self {
        Self {
            alpha: 0.0,
            rho: 0.0,
            c: vec![0.0; k.c.len()],
            theta: vec![0.0; k.c.len()],
            q: vec![0.0; k.q.len()],
            z: vec![0.0; k.q.len()],
        }
    }

    /// Same order as [`kernel_inputs`].
    fn write(&self, out: &mut [f64]) -> usize {
        let mut i = 0;
        out[i] += self.alpha;
        out[i + 1] += self.rho;
        i += 2;
        for v in self.c.iter().chain(&self.theta).chain(&self.q).chain(&self.z) {
            out[i] += v;
            i += 1;
        }
        i
    }
}

fn kernel_inputs<'t>(k: &KernelPath<Var<'t>>, out: &mut Vec<Var<'t>>) {
    out.push(k.alpha);
    out.push(k.rho);
    out.extend_from_slice(&k.c);
    out.extend_from_slice(&k.theta);
    out.extend_from_slice(&k.q);
    out.extend_from_slice(&k.z);
}

fn vals(tape: &Tape, xs: &[Var<'_>]) -> Vec<f64> {
    tape.values(xs)
}

fn kernel_values(tape: &Tape, k: &KernelPath<Var<'_>>) -> KernelPath<f64> {
    KernelPath {
        alpha: k.alpha.value(),
        rho: k.rho.value(),
        c: vals(tape, &k.c),
        theta: vals(tape, &k.theta),
        beta: k.beta.clone(),
        q: vals(tape, &k.q),
        z: vals(tape, &k.z),
    }
}

fn input_values(tape: &Tape, u: &InputPath<Var<'_>>) -> InputPath<f64> {
    InputPath {
        dim: u.dim,
        c: vals(tape, &u.c),
        theta: vals(tape, &u.theta),
        beta: u.beta.clone(),
        q: vals(tape, &u.q),
        z: vals(tape, &u.z),
        rho: vals(tape, &u.rho),
    }
}

// ---------------------------------------------------------------------------
// Spectrum Ĝ(ω)

/// Ĝ(ω), after checking that Ĝ(−ω) is its conjugate.
fn spectrum_checked(k: &KernelPath<f64>, omega: f64) -> Result<Complex64> {
    let g = k.spectrum(omega);
    let h = k.spectrum(-omega);
    let residue = (h - g.conj()).norm();
    if !(residue <= RESIDUE_TOL * g.norm().max(1.0)) {
        return Err(numeric(format!(
            "imaginary residue {residue:e} in kernel spectrum at ω = {omega} (integral inconsistency)"
        )));
    }
    Ok(g)
}

/// Adds Re(conj(ḡ)·∂Ĝ/∂·) into `acc` and returns the ω-component.
fn spectrum_backward(k: &KernelPath<f64>, omega: f64, gbar: Complex64, acc: &mut KernelGrad) -> f64 {
    let dot = |d: Complex64| gbar.re * d.re + gbar.im * d.im;
    let al = k.alpha;
    let h = 0.5 * (PI / al).sqrt();
    let mut d_omega = 0.0;
    for i in 0..k.c.len() {
        let th = k.theta[i];
        let (u, v) = (th - omega, th + omega);
        let p1 = Complex64::from_polar((-u * u / (4.0 * al)).exp(), k.beta[i]);
        let p2 = Complex64::from_polar((-v * v / (4.0 * al)).exp(), -k.beta[i]);
        let t = (p1 + p2) * h;
        let ci = k.c[i];
        acc.c[i] += dot(t);
        acc.theta[i] += ci * dot((p1 * (-u) + p2 * (-v)) * (h / (2.0 * al)));
        d_omega += ci * dot((p1 * u - p2 * v) * (h / (2.0 * al)));
        acc.alpha += ci * dot(-t / (2.0 * al) + (p1 * (u * u) + p2 * (v * v)) * (h / (4.0 * al * al)));
    }
    let rho = k.rho;
    let a = al + rho;
    let i = Complex64::i();
    for j in 0..k.q.len() {
        let z = k.z[j];
        let r = super::i1b(0.0, al, z, rho, -omega);
        let qj = k.q[j];
        acc.q[j] += dot(r);
        acc.z[j] += qj * dot(r * (-2.0 * al * rho * z / a - i * (omega * rho / a)));
        d_omega += qj * dot(r * (-omega / (2.0 * a) - i * (rho * z / a)));
        let common = -1.0 / (2.0 * a) + omega * omega / (4.0 * a * a);
        acc.alpha += qj * dot(r * (common - rho * rho * z * z / (a * a) + i * (omega * rho * z / (a * a))));
        acc.rho += qj * dot(r * (common - al * al * z * z / (a * a) - i * (omega * al * z / (a * a))));
    }
    d_omega
}

// ---------------------------------------------------------------------------
// RFF part

/// C_k = c_k e^{iβ_k} ∏_p Ĝ_p(θ_kp).
fn rff_coefficients(kernels: &[KernelPath<f64>], u: &InputPath<f64>) -> Result<Vec<Complex64>> {
    let p = u.dim;
    let mut out = Vec::with_capacity(u.c.len());
    for k in 0..u.c.len() {
        let mut c = Complex64::from_polar(u.c[k], u.beta[k]);
        for (d, kern) in kernels.iter().enumerate() {
            c *= spectrum_checked(kern, u.theta[k * p + d])?;
        }
        out.push(c);
    }
    Ok(out)
}

/// Σ_k (Re C_k cos(θ_k·x) − Im C_k sin(θ_k·x)) for every row of x.
fn fourier_eval(cre: &[f64], cim: &[f64], theta: &[f64], p: usize, x: &[f64], n: usize) -> Vec<f64> {
    let b = cre.len();
    (0..n)
        .map(|r| {
            let xr = &x[r * p..(r + 1) * p];
            let mut v = 0.0;
            for k in 0..b {
                let arg: f64 = (0..p).map(|d| theta[k * p + d] * xr[d]).sum();
                let (s, c) = arg.sin_cos();
                v += cre[k] * c - cim[k] * s;
            }
            v
        })
        .collect()
}

/// Adjoints of [`fourier_eval`] written as [cre | cim | theta | x].
fn fourier_backward(cre: &[f64], cim: &[f64], theta: &[f64], p: usize, x: &[f64], ybar: &[f64], out: &mut [f64]) {
    let b = cre.len();
    let (o_cim, o_theta, o_x) = (b, 2 * b, 2 * b + b * p);
    for (r, &yb) in ybar.iter().enumerate() {
        if yb == 0.0 {
            continue;
        }
        let xr = &x[r * p..(r + 1) * p];
        for k in 0..b {
            let arg: f64 = (0..p).map(|d| theta[k * p + d] * xr[d]).sum();
            let (s, c) = arg.sin_cos();
            out[k] += yb * c;
            out[o_cim + k] -= yb * s;
            let darg = yb * (-cre[k] * s - cim[k] * c);
            for d in 0..p {
                out[o_theta + k * p + d] += darg * xr[d];
                out[o_x + r * p + d] += darg * theta[k * p + d];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical part

/// Per-dimension tables for H_p(δ) with δ = x_p − z_lp.
struct DimTable {
    a: f64,
    s: f64,
    kappa: f64,
    mf: f64,
    cg: Vec<f64>,
    a2: f64,
    s2: f64,
    fc: f64,
    kfac: Vec<f64>,
    kq: Vec<f64>,
    b: Vec<f64>,
    separable: bool,
    exr: Vec<f64>,
    exi: Vec<f64>,
    ezr: Vec<f64>,
    ezi: Vec<f64>,
    ebx: Vec<f64>,
    ebz: Vec<f64>,
}

impl DimTable {
    fn new(k: &KernelPath<f64>, rho_u: f64, xs: &[f64], zs: &[f64]) -> Self {
        let (al, rg) = (k.alpha, k.rho);
        let a = al + rho_u;
        let a2 = al + rg + rho_u;
        let mf = rho_u / a;
        let cg =
            k.c.iter()
                .zip(&k.theta)
                .map(|(c, t)| c * (-t * t / (4.0 * a)).exp())
                .collect();
        let kfac: Vec<f64> =
            k.z.iter()
                .map(|z| (-(al * rg + rg * rho_u) * z * z / a2).exp())
                .collect();
        let kq = k.q.iter().zip(&kfac).map(|(q, f)| q * f).collect();
        let b: Vec<f64> = k.z.iter().map(|z| 2.0 * rg * rho_u * z / a2).collect();
        let bmax = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let xmax = xs.iter().chain(zs).fold(0.0f64, |m, v| m.max(v.abs()));
        let separable = bmax * xmax < SEPARABLE_LIMIT;

        let nb = k.c.len();
        let mut exr = Vec::with_capacity(xs.len() * nb);
        let mut exi = Vec::with_capacity(xs.len() * nb);
        for &x in xs {
            for t in &k.theta {
                let (s, c) = (mf * t * x).sin_cos();
                exr.push(c);
                exi.push(s);
            }
        }
        let mut ezr = Vec::with_capacity(zs.len() * nb);
        let mut ezi = Vec::with_capacity(zs.len() * nb);
        for &z in zs {
            for (t, be) in k.theta.iter().zip(&k.beta) {
                let (s, c) = (be - mf * t * z).sin_cos();
                ezr.push(c);
                ezi.push(s);
            }
        }
        let (ebx, ebz) = if separable {
            (
                xs.iter().flat_map(|x| b.iter().map(move |bj| (bj * x).exp())).collect(),
                zs.iter()
                    .flat_map(|z| b.iter().map(move |bj| (-bj * z).exp()))
                    .collect(),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Self {
            a,
            s: (PI / a).sqrt(),
            kappa: al * rho_u / a,
            mf,
            cg,
            a2,
            s2: (PI / a2).sqrt(),
            fc: rho_u * (al + rg) / a2,
            kfac,
            kq,
            b,
            separable,
            exr,
            exi,
            ezr,
            ezi,
            ebx,
            ebz,
        }
    }

    #[inline]
    fn cross(&self, n: usize, l: usize, j: usize, delta: f64) -> f64 {
        if self.separable {
            let m = self.b.len();
            self.ebx[n * m + j] * self.ebz[l * m + j]
        } else {
            (self.b[j] * delta).exp()
        }
    }

    #[inline]
    fn value(&self, n: usize, l: usize, delta: f64) -> f64 {
        let nb = self.cg.len();
        let (xo, zo) = (n * nb, l * nb);
        let mut sum = 0.0;
        for i in 0..nb {
            let re = self.exr[xo + i] * self.ezr[zo + i] - self.exi[xo + i] * self.ezi[zo + i];
            sum += self.cg[i] * re;
        }
        let ha = self.s * (-self.kappa * delta * delta).exp() * sum;
        let mut tb = 0.0;
        for j in 0..self.kq.len() {
            tb += self.kq[j] * self.cross(n, l, j, delta);
        }
        ha + self.s2 * (-self.fc * delta * delta).exp() * tb
    }

    /// Accumulates w·∂H/∂(kernel params) into `acc` and returns (∂H/∂δ, ∂H/∂ρ_u), unscaled by w.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        k: &KernelPath<f64>,
        rho_u: f64,
        n: usize,
        l: usize,
        delta: f64,
        w: f64,
        acc: &mut DimAcc,
    ) -> (f64, f64, f64, f64) {
        let (al, rg) = (k.alpha, k.rho);
        let nb = self.cg.len();
        let (xo, zo) = (n * nb, l * nb);
        let a = self.a;
        let e = (-self.kappa * delta * delta).exp();
        let m = self.mf * delta;
        let (mut s_sum, mut s_m, mut s_a) = (0.0, 0.0, 0.0);
        let inv4a2 = 1.0 / (4.0 * a * a);
        let we = w * e;
        for i in 0..nb {
            let cs = self.exr[xo + i] * self.ezr[zo + i] - self.exi[xo + i] * self.ezi[zo + i];
            let sn = self.exr[xo + i] * self.ezi[zo + i] + self.exi[xo + i] * self.ezr[zo + i];
            let cg = self.cg[i];
            let th = k.theta[i];
            s_sum += cg * cs;
            s_m -= cg * th * sn;
            s_a += cg * cs * th * th * inv4a2;
            acc.cs[i] += we * cs;
            acc.msn[i] += we * m * sn;
        }
        let se = self.s * e;
        let ha = se * s_sum;
        let d2 = delta * delta;
        let mut d_delta = se * (-2.0 * self.kappa * delta * s_sum + self.mf * s_m);
        let mut d_alpha = ha * (-0.5 / a - rho_u * rho_u * d2 / (a * a)) + se * (s_a - s_m * rho_u * delta / (a * a));
        let mut d_rho_u = ha * (-0.5 / a - al * al * d2 / (a * a)) + se * (s_a + s_m * al * delta / (a * a));
        let mut d_rho_g = 0.0;

        let a2 = self.a2;
        let f = (-self.fc * d2).exp();
        let mut hb = 0.0;
        let (mut sa, mut sg, mut su, mut sd) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..k.q.len() {
            let z = k.z[j];
            let ej = self.kfac[j] * f * self.cross(n, l, j, delta);
            let qe = k.q[j] * ej;
            hb += qe;
            let zd = z - delta;
            let phi = al * rg * z * z + al * rho_u * d2 + rg * rho_u * zd * zd;
            let base = phi / (a2 * a2);
            acc.q[j] += w * self.s2 * ej;
            acc.z[j] += w * self.s2 * qe * (-(2.0 * al * rg * z + 2.0 * rg * rho_u * zd) / a2);
            sd += qe * (-(2.0 * al * rho_u * delta - 2.0 * rg * rho_u * zd) / a2);
            sa += qe * (base - (rg * z * z + rho_u * d2) / a2);
            sg += qe * (base - (al * z * z + rho_u * zd * zd) / a2);
            su += qe * (base - (al * d2 + rg * zd * zd) / a2);
        }
        let hb_full = self.s2 * hb;
        d_delta += self.s2 * sd;
        d_alpha += -hb_full / (2.0 * a2) + self.s2 * sa;
        d_rho_g += -hb_full / (2.0 * a2) + self.s2 * sg;
        d_rho_u += -hb_full / (2.0 * a2) + self.s2 * su;
        (d_delta, d_rho_u, d_alpha, d_rho_g)
    }
}

struct DimAcc {
    cs: Vec<f64>,
    msn: Vec<f64>,
    q: Vec<f64>,
    z: Vec<f64>,
    alpha: f64,
    rho: f64,
}

fn dim_tables(kernels: &[KernelPath<f64>], u: &InputPath<f64>, x: &[f64], n: usize) -> Vec<DimTable> {
    let p = u.dim;
    let m = u.q.len();
    (0..p)
        .map(|d| {
            let xs: Vec<f64> = (0..n).map(|r| x[r * p + d]).collect();
            let zs: Vec<f64> = (0..m).map(|l| u.z[l * p + d]).collect();
            DimTable::new(&kernels[d], u.rho[d], &xs, &zs)
        })
        .collect()
}

/// Canonical part per row, plus the H table (n, l, p) for the backward pass.
fn canonical_forward(kernels: &[KernelPath<f64>], u: &InputPath<f64>, x: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let p = u.dim;
    let m = u.q.len();
    let tables = dim_tables(kernels, u, x, n);
    let mut hvals = vec![0.0; n * m * p];
    let mut y = vec![0.0; n];
    for r in 0..n {
        let mut acc = 0.0;
        for l in 0..m {
            let mut prod = 1.0;
            for (d, t) in tables.iter().enumerate() {
                let h = t.value(r, l, x[r * p + d] - u.z[l * p + d]);
                hvals[(r * m + l) * p + d] = h;
                prod *= h;
            }
            acc += u.q[l] * prod;
        }
        y[r] = acc;
    }
    (y, hvals)
}

/// Adjoints of the canonical part, written in the order
/// [kernel 0 .. kernel P−1 | u.q | u.z | u.rho | x].
fn canonical_backward(
    kernels: &[KernelPath<f64>],
    u: &InputPath<f64>,
    x: &[f64],
    n: usize,
    hvals: &[f64],
    ybar: &[f64],
    out: &mut [f64],
) {
    let p = u.dim;
    let m = u.q.len();
    let tables = dim_tables(kernels, u, x, n);
    let mut accs: Vec<DimAcc> = kernels
        .iter()
        .map(|k| DimAcc {
            cs: vec![0.0; k.c.len()],
            msn: vec![0.0; k.c.len()],
            q: vec![0.0; k.q.len()],
            z: vec![0.0; k.q.len()],
            alpha: 0.0,
            rho: 0.0,
        })
        .collect();
    let mut g_uq = vec![0.0; m];
    let mut g_uz = vec![0.0; m * p];
    let mut g_urho = vec![0.0; p];
    let mut g_x = vec![0.0; n * p];

    for r in 0..n {
        let yb = ybar[r];
        if yb == 0.0 {
            continue;
        }
        for l in 0..m {
            let h = &hvals[(r * m + l) * p..(r * m + l + 1) * p];
            g_uq[l] += yb * h.iter().product::<f64>();
            if u.q[l] == 0.0 {
                continue;
            }
            for d in 0..p {
                let others: f64 = (0..p).filter(|&e| e != d).map(|e| h[e]).product();
                let w = yb * u.q[l] * others;
                if w == 0.0 {
                    continue;
                }
                let delta = x[r * p + d] - u.z[l * p + d];
                let (dd, dru, da, drg) = tables[d].backward(&kernels[d], u.rho[d], r, l, delta, w, &mut accs[d]);
                g_x[r * p + d] += w * dd;
                g_uz[l * p + d] -= w * dd;
                g_urho[d] += w * dru;
                accs[d].alpha += w * da;
                accs[d].rho += w * drg;
            }
        }
    }

    let mut off = 0;
    for (d, k) in kernels.iter().enumerate() {
        let t = &tables[d];
        let acc = &accs[d];
        let mut g = KernelGrad::zeros(k);
        g.alpha = acc.alpha;
        g.rho = acc.rho;
        for i in 0..k.c.len() {
            let gi = (-k.theta[i] * k.theta[i] / (4.0 * t.a)).exp();
            g.c[i] = t.s * gi * acc.cs[i];
            g.theta[i] = t.s * t.cg[i] * (-k.theta[i] / (2.0 * t.a) * acc.cs[i] - acc.msn[i]);
        }
        g.q.copy_from_slice(&acc.q);
        g.z.copy_from_slice(&acc.z);
        off += g.write(&mut out[off..]);
    }
    for v in g_uq.iter().chain(&g_uz).chain(&g_urho).chain(&g_x) {
        out[off] += v;
        off += 1;
    }
}

// ---------------------------------------------------------------------------
// Pair and layer assembly

/// ∫ ∏_p G_p(x_p − τ_p) u(τ) dτ at every row of x (row-major N×P).
fn conv_pair(kernels: &[KernelPath<f64>], u: &InputPath<f64>, x: &[f64], n: usize) -> Result<Vec<f64>> {
    let coef = rff_coefficients(kernels, u)?;
    let cre: Vec<f64> = coef.iter().map(|c| c.re).collect();
    let cim: Vec<f64> = coef.iter().map(|c| c.im).collect();
    let mut y = fourier_eval(&cre, &cim, &u.theta, u.dim, x, n);
    let (can, _) = canonical_forward(kernels, u, x, n);
    for (a, b) in y.iter_mut().zip(can) {
        *a += b;
    }
    Ok(y)
}

/// Layer output for every row of x (N×P), returned as N×D.
pub fn layer_output_sample(paths: &PathCoefficients<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    paths.validate()?;
    let p = paths.input_dim();
    if x.ncols() != p {
        return Err(structural(format!(
            "layer expects {p} input dimensions, inputs have {}",
            x.ncols()
        )));
    }
    let n = x.nrows();
    let xs = row_major(x);
    let qn = paths.latent_count();
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; paths.kernels.len() * qn];
    let mut out = DMatrix::zeros(n, paths.output_dim);
    for d in 0..paths.output_dim {
        let g = paths.kernel_set(d);
        for q in 0..qn {
            let slot = g * qn + q;
            if cache[slot].is_none() {
                cache[slot] = Some(conv_pair(&paths.kernels[g], &paths.inputs[q], &xs, n)?);
            }
            let h = cache[slot].as_ref().expect("filled above");
            let a = paths.mixing[paths.mixing_index(d, q)];
            for r in 0..n {
                out[(r, d)] += a * h[r];
            }
        }
    }
    Ok(out)
}

fn spectrum_tape<'t>(tape: &'t Tape, k: &KernelPath<Var<'t>>, omegas: &[Var<'t>]) -> Result<Vec<(Var<'t>, Var<'t>)>> {
    let kv = kernel_values(tape, k);
    let om = vals(tape, omegas);
    let mut out = Vec::with_capacity(2 * om.len());
    for &w in &om {
        let g = spectrum_checked(&kv, w)?;
        out.push(g.re);
        out.push(g.im);
    }
    let mut inputs = Vec::new();
    kernel_inputs(k, &mut inputs);
    let nk = inputs.len();
    inputs.extend_from_slice(omegas);
    let outs = tape.custom("kernel_spectrum", &inputs, out, move |ob, ib| {
        let mut acc = KernelGrad::zeros(&kv);
        for (j, &w) in om.iter().enumerate() {
            let gbar = Complex64::new(ob[2 * j], ob[2 * j + 1]);
            if gbar.re == 0.0 && gbar.im == 0.0 {
                continue;
            }
            ib[nk + j] += spectrum_backward(&kv, w, gbar, &mut acc);
        }
        acc.write(ib);
    });
    Ok(outs.chunks(2).map(|c| (c[0], c[1])).collect())
}

fn fourier_tape<'t>(
    tape: &'t Tape,
    cre: &[Var<'t>],
    cim: &[Var<'t>],
    theta: &[Var<'t>],
    p: usize,
    x: &[Var<'t>],
    n: usize,
) -> Vec<Var<'t>> {
    let (cr, ci, th, xv) = (vals(tape, cre), vals(tape, cim), vals(tape, theta), vals(tape, x));
    let y = fourier_eval(&cr, &ci, &th, p, &xv, n);
    let mut inputs = cre.to_vec();
    inputs.extend_from_slice(cim);
    inputs.extend_from_slice(theta);
    inputs.extend_from_slice(x);
    tape.custom("fourier_eval", &inputs, y, move |ob, ib| {
        fourier_backward(&cr, &ci, &th, p, &xv, ob, ib);
    })
}

fn canonical_tape<'t>(
    tape: &'t Tape,
    kernels: &[KernelPath<Var<'t>>],
    u: &InputPath<Var<'t>>,
    x: &[Var<'t>],
    n: usize,
) -> Vec<Var<'t>> {
    let kv: Vec<KernelPath<f64>> = kernels.iter().map(|k| kernel_values(tape, k)).collect();
    let uv = input_values(tape, u);
    let xv = vals(tape, x);
    let (y, hvals) = canonical_forward(&kv, &uv, &xv, n);
    let mut inputs = Vec::new();
    for k in kernels {
        kernel_inputs(k, &mut inputs);
    }
    inputs.extend_from_slice(&u.q);
    inputs.extend_from_slice(&u.z);
    inputs.extend_from_slice(&u.rho);
    inputs.extend_from_slice(x);
    tape.custom("canonical_conv", &inputs, y, move |ob, ib| {
        canonical_backward(&kv, &uv, &xv, n, &hvals, ob, ib);
    })
}

fn conv_pair_tape<'t>(
    tape: &'t Tape,
    kernels: &[KernelPath<Var<'t>>],
    u: &InputPath<Var<'t>>,
    x: &[Var<'t>],
    n: usize,
) -> Result<Vec<Var<'t>>> {
    let p = u.dim;
    let b = u.c.len();
    // C_k = c_k e^{iβ_k} ∏_p Ĝ_p(θ_kp), complex arithmetic on the tape.
    let mut re: Vec<Var<'t>> = (0..b).map(|k| u.c[k] * u.beta[k].cos()).collect();
    let mut im: Vec<Var<'t>> = (0..b).map(|k| u.c[k] * u.beta[k].sin()).collect();
    for (d, kern) in kernels.iter().enumerate() {
        let omegas: Vec<Var<'t>> = (0..b).map(|k| u.theta[k * p + d]).collect();
        let g = spectrum_tape(tape, kern, &omegas)?;
        for k in 0..b {
            let (gr, gi) = g[k];
            let nr = re[k] * gr - im[k] * gi;
            let ni = re[k] * gi + im[k] * gr;
            re[k] = nr;
            im[k] = ni;
        }
    }
    let rff = fourier_tape(tape, &re, &im, &u.theta, p, x, n);
    let can = canonical_tape(tape, kernels, u, x, n);
    Ok(rff.into_iter().zip(can).map(|(a, b)| a + b).collect())
}

/// Differentiable layer output. `x` is N×P row-major; the result is N×D row-major.
pub fn layer_output_tape<'t>(
    tape: &'t Tape,
    paths: &PathCoefficients<Var<'t>>,
    x: &[Var<'t>],
    n: usize,
) -> Result<Vec<Var<'t>>> {
    paths.validate()?;
    let p = paths.input_dim();
    if x.len() != n * p {
        return Err(structural(format!(
            "layer expects {n}x{p} inputs, got {} values",
            x.len()
        )));
    }
    let qn = paths.latent_count();
    let dn = paths.output_dim;
    let mut cache: Vec<Option<Vec<Var<'t>>>> = vec![None; paths.kernels.len() * qn];
    let mut out: Vec<Option<Var<'t>>> = vec![None; n * dn];
    for d in 0..dn {
        let g = paths.kernel_set(d);
        for q in 0..qn {
            let slot = g * qn + q;
            if cache[slot].is_none() {
                cache[slot] = Some(conv_pair_tape(tape, &paths.kernels[g], &paths.inputs[q], x, n)?);
            }
            let h = cache[slot].as_ref().expect("filled above");
            let a = paths.mixing[paths.mixing_index(d, q)];
            for r in 0..n {
                let term = a * h[r];
                let cell = &mut out[r * dn + d];
                *cell = Some(match *cell {
                    Some(acc) => acc + term,
                    None => term,
                });
            }
        }
    }
    Ok(out
        .into_iter()
        .map(|v| v.expect("every output receives a term"))
        .collect())
}
