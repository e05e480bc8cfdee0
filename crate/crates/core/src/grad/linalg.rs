//! Dense matrix blocks with analytic adjoints.
//!
//! All matrices are row-major grids of tape nodes. Each operation records a
//! single custom block, so an M x M Cholesky factor costs one closure rather
//! than O(M^3) scalar nodes.

use nalgebra::DMatrix;

use super::{Tape, Var};
use crate::error::{numeric, structural, Result};

/// Row-major matrix of tape nodes.
#[derive(Clone)]
pub struct VarMatrix<'t> {
    tape: &'t Tape,
    rows: usize,
    cols: usize,
    data: Vec<Var<'t>>,
}

impl<'t> VarMatrix<'t> {
    pub fn from_vars(tape: &'t Tape, rows: usize, cols: usize, data: Vec<Var<'t>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(structural(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { tape, rows, cols, data })
    }

    pub fn constant(tape: &'t Tape, m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(tape.constant(m[(i, j)]));
            }
        }
        Self {
            tape,
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    /// Column vector.
    pub fn column(tape: &'t Tape, v: Vec<Var<'t>>) -> Self {
        Self {
            tape,
            rows: v.len(),
            cols: 1,
            data: v,
        }
    }

    /// Lower-triangular matrix from its packed row-major lower entries; the
    /// strict upper part is a shared constant zero.
    pub fn lower_from_packed(tape: &'t Tape, n: usize, packed: &[Var<'t>]) -> Result<Self> {
        if packed.len() != n * (n + 1) / 2 {
            return Err(structural(format!(
                "packed lower factor of order {n} needs {} entries, got {}",
                n * (n + 1) / 2,
                packed.len()
            )));
        }
        let zero = tape.constant(0.0);
        let mut data = vec![zero; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in 0..=i {
                data[i * n + j] = packed[k];
                k += 1;
            }
        }
        Ok(Self {
            tape,
            rows: n,
            cols: n,
            data,
        })
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Var<'t> {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[Var<'t>] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<Var<'t>> {
        self.data
    }

    pub fn values(&self) -> DMatrix<f64> {
        let vals = self.tape.values(&self.data);
        DMatrix::from_row_slice(self.rows, self.cols, &vals)
    }

    /// Packed row-major lower triangle, including the diagonal.
    pub fn lower_packed(&self) -> Vec<Var<'t>> {
        let mut out = Vec::with_capacity(self.rows * (self.rows + 1) / 2);
        for i in 0..self.rows {
            for j in 0..=i.min(self.cols.saturating_sub(1)) {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<Var<'t>> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self {
            tape: self.tape,
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    fn require_square(&self, what: &str) -> Result<()> {
        if self.rows != self.cols {
            return Err(structural(format!(
                "{what} needs a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }
}

fn packed_to_lower(n: usize, packed: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = packed[k];
            k += 1;
        }
    }
    l
}

fn write_lower_packed(m: &DMatrix<f64>, out: &mut [f64]) {
    let mut k = 0;
    for i in 0..m.nrows() {
        for j in 0..=i {
            out[k] += m[(i, j)];
            k += 1;
        }
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn solve_l(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b).expect("factor checked non-singular")
}

fn solve_lt(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.tr_solve_lower_triangular(b).expect("factor checked non-singular")
}

fn check_factor(l: &DMatrix<f64>) -> Result<()> {
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return Err(numeric(format!("triangular factor has diagonal entry {d} at {i}")));
        }
    }
    Ok(())
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if let Some(x) = m.iter().find(|x| !x.is_finite()) {
        return Err(numeric(format!("{what} contains non-finite value {x}")));
    }
    Ok(())
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
///
/// Only the lower triangle is read. The adjoint is returned symmetrically,
/// so parameters that feed both K[i][j] and K[j][i] receive the correct total.
pub fn cholesky<'t>(k: &VarMatrix<'t>) -> Result<VarMatrix<'t>> {
    k.require_square("cholesky")?;
    let n = k.rows;
    let kv = k.values();
    check_finite(&kv, "cholesky input")?;
    let sym = DMatrix::from_fn(n, n, |i, j| if i >= j { kv[(i, j)] } else { kv[(j, i)] });
    let chol =
        nalgebra::Cholesky::new(sym).ok_or_else(|| numeric(format!("matrix of order {n} is not positive definite")))?;
    let l = chol.l();
    let mut packed = vec![0.0; n * (n + 1) / 2];
    write_lower_packed(&l, &mut packed);

    let outs = k.tape.custom("cholesky", &k.data, packed, move |out, inp| {
        let lbar = packed_to_lower(n, out);
        let mut p = l.transpose() * &lbar;
        for i in 0..n {
            for j in (i + 1)..n {
                p[(i, j)] = 0.0;
            }
            p[(i, i)] *= 0.5;
        }
        let c = (&p + p.transpose()) * 0.5;
        // K̄ = L^-T C L^-1
        let x = solve_lt(&l, &c);
        let kbar = solve_lt(&l, &x.transpose()).transpose();
        for i in 0..n {
            for j in 0..n {
                inp[i * n + j] += kbar[(i, j)];
            }
        }
    });
    VarMatrix::lower_from_packed(k.tape, n, &outs)
}

fn solve_inputs<'t>(l: &VarMatrix<'t>, b: &VarMatrix<'t>, what: &str) -> Result<Vec<Var<'t>>> {
    l.require_square(what)?;
    if b.rows != l.rows {
        return Err(structural(format!(
            "{what}: factor of order {} cannot solve a {}x{} right-hand side",
            l.rows, b.rows, b.cols
        )));
    }
    let mut inputs = l.lower_packed();
    inputs.extend_from_slice(&b.data);
    Ok(inputs)
}

/// X = L^-1 B for lower-triangular L.
pub fn solve_lower<'t>(l: &VarMatrix<'t>, b: &VarMatrix<'t>) -> Result<VarMatrix<'t>> {
    let inputs = solve_inputs(l, b, "solve_lower")?;
    let (n, m) = (b.rows, b.cols);
    let lv = l.values().lower_triangle();
    check_factor(&lv)?;
    let x = solve_l(&lv, &b.values());
    check_finite(&x, "solve_lower result")?;
    let out = row_major(&x);
    let np = n * (n + 1) / 2;
    let outs = l.tape.custom("solve_lower", &inputs, out, move |out, inp| {
        let xbar = DMatrix::from_row_slice(n, m, out);
        let bbar = solve_lt(&lv, &xbar);
        let lbar = -(&bbar * x.transpose());
        write_lower_packed(&lbar, &mut inp[..np]);
        for (slot, v) in inp[np..].iter_mut().zip(row_major(&bbar)) {
            *slot += v;
        }
    });
    VarMatrix::from_vars(l.tape, n, m, outs)
}

/// X = L^-T B for lower-triangular L.
pub fn solve_lower_transpose<'t>(l: &VarMatrix<'t>, b: &VarMatrix<'t>) -> Result<VarMatrix<'t>> {
    let inputs = solve_inputs(l, b, "solve_lower_transpose")?;
    let (n, m) = (b.rows, b.cols);
    let lv = l.values().lower_triangle();
    check_factor(&lv)?;
    let x = solve_lt(&lv, &b.values());
    check_finite(&x, "solve_lower_transpose result")?;
    let out = row_major(&x);
    let np = n * (n + 1) / 2;
    let outs = l.tape.custom("solve_lower_transpose", &inputs, out, move |out, inp| {
        let xbar = DMatrix::from_row_slice(n, m, out);
        let bbar = solve_l(&lv, &xbar);
        let lbar = -(&x * bbar.transpose());
        write_lower_packed(&lbar, &mut inp[..np]);
        for (slot, v) in inp[np..].iter_mut().zip(row_major(&bbar)) {
            *slot += v;
        }
    });
    VarMatrix::from_vars(l.tape, n, m, outs)
}

/// Matrix product A B.
pub fn matmul<'t>(a: &VarMatrix<'t>, b: &VarMatrix<'t>) -> Result<VarMatrix<'t>> {
    if a.cols != b.rows {
        return Err(structural(format!(
            "matmul shape mismatch: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let av = a.values();
    let bv = b.values();
    let c = &av * &bv;
    let mut inputs = a.data.clone();
    inputs.extend_from_slice(&b.data);
    let outs = a.tape.custom("matmul", &inputs, row_major(&c), move |out, inp| {
        let cbar = DMatrix::from_row_slice(n, m, out);
        let abar = &cbar * bv.transpose();
        let bbar = av.transpose() * &cbar;
        for (slot, v) in inp[..n * k].iter_mut().zip(row_major(&abar)) {
            *slot += v;
        }
        for (slot, v) in inp[n * k..].iter_mut().zip(row_major(&bbar)) {
            *slot += v;
        }
    });
    VarMatrix::from_vars(a.tape, n, m, outs)
}

/// Sum of squared entries.
pub fn sum_squares<'t>(tape: &'t Tape, xs: &[Var<'t>]) -> Var<'t> {
    let vals = tape.values(xs);
    let total = vals.iter().map(|x| x * x).sum();
    tape.custom("sum_squares", xs, vec![total], move |out, inp| {
        for (slot, x) in inp.iter_mut().zip(&vals) {
            *slot += 2.0 * x * out[0];
        }
    })[0]
}

/// Sum of log |L_ii|.
pub fn log_diag_sum<'t>(l: &VarMatrix<'t>) -> Result<Var<'t>> {
    l.require_square("log_diag_sum")?;
    let diag = l.diagonal();
    let vals = l.tape.values(&diag);
    if let Some(d) = vals.iter().find(|d| **d == 0.0 || !d.is_finite()) {
        return Err(numeric(format!("log of diagonal entry {d}")));
    }
    let total = vals.iter().map(|d| d.abs().ln()).sum();
    Ok(l.tape.custom("log_diag_sum", &diag, vec![total], move |out, inp| {
        for (slot, d) in inp.iter_mut().zip(&vals) {
            *slot += out[0] / d;
        }
    })[0])
}
