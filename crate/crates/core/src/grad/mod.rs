//! Reverse-mode differentiation on a scalar tape.
//!
//! Every value is a scalar node. Elementary operations record their local
//! partial derivatives; heavier blocks (Cholesky factorisation, triangular
//! solves, kernel matrices, the convolution integrals) are recorded as custom
//! operations that own an analytic vector-Jacobian product.  Nodes are
//! appended in evaluation order, so the tape is topologically sorted by
//! construction and a single reverse sweep visits each node once.

mod adam;
mod check;
pub mod linalg;
mod ops;

use std::cell::RefCell;
use std::fmt;

use crate::error::{numeric, structural, Result};

pub use adam::{adam_step, AdamState};
pub use check::{finite_diff_check, GradCheck};
pub use linalg::{cholesky, log_diag_sum, matmul, solve_lower, solve_lower_transpose, sum_squares, VarMatrix};

/// Index of a trainable leaf, assigned in creation order.
pub type ParamId = usize;

type Backward = Box<dyn Fn(&[f64], &mut [f64])>;

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Unary { a: u32, da: f64 },
    Binary { a: u32, da: f64, b: u32, db: f64 },
    Custom { op: u32 },
}

struct CustomOp {
    name: &'static str,
    inputs: Vec<u32>,
    out_start: u32,
    out_len: u32,
    backward: Option<Backward>,
}

#[derive(Default)]
struct Inner {
    values: Vec<f64>,
    needs_grad: Vec<bool>,
    ops: Vec<Op>,
    customs: Vec<CustomOp>,
    params: Vec<u32>,
}

/// Append-only computation graph.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a scalar node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.idx, self.value())
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.tape.inner.borrow().values[self.idx as usize]
    }

    pub fn index(&self) -> usize {
        self.idx as usize
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().needs_grad[self.idx as usize]
    }
}

/// Gradient of a scalar root with respect to every parameter leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(Vec<f64>);

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Gradients(vec![0.0; n])
    }

    pub fn get(&self, id: ParamId) -> f64 {
        self.0[id]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Merge gradients of an independent graph over the same parameter ids.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if other.len() != self.len() {
            return Err(structural(format!(
                "gradient maps have different lengths ({} vs {})",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_params(&self) -> usize {
        self.inner.borrow().params.len()
    }

    fn push(&self, value: f64, needs_grad: bool, op: Op) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.values.len() as u32;
        inner.values.push(value);
        inner.needs_grad.push(needs_grad);
        inner.ops.push(op);
        Var { tape: self, idx }
    }

    /// A trainable leaf. Its [`ParamId`] is the number of parameters created before it.
    pub fn param(&self, value: f64) -> Var<'_> {
        let v = self.push(value, true, Op::Leaf);
        self.inner.borrow_mut().params.push(v.idx);
        v
    }

    pub fn params(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&x| self.param(x)).collect()
    }

    /// A leaf that never accumulates gradient.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(value, false, Op::Leaf)
    }

    pub fn constants(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&x| self.constant(x)).collect()
    }

    pub(crate) fn unary<'t>(&'t self, a: Var<'t>, value: f64, da: f64) -> Var<'t> {
        let ng = a.requires_grad();
        let op = if ng { Op::Unary { a: a.idx, da } } else { Op::Leaf };
        self.push(value, ng, op)
    }

    pub(crate) fn binary<'t>(&'t self, a: Var<'t>, da: f64, b: Var<'t>, db: f64, value: f64) -> Var<'t> {
        let (ga, gb) = (a.requires_grad(), b.requires_grad());
        let op = match (ga, gb) {
            (false, false) => Op::Leaf,
            (true, false) => Op::Unary { a: a.idx, da },
            (false, true) => Op::Unary { a: b.idx, da: db },
            (true, true) => Op::Binary {
                a: a.idx,
                da,
                b: b.idx,
                db,
            },
        };
        self.push(value, ga || gb, op)
    }

    /// Record a block operation with an analytic vector-Jacobian product.
    ///
    /// `backward(out_adj, in_adj)` receives the adjoints of all outputs and must
    /// add the corresponding contributions into `in_adj` (zero-initialised,
    /// one slot per input).  The closure is dropped when no input requires a
    /// gradient.
    pub fn custom<'t, F>(
        &'t self,
        name: &'static str,
        inputs: &[Var<'t>],
        outputs: Vec<f64>,
        backward: F,
    ) -> Vec<Var<'t>>
    where
        F: Fn(&[f64], &mut [f64]) + 'static,
    {
        let needs_grad = inputs.iter().any(|v| v.requires_grad());
        let mut inner = self.inner.borrow_mut();
        let out_start = inner.values.len() as u32;
        let op = inner.customs.len() as u32;
        let out_len = outputs.len() as u32;
        inner.customs.push(CustomOp {
            name,
            inputs: if needs_grad {
                inputs.iter().map(|v| v.idx).collect()
            } else {
                Vec::new()
            },
            out_start,
            out_len,
            backward: if needs_grad { Some(Box::new(backward)) } else { None },
        });
        let node_op = if needs_grad { Op::Custom { op } } else { Op::Leaf };
        for value in outputs {
            inner.values.push(value);
            inner.needs_grad.push(needs_grad);
            inner.ops.push(node_op);
        }
        drop(inner);
        (0..out_len)
            .map(|k| Var {
                tape: self,
                idx: out_start + k,
            })
            .collect()
    }

    /// Sum of many nodes as a single block.
    pub fn sum<'t>(&'t self, xs: &[Var<'t>]) -> Var<'t> {
        if xs.is_empty() {
            return self.constant(0.0);
        }
        let total = xs.iter().map(|v| v.value()).sum();
        let n = xs.len();
        self.custom("sum", xs, vec![total], move |out, inp| {
            for slot in inp.iter_mut().take(n) {
                *slot += out[0];
            }
        })[0]
    }

    /// Inner product with a constant vector.
    pub fn dot_const<'t>(&'t self, xs: &[Var<'t>], w: &[f64]) -> Var<'t> {
        assert_eq!(xs.len(), w.len(), "dot_const length mismatch");
        let total = xs.iter().zip(w).map(|(v, c)| v.value() * c).sum();
        let w = w.to_vec();
        self.custom("dot_const", xs, vec![total], move |out, inp| {
            for (slot, c) in inp.iter_mut().zip(&w) {
                *slot += out[0] * c;
            }
        })[0]
    }

    /// Current values of a slice of nodes.
    pub fn values(&self, xs: &[Var<'_>]) -> Vec<f64> {
        let inner = self.inner.borrow();
        xs.iter().map(|v| inner.values[v.idx as usize]).collect()
    }

    /// Fails with a numeric error naming the first non-finite node among `xs`.
    pub fn check_finite(&self, xs: &[Var<'_>], what: &str) -> Result<()> {
        let inner = self.inner.borrow();
        for v in xs {
            let x = inner.values[v.idx as usize];
            if !x.is_finite() {
                return Err(numeric(format!(
                    "non-finite value {x} in {what} at node #{} ({})",
                    v.idx,
                    inner.describe(v.idx)
                )));
            }
        }
        Ok(())
    }

    /// Reverse sweep from a scalar root.
    ///
    /// Returns d(root)/d(p) for every parameter leaf created on this tape;
    /// parameters the root does not depend on get 0.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(root.tape, self) {
            return Err(structural("root belongs to a different tape"));
        }
        let inner = self.inner.borrow();
        let r = root.idx as usize;
        let mut adj = vec![0.0; r + 1];
        adj[r] = 1.0;
        let mut in_buf: Vec<f64> = Vec::new();

        for i in (0..=r).rev() {
            if !inner.needs_grad[i] {
                continue;
            }
            let g = adj[i];
            match inner.ops[i] {
                Op::Leaf => {}
                Op::Unary { a, da } => {
                    if g == 0.0 {
                        continue;
                    }
                    inner.check_node(i, g)?;
                    let a = a as usize;
                    if a >= i {
                        return Err(inner.cycle(i, a));
                    }
                    adj[a] += g * da;
                }
                Op::Binary { a, da, b, db } => {
                    if g == 0.0 {
                        continue;
                    }
                    inner.check_node(i, g)?;
                    let (a, b) = (a as usize, b as usize);
                    if a >= i || b >= i {
                        return Err(inner.cycle(i, a.max(b)));
                    }
                    adj[a] += g * da;
                    adj[b] += g * db;
                }
                Op::Custom { op } => {
                    let c = &inner.customs[op as usize];
                    if i != c.out_start as usize {
                        continue;
                    }
                    let start = c.out_start as usize;
                    let end = (start + c.out_len as usize).min(r + 1);
                    let out_adj = &adj[start..end];
                    if out_adj.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    for (k, &g) in out_adj.iter().enumerate() {
                        if g != 0.0 {
                            inner.check_node(start + k, g)?;
                        }
                    }
                    let mut full_adj;
                    let out_adj = if end - start < c.out_len as usize {
                        full_adj = vec![0.0; c.out_len as usize];
                        full_adj[..end - start].copy_from_slice(out_adj);
                        &full_adj[..]
                    } else {
                        full_adj = out_adj.to_vec();
                        &full_adj[..]
                    };
                    in_buf.clear();
                    in_buf.resize(c.inputs.len(), 0.0);
                    if let Some(bw) = &c.backward {
                        bw(out_adj, &mut in_buf);
                    }
                    for (&input, &d) in c.inputs.iter().zip(&in_buf) {
                        let input = input as usize;
                        if input >= start {
                            return Err(inner.cycle(i, input));
                        }
                        if inner.needs_grad[input] {
                            adj[input] += d;
                        }
                    }
                }
            }
        }

        let grads = inner
            .params
            .iter()
            .map(|&p| {
                let p = p as usize;
                if p <= r {
                    adj[p]
                } else {
                    0.0
                }
            })
            .collect::<Vec<_>>();
        if let Some((id, g)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(numeric(format!("non-finite gradient {g} for parameter {id}")));
        }
        Ok(Gradients(grads))
    }
}

impl Inner {
    fn describe(&self, i: u32) -> String {
        match self.ops[i as usize] {
            Op::Leaf => "leaf".into(),
            Op::Unary { .. } => "unary op".into(),
            Op::Binary { .. } => "binary op".into(),
            Op::Custom { op } => format!("block '{}'", self.customs[op as usize].name),
        }
    }

    fn check_node(&self, i: usize, adj: f64) -> Result<()> {
        let v = self.values[i];
        if !v.is_finite() || !adj.is_finite() {
            return Err(numeric(format!(
                "non-finite value {v} (adjoint {adj}) at node #{i} ({})",
                self.describe(i as u32)
            )));
        }
        Ok(())
    }

    fn cycle(&self, node: usize, parent: usize) -> crate::error::Error {
        structural(format!(
            "cycle detected: node #{node} ({}) depends on later node #{parent}",
            self.describe(node as u32)
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let tape = Tape::new();
        let x = tape.param(3.0);
        let y = x * x;
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(0), 6.0);
    }

    #[test]
    fn identity_derivative() {
        let tape = Tape::new();
        let x = tape.param(5.0);
        let g = tape.backward(x).unwrap();
        assert_eq!(g.get(0), 1.0);
    }

    #[test]
    fn exp_sin_matches_central_difference() {
        let f = |x: f64| x.sin().exp() * x;
        let x0 = 0.7;
        let tape = Tape::new();
        let x = tape.param(x0);
        let y = x.sin().exp() * x;
        let ad = tape.backward(y).unwrap().get(0);
        let h = 1e-5;
        let fd = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
        assert!(((ad - fd) / fd).abs() < 1e-6, "ad {ad} fd {fd}");
    }

    #[test]
    fn unreachable_params_have_zero_gradient() {
        let tape = Tape::new();
        let x = tape.param(2.0);
        let _unused = tape.param(4.0);
        let later = tape.param(1.0);
        let y = x * 3.0;
        let _after = y + later;
        let g = tape.backward(y).unwrap();
        assert_eq!(g.as_slice(), &[3.0, 0.0, 0.0]);
    }

    #[test]
    fn constants_never_accumulate() {
        let tape = Tape::new();
        let c = tape.constant(2.0);
        let x = tape.param(1.5);
        let y = c * x + c.exp();
        assert!(!c.requires_grad());
        assert!(!c.exp().requires_grad());
        let g = tape.backward(y).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(0), 2.0);
    }

    #[test]
    fn non_finite_value_is_reported() {
        let tape = Tape::new();
        let x = tape.param(-1.0);
        let y = x.ln() * 2.0;
        let err = tape.backward(y).unwrap_err();
        assert!(matches!(err, crate::Error::Numeric(_)), "{err}");
    }

    #[test]
    fn forged_cycle_is_structural_error() {
        let tape = Tape::new();
        let x = tape.param(1.0);
        let y = x * 2.0;
        let out = tape.custom("forged", &[y, x], vec![1.0], |o, i| {
            i[0] += o[0];
            i[1] += o[0];
        });
        // Rewire the block so that it consumes its own output.
        tape.inner.borrow_mut().customs.last_mut().unwrap().inputs[0] = out[0].idx;
        let err = tape.backward(out[0]).unwrap_err();
        assert!(matches!(err, crate::Error::Structural(_)), "{err}");
    }

    #[test]
    fn custom_block_receives_all_output_adjoints() {
        let tape = Tape::new();
        let a = tape.param(2.0);
        let b = tape.param(3.0);
        // outputs (a*b, a+b)
        let (av, bv) = (a.value(), b.value());
        let outs = tape.custom("pair", &[a, b], vec![av * bv, av + bv], move |o, i| {
            i[0] += o[0] * bv + o[1];
            i[1] += o[0] * av + o[1];
        });
        let y = outs[0] * 2.0 + outs[1] * outs[1];
        let g = tape.backward(y).unwrap();
        // y = 2ab + (a+b)^2
        assert_eq!(g.get(0), 2.0 * 3.0 + 2.0 * 5.0);
        assert_eq!(g.get(1), 2.0 * 2.0 + 2.0 * 5.0);
    }

    #[test]
    fn merging_gradient_maps_sums() {
        let mut a = Gradients(vec![1.0, 2.0]);
        a.accumulate(&Gradients(vec![0.5, -1.0])).unwrap();
        assert_eq!(a.as_slice(), &[1.5, 1.0]);
        assert!(a.accumulate(&Gradients(vec![1.0])).is_err());
    }
}
