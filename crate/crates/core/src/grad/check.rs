use super::{Tape, Var};
use crate::error::{numeric, structural, Result};

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compare reverse-mode gradients of `f` at `x` with central differences of step `h`.
///
/// The reported error is the maximum over components of |ad - fd| / (|fd| + 1e-12).
/// The step for component i is `h * max(|x_i|, 1)`.
pub fn finite_diff_check<F>(f: F, x: &[f64], h: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if x.is_empty() {
        return Err(structural("gradient check needs at least one parameter"));
    }
    if !(h > 0.0) {
        return Err(structural(format!("finite-difference step must be positive, got {h}")));
    }
    let eval = |pt: &[f64]| -> Result<f64> {
        let tape = Tape::new();
        let vars = tape.params(pt);
        let y = f(&tape, &vars)?.value();
        if !y.is_finite() {
            return Err(numeric(format!("objective is {y} at a perturbed point")));
        }
        Ok(y)
    };

    let tape = Tape::new();
    let vars = tape.params(x);
    let y = f(&tape, &vars)?;
    let analytic = tape.backward(y)?.into_vec();

    let mut fd = Vec::with_capacity(x.len());
    let mut pt = x.to_vec();
    for i in 0..x.len() {
        let step = h * x[i].abs().max(1.0);
        pt[i] = x[i] + step;
        let up = eval(&pt)?;
        pt[i] = x[i] - step;
        let down = eval(&pt)?;
        pt[i] = x[i];
        fd.push((up - down) / (2.0 * step));
    }

    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for i in 0..x.len() {
        let rel = (analytic[i] - fd[i]).abs() / (fd[i].abs() + 1e-12);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = i;
        }
    }
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric: fd,
    })
}
