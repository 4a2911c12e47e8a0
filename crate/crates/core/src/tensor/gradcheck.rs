//! Central finite differences, used as an independent oracle for
//! [`Graph::backward`](super::Graph::backward).

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
///
/// `f` is evaluated twice at `x` first; differing results mean `f` is not
/// deterministic and the oracle refuses to answer.
pub fn finite_diff_gradient<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Oracle(format!("step must be positive, got {h}")));
    }
    let (a, b) = (f(x)?, f(x)?);
    if a.to_bits() != b.to_bits() {
        return Err(Error::Oracle(format!(
            "function is not deterministic: {a} then {b}"
        )));
    }
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Worst disagreement between a backward gradient and the finite-difference
/// oracle for a scalar function built by `build` from one input.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Every coordinate is within `rel_tol` relative OR `abs_tol` absolute.
    pub passed: bool,
}

pub fn check_gradient<B>(build: B, x: &Tensor, h: f64, rel_tol: f64, abs_tol: f64) -> Result<GradCheck>
where
    B: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let loss = build(&mut g, xv)?;
    g.backward(loss)?;
    let analytic = g
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let numeric = finite_diff_gradient(
        |t| {
            let mut g = Graph::new();
            let xv = g.constant(t.clone());
            let loss = build(&mut g, xv)?;
            Ok(g.value(loss).item())
        },
        x,
        h,
    )?;

    let mut out = GradCheck {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        passed: true,
    };
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let abs = (a - n).abs();
        let rel = abs / n.abs().max(a.abs()).max(f64::MIN_POSITIVE);
        out.max_abs_err = out.max_abs_err.max(abs);
        out.max_rel_err = out.max_rel_err.max(rel);
        if abs > abs_tol && rel > rel_tol {
            out.passed = false;
        }
    }
    Ok(out)
}
