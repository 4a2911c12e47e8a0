use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adamax,
}

impl OptimizerKind {
    pub fn default_betas(self) -> [f64; 2] {
        match self {
            OptimizerKind::Sgd => [0.0, 0.0],
            OptimizerKind::Adam => [0.9, 0.98],
            OptimizerKind::Adamax => [0.9, 0.999],
        }
    }
}

pub const ADAM_EPS: f64 = 1e-8;

/// Moment buffers of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    /// Exponential average of the gradient.
    pub first: Tensor,
    /// Squared-gradient average (adam) or infinity norm (adamax).
    pub second: Tensor,
    /// Updates applied to this parameter so far.
    pub t: u64,
}

impl Moments {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            first: Tensor::zeros(shape),
            second: Tensor::zeros(shape),
            t: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub slots: Vec<Moments>,
}

impl OptimizerState {
    pub fn for_params(params: &[&Tensor]) -> Self {
        Self {
            slots: params.iter().map(|p| Moments::zeros(p.shape())).collect(),
        }
    }
}

fn check(param: &Tensor, grad: &Tensor) -> Result<()> {
    if !param.same_shape(grad) {
        return Err(Error::Shape {
            op: "optimizer",
            lhs: param.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    check(param, grad)?;
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

pub fn adam_step(param: &mut Tensor, grad: &Tensor, slot: &mut Moments, lr: f64, betas: [f64; 2]) -> Result<()> {
    check(param, grad)?;
    let [b1, b2] = betas;
    slot.t += 1;
    let c1 = 1.0 - b1.powi(slot.t as i32);
    let c2 = 1.0 - b2.powi(slot.t as i32);
    let m = slot.first.data_mut();
    let v = slot.second.data_mut();
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        *p -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Adam with the infinity norm: `u = max(b2 u, |g|)`, step
/// `lr / (1 - b1^t) * m / u`. Entries with `u = 0` have seen only zero
/// gradients and are left alone.
pub fn adamax_step(param: &mut Tensor, grad: &Tensor, slot: &mut Moments, lr: f64, betas: [f64; 2]) -> Result<()> {
    check(param, grad)?;
    let [b1, b2] = betas;
    slot.t += 1;
    let step = lr / (1.0 - b1.powi(slot.t as i32));
    let m = slot.first.data_mut();
    let u = slot.second.data_mut();
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        u[i] = (b2 * u[i]).max(g.abs());
        if u[i] > 0.0 {
            *p -= step * m[i] / u[i];
        }
    }
    Ok(())
}

/// An optimizer bound to one model's parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub betas: [f64; 2],
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, betas: Option<[f64; 2]>, params: &[&Tensor]) -> Self {
        Self {
            kind,
            lr,
            betas: betas.unwrap_or_else(|| kind.default_betas()),
            state: OptimizerState::for_params(params),
        }
    }

    /// Updates the parameters at `indices`. Every gradient is checked
    /// before any parameter changes.
    pub fn step(
        &mut self,
        mut params: Vec<&mut Tensor>,
        grads: &[Tensor],
        indices: impl IntoIterator<Item = usize> + Clone,
        names: &[String],
        step: u64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.state.slots.len() {
            return Err(Error::Contract(format!(
                "optimizer holds {} slots but got {} parameters and {} gradients",
                self.state.slots.len(),
                params.len(),
                grads.len()
            )));
        }
        for i in indices.clone() {
            if !grads[i].is_finite() {
                let name = names.get(i).map_or("?", String::as_str);
                return Err(Error::Numeric(format!("non-finite gradient for {name} at step {step}")));
            }
        }
        for i in indices {
            let (p, g, slot) = (&mut *params[i], &grads[i], &mut self.state.slots[i]);
            match self.kind {
                OptimizerKind::Sgd => {
                    slot.t += 1;
                    sgd_step(p, g, self.lr)?
                }
                OptimizerKind::Adam => adam_step(p, g, slot, self.lr, self.betas)?,
                OptimizerKind::Adamax => adamax_step(p, g, slot, self.lr, self.betas)?,
            }
        }
        Ok(())
    }
}
