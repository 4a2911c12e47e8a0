//! Computation record for reverse-mode differentiation.
//!
//! Every operation appends a node to a [`Graph`]; nodes can only reference
//! earlier nodes, so the node list is already in topological order and
//! [`Graph::backward`] is a single reverse sweep.

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    /// `ln(max(x, floor))`
    Log(Var, f64),
    Exp(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// An append-only record of tensor operations.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies the current value of `v` into a new constant leaf (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, if `v` took part in it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let rg = self.requires_grad(a);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(value, op, rg)
    }

    /// Shapes must be equal, or one side must hold a single element.
    fn elementwise(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.same_shape(tb) {
            Ok(ta.zip_map(tb, f))
        } else if tb.numel() == 1 {
            let s = tb.item();
            Ok(ta.map(|x| f(x, s)))
        } else if ta.numel() == 1 {
            let s = ta.item();
            Ok(tb.map(|x| f(s, x)))
        } else {
            Err(Error::Shape {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise("add", a, b, |x, y| x + y)?;
        Ok(self.binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise("sub", a, b, |x, y| x - y)?;
        Ok(self.binary(a, b, v, Op::Sub(a, b)))
    }

    /// Hadamard product (or tensor times a one-element tensor).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise("mul", a, b, |x, y| x * y)?;
        Ok(self.binary(a, b, v, Op::Mul(a, b)))
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.unary(a, v, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(a, b, v, Op::MatMul(a, b)))
    }

    /// `max(x, 0)`; the subgradient at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.unary(a, v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.unary(a, v, Op::Tanh(a))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.unary(a, v, Op::Sum(a))
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.numel() as f64);
        self.unary(a, v, Op::Mean(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.ln_floor(a, 0.0)
    }

    /// `ln(max(x, floor))`; no gradient flows where `x < floor`.
    pub fn ln_floor(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a).map(|x| x.max(floor).ln());
        self.unary(a, v, Op::Log(a, floor))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.unary(a, v, Op::Exp(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a).softmax(axis)?;
        Ok(self.unary(a, v, Op::Softmax(a, axis)))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a).log_softmax(axis)?;
        Ok(self.unary(a, v, Op::LogSoftmax(a, axis)))
    }

    /// Fills in `grad` for every node that requires a gradient and is
    /// reachable from `loss`. Gradients from multiple uses of a node add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let contributions = self.local_grads(i, &g)?;
            for (input, contrib) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (x, y) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *x += y;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let out = &node.value;
        Ok(match node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![
                (a, self.reduce_to(a, g.clone())),
                (b, self.reduce_to(b, g.clone())),
            ],
            Op::Sub(a, b) => vec![
                (a, self.reduce_to(a, g.clone())),
                (b, self.reduce_to(b, g.map(|x| -x))),
            ],
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                vec![
                    (a, self.reduce_to(a, broadcast_mul(g, tb))),
                    (b, self.reduce_to(b, broadcast_mul(g, ta))),
                ]
            }
            Op::Scale(a, c) => vec![(a, g.map(|x| x * c))],
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                vec![
                    (a, g.matmul(&tb.transpose())?),
                    (b, ta.transpose().matmul(g)?),
                ]
            }
            Op::Relu(a) => vec![(
                a,
                self.value(a)
                    .zip_map(g, |x, gy| if x > 0.0 { gy } else { 0.0 }),
            )],
            Op::Tanh(a) => vec![(a, out.zip_map(g, |y, gy| gy * (1.0 - y * y)))],
            Op::Sum(a) => vec![(a, Tensor::full(self.value(a).shape(), g.item()))],
            Op::Mean(a) => {
                let t = self.value(a);
                vec![(a, Tensor::full(t.shape(), g.item() / t.numel() as f64))]
            }
            Op::Log(a, floor) => vec![(
                a,
                self.value(a)
                    .zip_map(g, |x, gy| if x >= floor { gy / x } else { 0.0 }),
            )],
            Op::Exp(a) => vec![(a, out.zip_map(g, |y, gy| gy * y))],
            Op::Softmax(a, axis) => {
                // dx = y * (g - sum_axis(g * y))
                let (outer, len, inner) = out.axis_split("softmax", axis)?;
                let mut dx = vec![0.0; out.numel()];
                let (y, gy) = (out.data(), g.data());
                for o in 0..outer {
                    for k in 0..inner {
                        let idx = |c: usize| (o * len + c) * inner + k;
                        let dot: f64 = (0..len).map(|c| gy[idx(c)] * y[idx(c)]).sum();
                        for c in 0..len {
                            dx[idx(c)] = y[idx(c)] * (gy[idx(c)] - dot);
                        }
                    }
                }
                vec![(a, Tensor::new(out.shape().to_vec(), dx)?)]
            }
            Op::LogSoftmax(a, axis) => {
                // dx = g - softmax(x) * sum_axis(g)
                let (outer, len, inner) = out.axis_split("log_softmax", axis)?;
                let mut dx = vec![0.0; out.numel()];
                let (y, gy) = (out.data(), g.data());
                for o in 0..outer {
                    for k in 0..inner {
                        let idx = |c: usize| (o * len + c) * inner + k;
                        let total: f64 = (0..len).map(|c| gy[idx(c)]).sum();
                        for c in 0..len {
                            dx[idx(c)] = gy[idx(c)] - y[idx(c)].exp() * total;
                        }
                    }
                }
                vec![(a, Tensor::new(out.shape().to_vec(), dx)?)]
            }
        })
    }

    /// Sums a full-shape gradient down to a one-element input when that
    /// input was broadcast.
    fn reduce_to(&self, input: Var, g: Tensor) -> Tensor {
        let t = self.value(input);
        if t.numel() == 1 && g.numel() != 1 {
            Tensor::full(t.shape(), g.sum())
        } else {
            g
        }
    }
}

fn broadcast_mul(g: &Tensor, other: &Tensor) -> Tensor {
    if other.same_shape(g) {
        g.zip_map(other, |x, y| x * y)
    } else {
        let s = other.item();
        g.map(|x| x * s)
    }
}
