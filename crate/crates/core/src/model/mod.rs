//! Weight-shared multi-branch network.
//!
//! Layers are numbered `1..=K`. Layers `1..=K'` form the trunk, stored once
//! and used by every branch; layers `K'+1..=K` are repeated per branch as
//! that branch's head. With `K' = 0` the model is `m` independent networks,
//! with `K' = K - 1` only the output layer differs between branches.

mod checkpoint;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::tensor::{Graph, Tensor, Var};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `K + 1` sizes: input, hidden layers, output.
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    /// Number of shared bottom layers `K'`.
    pub share_depth: usize,
    pub num_branches: usize,
    pub task: Task,
}

impl ModelSpec {
    /// Total number of layers `K`.
    pub fn depth(&self) -> usize {
        self.layer_dims.len().saturating_sub(1)
    }

    pub fn head_depth(&self) -> usize {
        self.depth() - self.share_depth
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated spec")
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.layer_dims.len() < 2 {
            problems.push("layer_dims needs at least an input and an output size".to_string());
        }
        if self.layer_dims.contains(&0) {
            problems.push(format!("layer_dims {:?} contains a zero size", self.layer_dims));
        }
        if self.share_depth > self.depth() {
            problems.push(format!(
                "share_depth {} exceeds depth {}",
                self.share_depth,
                self.depth()
            ));
        }
        if self.num_branches == 0 {
            problems.push("num_branches must be at least 1".into());
        }
        if let Some(&out) = self.layer_dims.last() {
            match self.task {
                Task::Classification if out < 2 => {
                    problems.push("classification needs an output size of at least 2".into())
                }
                Task::Regression if out != 1 => {
                    problems.push("regression needs an output size of 1".into())
                }
                _ => {}
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Spec(problems.join("; ")))
        }
    }

    fn layer_params(&self, k: usize) -> usize {
        let (i, o) = (self.layer_dims[k - 1], self.layer_dims[k]);
        i * o + o
    }

    pub fn trunk_param_count(&self) -> usize {
        (1..=self.share_depth).map(|k| self.layer_params(k)).sum()
    }

    pub fn head_param_count(&self) -> usize {
        (self.share_depth + 1..=self.depth())
            .map(|k| self.layer_params(k))
            .sum()
    }

    /// `count(trunk) + m * count(one head)`, excluding any gate logits.
    pub fn param_count(&self) -> usize {
        self.trunk_param_count() + self.num_branches * self.head_param_count()
    }
}

/// Fully connected layer `y = x W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut rng::Rng) -> Self {
        let bound = match activation {
            Activation::Relu => (6.0 / fan_in as f64).sqrt(),
            Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        };
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::new(vec![fan_in, fan_out], w).expect("sized"),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }
}

/// One perturbation injected after a layer's activation.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerPerturbation {
    /// `h + delta`
    Additive(Tensor),
    /// `h * mask`; a mask is the additive perturbation `(mask - 1) * h`.
    Mask(Tensor),
}

impl LayerPerturbation {
    fn tensor(&self) -> &Tensor {
        match self {
            Self::Additive(t) | Self::Mask(t) => t,
        }
    }
}

/// Perturbations `Delta_j` of one branch: optional input-level entry plus
/// entries keyed by hidden layer `k` in `1..K`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerturbationSet {
    pub input: Option<LayerPerturbation>,
    pub layers: BTreeMap<usize, LayerPerturbation>,
}

impl PerturbationSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_none() && self.layers.is_empty()
    }
}

/// Graph handles for one binding of an [`EnsembleModel`]'s parameters.
#[derive(Clone, Debug)]
pub struct BoundModel {
    trunk: Vec<(Var, Var)>,
    heads: Vec<Vec<(Var, Var)>>,
    gates: Option<Var>,
}

impl BoundModel {
    /// Parameter handles in [`EnsembleModel::param_names`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for &(w, b) in self.trunk.iter().chain(self.heads.iter().flatten()) {
            out.push(w);
            out.push(b);
        }
        out.extend(self.gates);
        out
    }

    pub fn gates(&self) -> Option<Var> {
        self.gates
    }

    /// Gradients in parameter order; parameters untouched by the last
    /// backward pass get zeros.
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        self.vars()
            .into_iter()
            .map(|v| {
                g.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct EnsembleModel {
    spec: ModelSpec,
    trunk: Vec<Linear>,
    heads: Vec<Vec<Linear>>,
    /// ONE-style gate logits, `[1, m]`.
    gates: Option<Tensor>,
    trunk_evals: AtomicU64,
}

impl Clone for EnsembleModel {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            trunk: self.trunk.clone(),
            heads: self.heads.clone(),
            gates: self.gates.clone(),
            trunk_evals: AtomicU64::new(self.trunk_evals.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for EnsembleModel {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.trunk == other.trunk
            && self.heads == other.heads
            && self.gates == other.gates
    }
}

impl EnsembleModel {
    /// Trunk drawn from `seed`; head `j` drawn from `seed + j`.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut trunk_rng = rng::substream(seed, &[domain::TRUNK_INIT]);
        let trunk = (1..=spec.share_depth)
            .map(|k| {
                Linear::init(
                    spec.layer_dims[k - 1],
                    spec.layer_dims[k],
                    spec.activation,
                    &mut trunk_rng,
                )
            })
            .collect();
        let heads = (0..spec.num_branches)
            .map(|j| {
                let mut head_rng = rng::substream(seed.wrapping_add(j as u64), &[domain::HEAD_INIT]);
                (spec.share_depth + 1..=spec.depth())
                    .map(|k| {
                        Linear::init(
                            spec.layer_dims[k - 1],
                            spec.layer_dims[k],
                            spec.activation,
                            &mut head_rng,
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            spec,
            trunk,
            heads,
            gates: None,
            trunk_evals: AtomicU64::new(0),
        })
    }

    /// Adds `m` learnable gate logits, initialized to zero (uniform gates).
    pub fn with_gates(mut self) -> Self {
        self.gates = Some(Tensor::zeros(&[1, self.spec.num_branches]));
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_branches(&self) -> usize {
        self.spec.num_branches
    }

    pub fn trunk(&self) -> &[Linear] {
        &self.trunk
    }

    pub fn head(&self, j: usize) -> &[Linear] {
        &self.heads[j]
    }

    pub fn gates(&self) -> Option<&Tensor> {
        self.gates.as_ref()
    }

    /// Layers `1..=K` as seen by branch `j`; the trunk entries are the
    /// shared storage itself.
    pub fn branch_layers(&self, j: usize) -> Vec<&Linear> {
        self.trunk.iter().chain(self.heads[j].iter()).collect()
    }

    /// Makes every head a copy of head `from`.
    pub fn tie_heads_to(&mut self, from: usize) {
        let src = self.heads[from].clone();
        for h in &mut self.heads {
            h.clone_from(&src);
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// `trunk.layer{k}.W`, `head{j}.layer{k}.b`, ... with global layer
    /// numbers `k` and 0-based branch index `j`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for k in 1..=self.spec.share_depth {
            names.push(format!("trunk.layer{k}.W"));
            names.push(format!("trunk.layer{k}.b"));
        }
        for j in 0..self.spec.num_branches {
            for k in self.spec.share_depth + 1..=self.spec.depth() {
                names.push(format!("head{j}.layer{k}.W"));
                names.push(format!("head{j}.layer{k}.b"));
            }
        }
        if self.gates.is_some() {
            names.push("gates".into());
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in self.trunk.iter().chain(self.heads.iter().flatten()) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.extend(self.gates.as_ref());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in self.trunk.iter_mut().chain(self.heads.iter_mut().flatten()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.extend(self.gates.as_mut());
        out
    }

    /// Indices (into [`params`](Self::params)) of the trunk parameters.
    pub fn trunk_param_indices(&self) -> std::ops::Range<usize> {
        0..2 * self.trunk.len()
    }

    /// Indices of head `j`'s parameters.
    pub fn head_param_indices(&self, j: usize) -> std::ops::Range<usize> {
        let per_head = 2 * self.spec.head_depth();
        let start = 2 * self.trunk.len() + j * per_head;
        start..start + per_head
    }

    /// Registers every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let mut layer = |l: &Linear| (leaf(&l.weight), leaf(&l.bias));
        let trunk = self.trunk.iter().map(&mut layer).collect();
        let heads = self
            .heads
            .iter()
            .map(|h| h.iter().map(&mut layer).collect())
            .collect();
        let gates = self.gates.as_ref().map(|t| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        });
        BoundModel {
            trunk,
            heads,
            gates,
        }
    }

    /// Number of trunk passes made so far.
    pub fn trunk_evaluations(&self) -> u64 {
        self.trunk_evals.load(Ordering::Relaxed)
    }

    /// Layers `1..=K'`, with input perturbation and any perturbation on
    /// trunk-layer outputs.
    pub fn forward_trunk(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        x: Var,
        delta: &PerturbationSet,
    ) -> Result<Var> {
        self.trunk_evals.fetch_add(1, Ordering::Relaxed);
        let mut h = match &delta.input {
            Some(p) => apply(g, x, p, 0)?,
            None => x,
        };
        if let Some(&bad) = delta.layers.keys().find(|&&k| k == 0 || k >= self.spec.depth()) {
            return Err(Error::Perturbation {
                layer: bad,
                msg: format!("layer index outside 1..{}", self.spec.depth()),
            });
        }
        for (i, &(w, b)) in bound.trunk.iter().enumerate() {
            h = self.layer(g, h, w, b, i + 1, delta)?;
        }
        Ok(h)
    }

    /// Layers `K'+1..=K` of branch `j`, starting from trunk output `h`.
    pub fn forward_head(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        j: usize,
        mut h: Var,
        delta: &PerturbationSet,
    ) -> Result<Var> {
        if j >= self.spec.num_branches {
            return Err(Error::Contract(format!(
                "branch {j} out of range for {} branches",
                self.spec.num_branches
            )));
        }
        for (i, &(w, b)) in bound.heads[j].iter().enumerate() {
            h = self.layer(g, h, w, b, self.spec.share_depth + i + 1, delta)?;
        }
        Ok(h)
    }

    /// Logits `g(x; theta_j, Delta_j)` of branch `j`.
    pub fn forward_branch(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        j: usize,
        x: Var,
        delta: &PerturbationSet,
    ) -> Result<Var> {
        let h = self.forward_trunk(g, bound, x, delta)?;
        self.forward_head(g, bound, j, h, delta)
    }

    fn layer(
        &self,
        g: &mut Graph,
        h: Var,
        w: Var,
        b: Var,
        k: usize,
        delta: &PerturbationSet,
    ) -> Result<Var> {
        let n = g.value(h).rows();
        let xw = g.matmul(h, w)?;
        // bias broadcast over rows as ones[n,1] x b[1,out]
        let ones = g.constant(Tensor::ones(&[n, 1]));
        let bias = g.matmul(ones, b)?;
        let mut out = g.add(xw, bias)?;
        if k < self.spec.depth() {
            out = match self.spec.activation {
                Activation::Relu => g.relu(out),
                Activation::Tanh => g.tanh(out),
            };
            if let Some(p) = delta.layers.get(&k) {
                out = apply(g, out, p, k)?;
            }
        }
        Ok(out)
    }

    /// Plain forward of branch `j` with no perturbation, outside any graph.
    pub fn logits(&self, j: usize, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward_branch(&mut g, &bound, j, xv, &PerturbationSet::none())?;
        Ok(g.value(out).clone())
    }
}

fn apply(g: &mut Graph, h: Var, p: &LayerPerturbation, layer: usize) -> Result<Var> {
    let t = p.tensor();
    if g.value(h).shape() != t.shape() {
        return Err(Error::Perturbation {
            layer,
            msg: format!(
                "perturbation shape {:?} does not match representation shape {:?}",
                t.shape(),
                g.value(h).shape()
            ),
        });
    }
    let c = g.constant(t.clone());
    match p {
        LayerPerturbation::Additive(_) => g.add(h, c),
        LayerPerturbation::Mask(_) => g.mul(h, c),
    }
}
