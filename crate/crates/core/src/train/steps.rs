//! One update of each training procedure.
//!
//! Every step function samples its perturbations from the streams of
//! `(config.seed, step)`, builds a fresh graph over the model parameters,
//! runs a single backward pass per update, and returns the step's losses.

use super::{Optimizer, StepLog, TrainConfig};
use crate::consistency::{self, Kind};
use crate::data::{Batch, Targets};
use crate::error::{Error, Result};
use crate::model::{BoundModel, EnsembleModel, PerturbationSet};
use crate::perturb::{sample_branch, StreamKey};
use crate::tensor::{Graph, Tensor, Var};

/// Mean cross-entropy of `logits` `[n, C]` against integer labels.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = g.value(logits).shape().to_vec();
    let (n, c) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(Error::Contract(format!("{} labels for {n} rows", labels.len())));
    }
    let mut onehot = Tensor::zeros(&[n, c]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Contract(format!("label {y} out of range for {c} classes")));
        }
        onehot.data_mut()[i * c + y] = 1.0;
    }
    let onehot = g.constant(onehot);
    let ls = g.log_softmax(logits, 1)?;
    let picked = g.mul(onehot, ls)?;
    let total = g.sum(picked);
    Ok(g.scale(total, -1.0 / n as f64))
}

/// Cross-entropy for classes, mean squared error for values.
pub fn task_loss(g: &mut Graph, logits: Var, y: &Targets) -> Result<Var> {
    match y {
        Targets::Classes { labels, .. } => cross_entropy(g, logits, labels),
        Targets::Values(v) => {
            let t = g.constant(Tensor::new(vec![v.len(), 1], v.clone())?);
            let diff = g.sub(logits, t)?;
            let sq = g.mul(diff, diff)?;
            Ok(g.mean(sq))
        }
    }
}

fn sum(g: &mut Graph, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(acc)
}

fn mean(g: &mut Graph, vars: &[Var]) -> Result<Var> {
    let s = sum(g, vars)?;
    Ok(g.scale(s, 1.0 / vars.len() as f64))
}

/// `task + alpha * reg`; the regularizer stays out of the graph's loss
/// when `alpha` is zero.
fn combine(g: &mut Graph, task: Var, reg: Option<Var>, alpha: f64) -> Result<Var> {
    match reg {
        Some(r) if alpha != 0.0 => {
            let w = g.scale(r, alpha);
            g.add(task, w)
        }
        _ => Ok(task),
    }
}

fn item(g: &Graph, v: Option<Var>) -> f64 {
    v.map_or(0.0, |v| g.value(v).item())
}

fn sample_all(model: &EnsembleModel, batch: &Batch, config: &TrainConfig, step: u64) -> Result<Vec<PerturbationSet>> {
    let key = StreamKey {
        seed: config.seed,
        step,
    };
    (0..model.num_branches())
        .map(|j| sample_branch(&config.perturbation, model, j, &batch.x, key))
        .collect()
}

/// Per-branch logits. The trunk is evaluated once when no branch
/// perturbs it, otherwise once per branch.
fn forward_all(
    model: &EnsembleModel,
    g: &mut Graph,
    bound: &BoundModel,
    x: Var,
    deltas: &[PerturbationSet],
) -> Result<Vec<Var>> {
    let share = model.spec().share_depth;
    let trunk_clean = deltas
        .iter()
        .all(|d| d.input.is_none() && d.layers.keys().all(|&k| k > share));
    if trunk_clean {
        let h = model.forward_trunk(g, bound, x, &PerturbationSet::none())?;
        deltas
            .iter()
            .enumerate()
            .map(|(j, d)| model.forward_head(g, bound, j, h, d))
            .collect()
    } else {
        deltas
            .iter()
            .enumerate()
            .map(|(j, d)| model.forward_branch(g, bound, j, x, d))
            .collect()
    }
}

fn update(
    model: &mut EnsembleModel,
    opt: &mut Optimizer,
    grads: &[Tensor],
    indices: impl IntoIterator<Item = usize> + Clone,
    step: u64,
) -> Result<()> {
    let names = model.param_names();
    opt.step(model.params_mut(), grads, indices, &names, step)
}

fn all_params(model: &EnsembleModel) -> std::ops::Range<usize> {
    0..model.params().len()
}

/// `L + alpha R` with per-branch perturbations and a single update of the
/// trunk and all heads.
pub fn camero_step(
    model: &mut EnsembleModel,
    opt: &mut Optimizer,
    batch: &Batch,
    config: &TrainConfig,
    step: u64,
) -> Result<StepLog> {
    let deltas = sample_all(model, batch, config, step)?;
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let x = g.constant(batch.x.clone());
    let logits = forward_all(model, &mut g, &bound, x, &deltas)?;
    let losses = logits
        .iter()
        .map(|&l| task_loss(&mut g, l, &batch.y))
        .collect::<Result<Vec<_>>>()?;
    let task = mean(&mut g, &losses)?;
    let reg = consistency::regularizer(&mut g, &config.consistency, &logits)?;
    let total = combine(&mut g, task, reg, config.alpha())?;
    g.backward(total)?;
    let grads = bound.grads(&g);
    let log = StepLog {
        step,
        task_loss: g.value(task).item(),
        consistency_loss: item(&g, reg),
        total_loss: g.value(total).item(),
    };
    update(model, opt, &grads, all_params(model), step)?;
    Ok(log)
}

/// Independent models, each on its own task loss. The consistency loss is
/// logged for diagnostics only.
pub fn vanilla_step(
    model: &mut EnsembleModel,
    opt: &mut Optimizer,
    batch: &Batch,
    config: &TrainConfig,
    step: u64,
) -> Result<StepLog> {
    let deltas = sample_all(model, batch, config, step)?;
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let x = g.constant(batch.x.clone());
    let logits = forward_all(model, &mut g, &bound, x, &deltas)?;
    let losses = logits
        .iter()
        .map(|&l| task_loss(&mut g, l, &batch.y))
        .collect::<Result<Vec<_>>>()?;
    // the sum gives every model exactly the gradient of its own loss
    let total = sum(&mut g, &losses)?;
    let task = mean(&mut g, &losses)?;
    let reg = match config.consistency.kind {
        Kind::None => None,
        _ if logits.len() < 2 => None,
        _ => consistency::regularizer(&mut g, &config.consistency, &logits)?,
    };
    g.backward(total)?;
    let grads = bound.grads(&g);
    let task_loss = g.value(task).item();
    let log = StepLog {
        step,
        task_loss,
        consistency_loss: item(&g, reg),
        total_loss: task_loss,
    };
    update(model, opt, &grads, all_params(model), step)?;
    Ok(log)
}

/// Two models updated in turn, each toward the other's detached output.
pub fn dml_step(
    model: &mut EnsembleModel,
    opt: &mut Optimizer,
    batch: &Batch,
    config: &TrainConfig,
    step: u64,
) -> Result<StepLog> {
    if model.num_branches() != 2 {
        return Err(Error::Config(vec![format!(
            "model.num_branches: dml trains exactly 2 models, got {}",
            model.num_branches()
        )]));
    }
    let deltas = sample_all(model, batch, config, step)?;
    let alpha = config.alpha();
    let (mut task, mut cons) = (0.0, 0.0);
    for (a, b) in [(0, 1), (1, 0)] {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let x = g.constant(batch.x.clone());
        let fa = model.forward_branch(&mut g, &bound, a, x, &deltas[a])?;
        let fb = model.forward_branch(&mut g, &bound, b, x, &deltas[b])?;
        let fb = g.detach(fb);
        let la = task_loss(&mut g, fa, &batch.y)?;
        let d = consistency::distance(&mut g, config.consistency.metric, fa, fb)?;
        let total = combine(&mut g, la, Some(d), alpha)?;
        g.backward(total)?;
        let grads = bound.grads(&g);
        task += g.value(la).item() / 2.0;
        cons += g.value(d).item() / 2.0;
        update(model, opt, &grads, model.head_param_indices(a), step)?;
    }
    Ok(StepLog {
        step,
        task_loss: task,
        consistency_loss: cons,
        total_loss: task + alpha * cons,
    })
}

/// Joint step pulling every model toward the detached logits ensemble.
pub fn kdcl_step(
    model: &mut EnsembleModel,
    opt: &mut Optimizer,
    batch: &Batch,
    config: &TrainConfig,
    step: u64,
) -> Result<StepLog> {
    let deltas = sample_all(model, batch, config, step)?;
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let x = g.constant(batch.x.clone());
    let logits = forward_all(model, &mut g, &bound, x, &deltas)?;
    let losses = logits
        .iter()
        .map(|&l| task_loss(&mut g, l, &batch.y))
        .collect::<Result<Vec<_>>>()?;
    let task = mean(&mut g, &losses)?;
    let w = config.consistency.weights_for(logits.len());
    let reg = consistency::ensemble_consistency(&mut g, &logits, &w, config.consistency.metric, true)?;
    let total = combine(&mut g, task, Some(reg), config.alpha())?;
    g.backward(total)?;
    let grads = bound.grads(&g);
    let log = StepLog {
        step,
        task_loss: g.value(task).item(),
        consistency_loss: g.value(reg).item(),
        total_loss: g.value(total).item(),
    };
    update(model, opt, &grads, all_params(model), step)?;
    Ok(log)
}

/// Shared trunk, one perturbation realization for all branches, and a
/// gated teacher `sum_j softmax(gates)_j g_j` that is trained on the labels
/// and distilled into every branch. The logged task loss includes the
/// teacher's term.
pub fn one_step(
    model: &mut EnsembleModel,
    opt: &mut Optimizer,
    batch: &Batch,
    config: &TrainConfig,
    step: u64,
) -> Result<StepLog> {
    let key = StreamKey {
        seed: config.seed,
        step,
    };
    let delta = sample_branch(&config.perturbation, model, 0, &batch.x, key)?;
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let gates = bound
        .gates()
        .ok_or_else(|| Error::Contract("one_step needs a model with gate logits".into()))?;
    let x = g.constant(batch.x.clone());
    let h = model.forward_trunk(&mut g, &bound, x, &delta)?;
    let logits = (0..model.num_branches())
        .map(|j| model.forward_head(&mut g, &bound, j, h, &delta))
        .collect::<Result<Vec<_>>>()?;
    let losses = logits
        .iter()
        .map(|&l| task_loss(&mut g, l, &batch.y))
        .collect::<Result<Vec<_>>>()?;
    let branch_task = mean(&mut g, &losses)?;
    let gate_w = g.softmax(gates, 1)?;
    let teacher = consistency::gated_ensemble_logits(&mut g, &logits, gate_w)?;
    let teacher_loss = task_loss(&mut g, teacher, &batch.y)?;
    let task = g.add(branch_task, teacher_loss)?;
    let target = g.detach(teacher);
    let reg = consistency::mean_distance_to(&mut g, &logits, target, config.consistency.metric)?;
    let total = combine(&mut g, task, Some(reg), config.alpha())?;
    g.backward(total)?;
    let grads = bound.grads(&g);
    let log = StepLog {
        step,
        task_loss: g.value(task).item(),
        consistency_loss: g.value(reg).item(),
        total_loss: g.value(total).item(),
    };
    update(model, opt, &grads, all_params(model), step)?;
    Ok(log)
}
