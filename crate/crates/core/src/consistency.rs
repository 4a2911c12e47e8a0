//! Distances between branch predictions, the logits ensemble, and the two
//! consistency regularizers built from them.
//!
//! All graph-level functions take per-branch logits of shape `[n, C]` and
//! return a `[1]` node holding the batch mean. With [`Metric::SymmetricKl`]
//! the logits are turned into distributions with a softmax; with
//! [`Metric::SquaredEuclidean`] the logits (or regression outputs) are
//! compared directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    None,
    Ensemble,
    Pairwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SymmetricKl,
    SquaredEuclidean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsistencySpec {
    pub kind: Kind,
    pub metric: Metric,
    pub alpha: f64,
    /// Ensemble weights; uniform `1/m` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Treat the ensemble target as a constant.
    pub detach_target: bool,
}

impl Default for ConsistencySpec {
    fn default() -> Self {
        Self {
            kind: Kind::Ensemble,
            metric: Metric::SymmetricKl,
            alpha: 1.0,
            weights: None,
            detach_target: true,
        }
    }
}

impl ConsistencySpec {
    pub fn weights_for(&self, m: usize) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / m as f64; m])
    }

    pub fn problems(&self, m: usize) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.alpha >= 0.0) {
            out.push(format!("consistency.alpha: must be >= 0, got {}", self.alpha));
        }
        if let Some(w) = &self.weights {
            if let Err(e) = check_weights(w, m) {
                out.push(format!("consistency.weights: {e}"));
            }
        }
        if self.kind == Kind::Pairwise && m < 2 {
            out.push("consistency.kind: pairwise consistency needs at least 2 branches".into());
        }
        out
    }
}

pub fn check_weights(w: &[f64], m: usize) -> Result<()> {
    if w.len() != m {
        return Err(Error::Contract(format!("{} weights for {m} branches", w.len())));
    }
    if w.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Contract(format!("weights {w:?} must be non-negative")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::Contract(format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Contract("distribution has negative entries".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("distribution sums to {s}")));
    }
    Ok(())
}

/// `(KL(P||Q) + KL(Q||P)) / 2`. Zero-probability terms contribute zero to
/// their own KL; a zero on the other side is clamped to [`PROB_FLOOR`].
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Contract(format!(
            "symmetric_kl of lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let half_sum: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| (a - b) * (a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln()))
        .sum();
    Ok(0.5 * half_sum)
}

fn check_same_shapes(g: &Graph, logits: &[Var]) -> Result<()> {
    let first = g.value(logits[0]).shape();
    for &l in &logits[1..] {
        if g.value(l).shape() != first {
            return Err(Error::Shape {
                op: "consistency",
                lhs: first.to_vec(),
                rhs: g.value(l).shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Batch-mean symmetric KL between row distributions `p` and `q`.
pub fn symmetric_kl_rows(g: &mut Graph, p: Var, q: Var) -> Result<Var> {
    let n = g.value(p).rows() as f64;
    let diff = g.sub(p, q)?;
    let lp = g.ln_floor(p, PROB_FLOOR);
    let lq = g.ln_floor(q, PROB_FLOOR);
    let ldiff = g.sub(lp, lq)?;
    let terms = g.mul(diff, ldiff)?;
    let total = g.sum(terms);
    Ok(g.scale(total, 0.5 / n))
}

/// Batch-mean squared Euclidean distance between rows of `a` and `b`.
pub fn squared_euclidean_rows(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let n = g.value(a).rows() as f64;
    let diff = g.sub(a, b)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq);
    Ok(g.scale(total, 1.0 / n))
}

/// `D(a, b)` for two logit tensors under `metric`.
pub fn distance(g: &mut Graph, metric: Metric, a: Var, b: Var) -> Result<Var> {
    match metric {
        Metric::SymmetricKl => {
            let pa = g.softmax(a, 1)?;
            let pb = g.softmax(b, 1)?;
            symmetric_kl_rows(g, pa, pb)
        }
        Metric::SquaredEuclidean => squared_euclidean_rows(g, a, b),
    }
}

/// `sum_j w_j g_j`.
pub fn ensemble_logits(g: &mut Graph, logits: &[Var], w: &[f64]) -> Result<Var> {
    if logits.is_empty() {
        return Err(Error::Contract("ensemble of zero branches".into()));
    }
    check_weights(w, logits.len())?;
    check_same_shapes(g, logits)?;
    let mut acc = g.scale(logits[0], w[0]);
    for (&l, &wj) in logits.iter().zip(w).skip(1) {
        let s = g.scale(l, wj);
        acc = g.add(acc, s)?;
    }
    Ok(acc)
}

/// `sum_j gate_j g_j` where `gates` is a `[1, m]` node of weights.
pub fn gated_ensemble_logits(g: &mut Graph, logits: &[Var], gates: Var) -> Result<Var> {
    let m = logits.len();
    if g.value(gates).numel() != m {
        return Err(Error::Shape {
            op: "gated_ensemble",
            lhs: g.value(gates).shape().to_vec(),
            rhs: vec![m],
        });
    }
    check_same_shapes(g, logits)?;
    let mut acc = None;
    for (j, &l) in logits.iter().enumerate() {
        let mut pick = Tensor::zeros(&[m, 1]);
        pick.data_mut()[j] = 1.0;
        let pick = g.constant(pick);
        let wj = g.matmul(gates, pick)?;
        let term = g.mul(l, wj)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(acc.expect("m >= 1"))
}

/// `softmax(sum_j w_j g_j)` as a tensor.
pub fn ensemble_distribution(logits: &[Tensor], w: &[f64]) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars: Vec<Var> = logits.iter().map(|t| g.constant(t.clone())).collect();
    let e = ensemble_logits(&mut g, &vars, w)?;
    g.value(e).softmax(g.value(e).shape().len() - 1)
}

/// `(1/m) sum_j D(g_j, E)` with `E` the `w`-weighted logits ensemble.
pub fn ensemble_consistency(
    g: &mut Graph,
    logits: &[Var],
    w: &[f64],
    metric: Metric,
    detach_target: bool,
) -> Result<Var> {
    let mut target = ensemble_logits(g, logits, w)?;
    if detach_target {
        target = g.detach(target);
    }
    mean_distance_to(g, logits, target, metric)
}

/// `(1/m) sum_j D(g_j, target)`.
pub fn mean_distance_to(g: &mut Graph, logits: &[Var], target: Var, metric: Metric) -> Result<Var> {
    let mut acc = None;
    for &l in logits {
        let d = distance(g, metric, l, target)?;
        acc = Some(match acc {
            None => d,
            Some(a) => g.add(a, d)?,
        });
    }
    let total = acc.ok_or_else(|| Error::Contract("consistency over zero branches".into()))?;
    Ok(g.scale(total, 1.0 / logits.len() as f64))
}

/// `2 / (m (m - 1)) sum_{j < p} D(g_j, g_p)`.
pub fn pairwise_consistency(g: &mut Graph, logits: &[Var], metric: Metric) -> Result<Var> {
    let m = logits.len();
    if m < 2 {
        return Err(Error::Contract(format!(
            "pairwise consistency needs at least 2 branches, got {m}"
        )));
    }
    check_same_shapes(g, logits)?;
    let mut acc = None;
    for j in 0..m {
        for p in j + 1..m {
            let d = distance(g, metric, logits[j], logits[p])?;
            acc = Some(match acc {
                None => d,
                Some(a) => g.add(a, d)?,
            });
        }
    }
    Ok(g.scale(acc.expect("m >= 2"), 2.0 / (m * (m - 1)) as f64))
}

/// The regularizer selected by `spec`, or `None` for [`Kind::None`].
pub fn regularizer(g: &mut Graph, spec: &ConsistencySpec, logits: &[Var]) -> Result<Option<Var>> {
    match spec.kind {
        Kind::None => Ok(None),
        Kind::Ensemble => {
            let w = spec.weights_for(logits.len());
            ensemble_consistency(g, logits, &w, spec.metric, spec.detach_target).map(Some)
        }
        Kind::Pairwise => pairwise_consistency(g, logits, spec.metric).map(Some),
    }
}

fn eval(logits: &[Tensor], f: impl FnOnce(&mut Graph, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = logits.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Value of [`ensemble_consistency`] on plain tensors.
pub fn ensemble_consistency_value(logits: &[Tensor], w: &[f64], metric: Metric) -> Result<f64> {
    eval(logits, |g, v| ensemble_consistency(g, v, w, metric, true))
}

/// Value of [`pairwise_consistency`] on plain tensors.
pub fn pairwise_consistency_value(logits: &[Tensor], metric: Metric) -> Result<f64> {
    eval(logits, |g, v| pairwise_consistency(g, v, metric))
}
