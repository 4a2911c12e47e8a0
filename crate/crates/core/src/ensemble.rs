//! Inference-time logits ensembling. Perturbations are always off here.

use crate::consistency;
use crate::error::{Error, Result};
use crate::model::{EnsembleModel, PerturbationSet, Task};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePrediction {
    pub branch_logits: Vec<Tensor>,
    /// `sum_j w_j g_j`.
    pub logits: Tensor,
    /// Row-wise softmax of `logits`; `None` for regression.
    pub distribution: Option<Tensor>,
    /// Argmax of `logits`; `None` for regression.
    pub labels: Option<Vec<usize>>,
}

impl EnsemblePrediction {
    /// Scalar predictions of a regression ensemble.
    pub fn values(&self) -> Vec<f64> {
        self.logits.data().to_vec()
    }

    /// Argmax labels of each branch.
    pub fn branch_labels(&self) -> Vec<Vec<usize>> {
        self.branch_logits.iter().map(Tensor::argmax_rows).collect()
    }
}

fn check_input(model: &EnsembleModel, x: &Tensor) -> Result<()> {
    let d = model.spec().input_dim();
    if x.shape().len() != 2 || x.cols() != d {
        return Err(Error::Contract(format!(
            "input of shape {:?} does not match model input width {d}",
            x.shape()
        )));
    }
    Ok(())
}

fn finish(task: Task, branch_logits: Vec<Tensor>, w: &[f64]) -> Result<EnsemblePrediction> {
    let mut g = Graph::new();
    let vars: Vec<Var> = branch_logits.iter().map(|t| g.constant(t.clone())).collect();
    let e = consistency::ensemble_logits(&mut g, &vars, w)?;
    let logits = g.value(e).clone();
    let (distribution, labels) = match task {
        Task::Classification => (Some(logits.softmax(1)?), Some(logits.argmax_rows())),
        Task::Regression => (None, None),
    };
    Ok(EnsemblePrediction {
        branch_logits,
        logits,
        distribution,
        labels,
    })
}

fn branch_logits(model: &EnsembleModel, x: &Tensor) -> Result<Vec<Tensor>> {
    check_input(model, x)?;
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let none = PerturbationSet::none();
    let h = model.forward_trunk(&mut g, &bound, xv, &none)?;
    (0..model.num_branches())
        .map(|j| {
            let out = model.forward_head(&mut g, &bound, j, h, &none)?;
            Ok(g.value(out).clone())
        })
        .collect()
}

/// One trunk pass, `m` head passes, equal-weight logit average.
pub fn predict(model: &EnsembleModel, x: &Tensor) -> Result<EnsemblePrediction> {
    let logits = branch_logits(model, x)?;
    let m = logits.len();
    finish(model.spec().task, logits, &vec![1.0 / m as f64; m])
}

/// Like [`predict`] but weighted by the softmax of the model's gate logits.
pub fn predict_gated(model: &EnsembleModel, x: &Tensor) -> Result<EnsemblePrediction> {
    let gates = model
        .gates()
        .ok_or_else(|| Error::Contract("model has no gates".into()))?;
    let w = gates.softmax(1)?.into_data();
    finish(model.spec().task, branch_logits(model, x)?, &w)
}

/// Averages the logits of independent models, each with a full forward
/// pass. Every branch of every model counts as one member.
pub fn predict_multi(models: &[EnsembleModel], x: &Tensor) -> Result<EnsemblePrediction> {
    let first = models
        .first()
        .ok_or_else(|| Error::Contract("predict_multi needs at least one model".into()))?;
    let task = first.spec().task;
    let mut logits = Vec::new();
    for m in models {
        if m.spec().task != task || m.spec().output_dim() != first.spec().output_dim() {
            return Err(Error::Contract("models disagree on task or output width".into()));
        }
        logits.extend(branch_logits(m, x)?);
    }
    let n = logits.len();
    finish(task, logits, &vec![1.0 / n as f64; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, ModelSpec};

    fn model(m: usize, share: usize) -> EnsembleModel {
        EnsembleModel::build(
            ModelSpec {
                layer_dims: vec![3, 6, 5, 4],
                activation: Activation::Relu,
                share_depth: share,
                num_branches: m,
                task: Task::Classification,
            },
            2,
        )
        .unwrap()
    }

    fn x() -> Tensor {
        Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![0.0, 0.3, -0.7]]).unwrap()
    }

    #[test]
    fn symmetric_pair() {
        let p = finish(
            Task::Classification,
            vec![Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap(), Tensor::from_rows(&[vec![0.0, 2.0]]).unwrap()],
            &[0.5, 0.5],
        )
        .unwrap();
        assert_eq!(p.logits.data(), &[1.0, 1.0]);
        assert_eq!(p.distribution.unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn identical_heads_give_branch_logits() {
        let mut m = model(3, 1);
        m.tie_heads_to(0);
        let p = predict(&m, &x()).unwrap();
        for b in &p.branch_logits {
            for (a, c) in b.data().iter().zip(p.logits.data()) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_trunk_pass_per_call() {
        let m = model(4, 2);
        for expected in 1..=3 {
            predict(&m, &x()).unwrap();
            assert_eq!(m.trunk_evaluations(), expected);
        }
    }

    #[test]
    fn multi_model_average() {
        let a = model(1, 0);
        let single = predict(&a, &x()).unwrap();
        assert_eq!(predict_multi(std::slice::from_ref(&a), &x()).unwrap().logits, single.logits);
        let twice = predict_multi(&[a.clone(), a.clone()], &x()).unwrap();
        for (u, v) in twice.logits.data().iter().zip(single.logits.data()) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!(predict_multi(&[], &x()).is_err());
    }

    #[test]
    fn wrong_input_width_is_contract_error() {
        let bad = Tensor::zeros(&[2, 4]);
        assert!(matches!(predict(&model(2, 1), &bad), Err(Error::Contract(_))));
    }

    #[test]
    fn uniform_gates_match_plain_average() {
        let m = model(3, 1).with_gates();
        let a = predict(&m, &x()).unwrap();
        let b = predict_gated(&m, &x()).unwrap();
        for (u, v) in a.logits.data().iter().zip(b.logits.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
