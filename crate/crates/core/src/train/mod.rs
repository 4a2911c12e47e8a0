//! Optimizers, the five training procedures, and the training loop.

mod optim;
mod report;
mod run;
mod steps;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::perturb::PerturbationSpec;
use crate::consistency::ConsistencySpec;

pub use optim::{adam_step, adamax_step, sgd_step, Moments, Optimizer, OptimizerKind, OptimizerState, ADAM_EPS};
pub use report::{EvalEntry, MetricName, RunReport, StepLog};
pub use run::{build_model, evaluate, run_training, run_training_with, steps_per_epoch, Trainer};
pub use steps::{camero_step, cross_entropy, dml_step, kdcl_step, one_step, task_loss, vanilla_step};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Camero,
    Vanilla,
    Dml,
    Kdcl,
    One,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Camero => "camero",
            Method::Vanilla => "vanilla",
            Method::Dml => "dml",
            Method::Kdcl => "kdcl",
            Method::One => "one",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Optimizer betas; each optimizer has its own default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<[f64; 2]>,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Dev evaluation period in steps.
    pub eval_every: usize,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub consistency: ConsistencySpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Camero,
            optimizer: OptimizerKind::Adamax,
            learning_rate: 1e-2,
            betas: None,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            eval_every: 50,
            perturbation: PerturbationSpec::default(),
            consistency: ConsistencySpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn alpha(&self) -> f64 {
        self.consistency.alpha
    }

    /// Every problem with this config for a model of shape `model`, as
    /// `key: message` strings.
    pub fn problems(&self, model: &ModelSpec) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!("train.learning_rate: must be > 0, got {}", self.learning_rate));
        }
        if let Some(b) = self.betas {
            if b.iter().any(|v| !(0.0..1.0).contains(v)) {
                out.push(format!("train.betas: each beta must be in [0, 1), got {b:?}"));
            }
        }
        for (key, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                out.push(format!("train.{key}: must be >= 1"));
            }
        }
        let m = model.num_branches;
        let independent = model.share_depth == 0;
        match self.method {
            Method::Dml if m != 2 => out.push(format!("model.num_branches: dml trains exactly 2 models, got {m}")),
            Method::Kdcl if m < 2 => out.push(format!("model.num_branches: kdcl needs at least 2 models, got {m}")),
            _ => {}
        }
        if matches!(self.method, Method::Vanilla | Method::Dml | Method::Kdcl) && !independent {
            out.push(format!(
                "model.share_depth: {} trains independent models and needs share_depth = 0",
                self.method.name()
            ));
        }
        out.extend(self.perturbation.problems().into_iter().map(|p| format!("train.{p}")));
        out.extend(self.consistency.problems(m).into_iter().map(|p| format!("train.{p}")));
        out
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        let problems = self.problems(model);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Task};

    fn spec(m: usize, share: usize) -> ModelSpec {
        ModelSpec {
            layer_dims: vec![2, 4, 2],
            activation: Activation::Relu,
            share_depth: share,
            num_branches: m,
            task: Task::Classification,
        }
    }

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate(&spec(4, 1)).unwrap();
    }

    #[test]
    fn lists_every_problem() {
        let c = TrainConfig {
            method: Method::Dml,
            learning_rate: 0.0,
            batch_size: 0,
            ..TrainConfig::default()
        };
        let p = c.problems(&spec(3, 1));
        assert!(p.iter().any(|s| s.starts_with("train.learning_rate")));
        assert!(p.iter().any(|s| s.starts_with("train.batch_size")));
        assert!(p.iter().any(|s| s.starts_with("model.num_branches")));
        assert!(p.iter().any(|s| s.starts_with("model.share_depth")));
    }
}
