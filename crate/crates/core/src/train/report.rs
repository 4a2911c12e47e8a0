use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Losses of one update. `consistency_loss` is the unweighted regularizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub task_loss: f64,
    pub consistency_loss: f64,
    pub total_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Accuracy,
    Mse,
}

impl MetricName {
    pub fn higher_is_better(self) -> bool {
        self == MetricName::Accuracy
    }
}

/// Dev or test metric after `step` updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub step: u64,
    pub branches: Vec<f64>,
    pub ensemble: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub model: ModelSpec,
    pub seed: u64,
    /// Weight of the consistency loss in `total_loss`; zero for methods
    /// that only log the regularizer.
    pub alpha: f64,
    pub metric: MetricName,
    pub param_count: usize,
    pub steps: Vec<StepLog>,
    pub evals: Vec<EvalEntry>,
    pub final_dev: EvalEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_test: Option<EvalEntry>,
    /// Argmax agreement between branches on dev (classification, m >= 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<Vec<Vec<f64>>>,
    /// Mean cosine similarity of branch outputs on dev (m >= 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine_similarity: Option<Vec<Vec<f64>>>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Contract(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            location: source.to_string(),
            msg: e.to_string(),
        })
    }

    /// Copy with timing fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }

    /// Largest `|total - (task + alpha * consistency)|` over logged steps.
    pub fn decomposition_error(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| (s.total_loss - (s.task_loss + self.alpha * s.consistency_loss)).abs())
            .fold(0.0, f64::max)
    }

    /// `step,task_loss,consistency_loss,total_loss,dev_ensemble,dev_branch0,...`;
    /// dev columns are filled on evaluation steps only.
    pub fn steps_csv(&self) -> String {
        let m = self.model.num_branches;
        let mut out = String::from("step,task_loss,consistency_loss,total_loss,dev_ensemble");
        for j in 0..m {
            write!(out, ",dev_branch{j}").unwrap();
        }
        out.push('\n');
        let mut evals = self.evals.iter().peekable();
        for s in &self.steps {
            write!(out, "{},{:?},{:?},{:?}", s.step, s.task_loss, s.consistency_loss, s.total_loss).unwrap();
            match evals.next_if(|e| e.step == s.step) {
                Some(e) => {
                    write!(out, ",{:?}", e.ensemble).unwrap();
                    for b in &e.branches {
                        write!(out, ",{b:?}").unwrap();
                    }
                }
                None => out.push_str(&",".repeat(m + 1)),
            }
            out.push('\n');
        }
        out
    }
}
