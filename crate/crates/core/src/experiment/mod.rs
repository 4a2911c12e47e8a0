//! Config-driven sweeps over seeds and hyper-parameters, and the tables
//! and plot data built from their reports.

mod analysis;
mod config;
mod runner;

use std::fmt::Write as _;
use std::path::Path;

pub use analysis::{compare, figdata, final_consistency, CompareRow, Comparison, Figure, FINAL_WINDOW};
pub use config::{label, value_str, DatasetKind, DatasetSpec, ExperimentConfig};
pub use runner::{run_experiment, Index, IndexEntry, RunOptions, RunStatus, INDEX_FILE};

use crate::data::{read_features, TargetColumn};
use crate::ensemble;
use crate::error::Result;
use crate::model::read_checkpoint;

/// Predictions of a checkpointed model for every row of a feature CSV:
/// `row,ensemble,branch0,...` with labels for classification and values
/// for regression.
pub fn predict_csv(checkpoint: &Path, input: &Path, drop: Option<&TargetColumn>) -> Result<String> {
    let model = read_checkpoint(checkpoint)?;
    let x = read_features(input, drop)?;
    let pred = ensemble::predict(&model, &x)?;
    let m = model.num_branches();
    let mut out = String::from("row,ensemble");
    for j in 0..m {
        write!(out, ",branch{j}").unwrap();
    }
    out.push('\n');
    match &pred.labels {
        Some(labels) => {
            let branches = pred.branch_labels();
            for (i, l) in labels.iter().enumerate() {
                write!(out, "{i},{l}").unwrap();
                for b in &branches {
                    write!(out, ",{}", b[i]).unwrap();
                }
                out.push('\n');
            }
        }
        None => {
            for (i, v) in pred.values().iter().enumerate() {
                write!(out, "{i},{v}").unwrap();
                for b in &pred.branch_logits {
                    write!(out, ",{}", b.data()[i]).unwrap();
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}
