use std::time::Instant;

use rand::seq::SliceRandom;

use super::{
    camero_step, dml_step, kdcl_step, one_step, vanilla_step, EvalEntry, Method, MetricName, Optimizer,
    RunReport, StepLog, TrainConfig,
};
use crate::data::{Batch, Dataset, Split, Targets};
use crate::ensemble;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{EnsembleModel, ModelSpec, Task};
use crate::rng::{self, domain};

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// The model a method trains: ONE gets gate logits, everything else the
/// plain weight-shared network.
pub fn build_model(spec: &ModelSpec, config: &TrainConfig) -> Result<EnsembleModel> {
    let model = EnsembleModel::build(spec.clone(), config.seed)?;
    Ok(if config.method == Method::One {
        model.with_gates()
    } else {
        model
    })
}

/// Per-branch and ensemble metric of `model` on `batch`, without
/// perturbation.
pub fn evaluate(model: &EnsembleModel, batch: &Batch, step: u64) -> Result<EvalEntry> {
    let pred = ensemble::predict(model, &batch.x)?;
    match &batch.y {
        Targets::Classes { labels, .. } => Ok(EvalEntry {
            step,
            branches: pred
                .branch_labels()
                .iter()
                .map(|l| metrics::accuracy(l, labels))
                .collect::<Result<_>>()?,
            ensemble: metrics::accuracy(pred.labels.as_deref().unwrap_or_default(), labels)?,
        }),
        Targets::Values(y) => Ok(EvalEntry {
            step,
            branches: pred
                .branch_logits
                .iter()
                .map(|l| metrics::mse(l.data(), y))
                .collect::<Result<_>>()?,
            ensemble: metrics::mse(&pred.values(), y)?,
        }),
    }
}

/// Stepwise driver over one dataset. [`run_training`] runs it to the end;
/// tests can step it by hand.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub model: EnsembleModel,
    pub optimizer: Optimizer,
    dataset: &'a Dataset,
    step: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &TrainConfig, spec: &ModelSpec, dataset: &'a Dataset) -> Result<Self> {
        let mut problems = config.problems(spec);
        if dataset.indices(Split::Train).is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        if spec.input_dim() != dataset.num_features() {
            problems.push(format!(
                "model.layer_dims: input size {} does not match {} dataset features",
                spec.input_dim(),
                dataset.num_features()
            ));
        }
        if spec.output_dim() != dataset.output_dim() || spec.task != dataset.task() {
            problems.push(format!(
                "model.layer_dims: output size {} ({:?}) does not match the dataset ({} outputs, {:?})",
                spec.output_dim(),
                spec.task,
                dataset.output_dim(),
                dataset.task()
            ));
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let model = build_model(spec, config)?;
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate, config.betas, &model.params());
        Ok(Self {
            config: config.clone(),
            model,
            optimizer,
            dataset,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> u64 {
        (self.config.epochs * steps_per_epoch(self.dataset.indices(Split::Train).len(), self.config.batch_size)) as u64
    }

    /// Training-row order of `epoch`.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order = self.dataset.indices(Split::Train).to_vec();
        order.shuffle(&mut rng::substream(self.config.seed, &[domain::SHUFFLE, epoch]));
        order
    }

    /// Applies one update of the configured method on `batch`.
    pub fn step_on(&mut self, batch: &Batch) -> Result<StepLog> {
        self.step += 1;
        let f = match self.config.method {
            Method::Camero => camero_step,
            Method::Vanilla => vanilla_step,
            Method::Dml => dml_step,
            Method::Kdcl => kdcl_step,
            Method::One => one_step,
        };
        f(&mut self.model, &mut self.optimizer, batch, &self.config, self.step)
    }

    /// Runs every epoch, calling `on_step` after each update. Returns the
    /// report and the trained model.
    pub fn run(mut self, mut on_step: impl FnMut(&StepLog, &EnsembleModel)) -> Result<(RunReport, EnsembleModel)> {
        let start = Instant::now();
        let ds = self.dataset;
        let dev = ds.split_batch(Split::Dev).or_else(|| ds.split_batch(Split::Train)).expect("train split is not empty");
        let mut steps = Vec::with_capacity(self.total_steps() as usize);
        let mut evals = Vec::new();
        for epoch in 0..self.config.epochs as u64 {
            let order = self.epoch_order(epoch);
            for chunk in order.chunks(self.config.batch_size) {
                let log = self.step_on(&ds.batch(chunk))?;
                on_step(&log, &self.model);
                steps.push(log);
                if self.step.is_multiple_of(self.config.eval_every as u64) {
                    evals.push(evaluate(&self.model, &dev, self.step)?);
                }
            }
        }
        let final_dev = evaluate(&self.model, &dev, self.step)?;
        let final_test = ds
            .split_batch(Split::Test)
            .map(|b| evaluate(&self.model, &b, self.step))
            .transpose()?;
        let pred = ensemble::predict(&self.model, &dev.x)?;
        let m = self.model.num_branches();
        let similarity = match self.model.spec().task {
            Task::Classification if m >= 2 => Some(metrics::prediction_similarity(&pred.branch_labels())?.0),
            _ => None,
        };
        let cosine_similarity = (m >= 2)
            .then(|| metrics::cosine_similarity(&pred.branch_logits))
            .transpose()?
            .map(|s| s.0);
        let alpha = match self.config.method {
            Method::Vanilla => 0.0,
            _ => self.config.alpha(),
        };
        let report = RunReport {
            seed: self.config.seed,
            alpha,
            metric: match self.model.spec().task {
                Task::Classification => MetricName::Accuracy,
                Task::Regression => MetricName::Mse,
            },
            param_count: self.model.spec().param_count(),
            model: self.model.spec().clone(),
            config: self.config,
            steps,
            evals,
            final_dev,
            final_test,
            similarity,
            cosine_similarity,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        };
        Ok((report, self.model))
    }
}

/// Trains `spec` on `dataset` with `config` and reports every logged
/// quantity. Deterministic in `config.seed`.
pub fn run_training(config: &TrainConfig, spec: &ModelSpec, dataset: &Dataset) -> Result<RunReport> {
    run_training_with(config, spec, dataset, |_, _| {}).map(|(report, _)| report)
}

pub fn run_training_with(
    config: &TrainConfig,
    spec: &ModelSpec,
    dataset: &Dataset,
    on_step: impl FnMut(&StepLog, &EnsembleModel),
) -> Result<(RunReport, EnsembleModel)> {
    if dataset.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    Trainer::new(config, spec, dataset)?.run(on_step)
}
