use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::Value;

use super::config::{label, ExperimentConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::write_checkpoint;
use crate::train::{run_training_with, RunReport};

pub const INDEX_FILE: &str = "index.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    /// Sweep assignments of this run.
    pub point: BTreeMap<String, Value>,
    pub seed: u64,
    pub status: RunStatus,
    /// Paths relative to the index file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Directory listing of one experiment's runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub name: String,
    pub sweep_axes: Vec<String>,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    pub runs: Vec<IndexEntry>,
}

impl Index {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            location: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn failures(&self) -> impl Iterator<Item = &IndexEntry> {
        self.runs.iter().filter(|r| r.status == RunStatus::Failed)
    }

    /// Successful runs with their reports, in index order. `dir` is the
    /// directory holding the index.
    pub fn reports(&self, dir: &Path) -> Result<Vec<(IndexEntry, RunReport)>> {
        self.runs
            .iter()
            .filter(|r| r.status == RunStatus::Ok)
            .map(|r| {
                let rel = r
                    .report
                    .as_ref()
                    .ok_or_else(|| Error::Contract(format!("run {} has no report", r.id)))?;
                let path = dir.join(rel);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                Ok((r.clone(), RunReport::from_json(&text, &path.display().to_string())?))
            })
            .collect()
    }

    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Contract(format!("index serialization: {e}")))?;
        write_atomic(path, text.as_bytes())
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
    /// Base for relative dataset paths.
    pub base_dir: PathBuf,
}

struct Job {
    id: String,
    point: BTreeMap<String, Value>,
    seed: u64,
    config: ExperimentConfig,
    dataset: usize,
}

/// Runs every (sweep point, seed) pair. Each run writes its report, step
/// CSV, and checkpoint under `runs/`; the index is rewritten after every
/// finished run, so it survives a failure part-way through. Failed runs
/// are recorded in the index rather than returned as errors.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<Index> {
    config.validate()?;
    let points = config.points()?;
    let datasets: Vec<Dataset> = points
        .iter()
        .map(|(_, c)| c.dataset.build(&opts.base_dir))
        .collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for (i, (assign, cfg)) in points.into_iter().enumerate() {
        for &seed in &config.seeds {
            let mut cfg = cfg.clone();
            cfg.train.seed = seed;
            jobs.push(Job {
                id: format!("p{i:03}-s{seed}"),
                point: assign.clone(),
                seed,
                config: cfg,
                dataset: i,
            });
        }
    }

    let runs_dir = opts.out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    write_atomic(&opts.out_dir.join("config.toml"), config.to_toml()?.as_bytes())?;
    let index_path = opts.out_dir.join(INDEX_FILE);
    let index = Mutex::new(Index {
        name: config.name.clone(),
        sweep_axes: config.sweep_axes(),
        seeds: config.seeds.clone(),
        config: config.clone(),
        runs: Vec::new(),
    });
    let order: BTreeMap<String, usize> = jobs.iter().enumerate().map(|(i, j)| (j.id.clone(), i)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Contract(format!("worker pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter().try_for_each(|job| -> Result<()> {
            let entry = run_one(job, &datasets[job.dataset], &runs_dir);
            let mut idx = index.lock().expect("index lock");
            idx.runs.push(entry);
            idx.runs.sort_by_key(|r| order[&r.id]);
            idx.write(&index_path)
        })
    })?;
    Ok(index.into_inner().expect("index lock"))
}

fn run_one(job: &Job, dataset: &Dataset, runs_dir: &Path) -> IndexEntry {
    let mut entry = IndexEntry {
        id: job.id.clone(),
        point: job.point.clone(),
        seed: job.seed,
        status: RunStatus::Failed,
        report: None,
        steps_csv: None,
        checkpoint: None,
        error: None,
    };
    let result = (|| -> Result<()> {
        let (report, model) = run_training_with(&job.config.train, &job.config.model, dataset, |_, _| {})?;
        let report_name = format!("runs/{}.json", job.id);
        let steps_name = format!("runs/{}.steps.csv", job.id);
        let ckpt_name = format!("runs/{}.ckpt", job.id);
        let root = runs_dir.parent().expect("runs dir has a parent");
        write_atomic(&root.join(&report_name), report.to_json()?.as_bytes())?;
        write_atomic(&root.join(&steps_name), report.steps_csv().as_bytes())?;
        write_checkpoint(&model, &root.join(&ckpt_name))?;
        entry.report = Some(report_name);
        entry.steps_csv = Some(steps_name);
        entry.checkpoint = Some(ckpt_name);
        Ok(())
    })();
    match result {
        Ok(()) => entry.status = RunStatus::Ok,
        Err(e) => {
            let at = label(&job.point);
            entry.error = Some(if at.is_empty() { e.to_string() } else { format!("{e} (at {at})") });
        }
    }
    entry
}
