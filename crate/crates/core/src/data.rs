//! Synthetic datasets and CSV ingestion with train/dev/test splits.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Task;
use crate::rng::{self, domain};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Classes { labels: Vec<usize>, num_classes: usize },
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Classes { .. } => Task::Classification,
            Targets::Values(_) => Task::Regression,
        }
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes { labels, num_classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub name: String,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
    /// True coefficients of the linear-regression generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Tensor,
    pub targets: Targets,
    pub splits: Splits,
    pub meta: GeneratorMeta,
}

/// A slice of samples ready for a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y: Targets,
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.6, 0.2, 0.2];

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn task(&self) -> Task {
        self.targets.task()
    }

    /// Output size a model needs for this dataset.
    pub fn output_dim(&self) -> usize {
        match &self.targets {
            Targets::Classes { num_classes, .. } => *num_classes,
            Targets::Values(_) => 1,
        }
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.splits.train,
            Split::Dev => &self.splits.dev,
            Split::Test => &self.splits.test,
        }
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        let d = self.num_features();
        let mut x = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            x.extend_from_slice(self.features.row(i));
        }
        Batch {
            x: Tensor::new(vec![idx.len(), d], x).expect("non-empty batch"),
            y: self.targets.select(idx),
        }
    }

    pub fn split_batch(&self, split: Split) -> Option<Batch> {
        let idx = self.indices(split);
        (!idx.is_empty()).then(|| self.batch(idx))
    }

    /// Shuffles with `seed` and re-splits by `ratios`: each of dev and test
    /// gets `floor(ratio * n)` rows, and train takes everything left.
    pub fn resplit(&mut self, ratios: [f64; 3], seed: u64) -> Result<()> {
        self.splits = split_indices(self.len(), ratios, seed)?;
        Ok(())
    }

    /// Standardizes every feature column with train-split mean and
    /// (population) standard deviation; constant columns are only centered.
    pub fn standardize(&mut self) -> Result<()> {
        let train = &self.splits.train;
        if train.is_empty() {
            return Err(Error::Data("cannot standardize without training rows".into()));
        }
        let d = self.num_features();
        let n = train.len() as f64;
        for c in 0..d {
            let col = |i: usize| self.features.data()[i * d + c];
            let mean = train.iter().map(|&i| col(i)).sum::<f64>() / n;
            let var = train.iter().map(|&i| (col(i) - mean).powi(2)).sum::<f64>() / n;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..self.len() {
                let v = &mut self.features.data_mut()[i * d + c];
                *v = (*v - mean) / std;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Contract(format!("dataset serialization: {e}")))?;
        crate::io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            location: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        if self.targets.len() != self.len() {
            return Err(Error::Data("feature and target counts differ".into()));
        }
        if !self.features.is_finite() {
            return Err(Error::Data("features contain NaN or infinite values".into()));
        }
        if let Targets::Classes { labels, num_classes } = &self.targets {
            if labels.iter().any(|&l| l >= *num_classes) {
                return Err(Error::Data("label outside [0, num_classes)".into()));
            }
        }
        let mut seen = vec![false; self.len()];
        for &i in self.splits.train.iter().chain(&self.splits.dev).chain(&self.splits.test) {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Data(format!("split index {i} repeated or out of range")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Data("splits do not cover every row".into()));
        }
        Ok(())
    }
}

pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if ratios.iter().any(|&r| !(r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Spec(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::substream(seed, &[domain::SPLIT]));
    // tolerate ratios like 0.1 * 10 = 0.99999...
    let take = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let (n_dev, n_test) = (take(ratios[1]), take(ratios[2]));
    let n_train = n - n_dev - n_test;
    Ok(Splits {
        train: idx[..n_train].to_vec(),
        dev: idx[n_train..n_train + n_dev].to_vec(),
        test: idx[n_train + n_dev..].to_vec(),
    })
}

fn finish(features: Vec<f64>, d: usize, targets: Targets, meta: GeneratorMeta) -> Result<Dataset> {
    let n = targets.len();
    let mut ds = Dataset {
        features: Tensor::new(vec![n, d], features)?,
        targets,
        splits: Splits::default(),
        meta,
    };
    ds.resplit(DEFAULT_SPLIT, ds.meta.seed)?;
    Ok(ds)
}

/// `classes` isotropic Gaussian blobs with standard deviation `spread`.
/// Class means sit on the unit circle in the first two coordinates (on
/// the line for `d = 1`); sample `i` belongs to class `i mod classes`.
pub fn gen_gaussian_mixture(n: usize, d: usize, classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || n < classes || d == 0 || !(spread >= 0.0) {
        return Err(Error::Spec(format!(
            "gaussian mixture needs classes >= 2, n >= classes, d >= 1, spread >= 0; got n={n} d={d} classes={classes} spread={spread}"
        )));
    }
    let mut rng = rng::substream(seed, &[domain::DATA, 1]);
    let mean = |c: usize| -> Vec<f64> {
        let mut m = vec![0.0; d];
        if d == 1 {
            m[0] = c as f64 - (classes - 1) as f64 / 2.0;
        } else {
            let a = 2.0 * PI * c as f64 / classes as f64;
            m[0] = a.cos();
            m[1] = a.sin();
        }
        m
    };
    let mut x = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for mu in mean(c) {
            let z: f64 = StandardNormal.sample(&mut rng);
            x.push(mu + spread * z);
        }
        labels.push(c);
    }
    let params = BTreeMap::from([
        ("n".into(), n as f64),
        ("d".into(), d as f64),
        ("classes".into(), classes as f64),
        ("spread".into(), spread),
    ]);
    finish(
        x,
        d,
        Targets::Classes {
            labels,
            num_classes: classes,
        },
        GeneratorMeta {
            name: "gaussian_mixture".into(),
            seed,
            params,
            beta: None,
        },
    )
}

/// Point of spiral `class` at parameter `t`: radius `t / (2 pi turns)`,
/// angle `t + class * pi`.
pub fn spiral_point(t: f64, class: usize, turns: f64) -> [f64; 2] {
    let r = t / (2.0 * PI * turns);
    let a = t + class as f64 * PI;
    [r * a.cos(), r * a.sin()]
}

/// Two interleaved spirals of `n / 2` points each, plus Gaussian noise.
pub fn gen_spirals(n: usize, turns: f64, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) || !(turns > 0.0) || !(noise >= 0.0) {
        return Err(Error::Spec(format!(
            "spirals need even n > 0, turns > 0, noise >= 0; got n={n} turns={turns} noise={noise}"
        )));
    }
    let mut rng = rng::substream(seed, &[domain::DATA, 2]);
    let half = n / 2;
    let mut x = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t = ((i / 2) as f64 + 0.5) / half as f64 * 2.0 * PI * turns;
        let p = spiral_point(t, class, turns);
        for v in p {
            let z: f64 = StandardNormal.sample(&mut rng);
            x.push(v + noise * z);
        }
        labels.push(class);
    }
    let params = BTreeMap::from([
        ("n".into(), n as f64),
        ("turns".into(), turns),
        ("noise".into(), noise),
    ]);
    finish(
        x,
        2,
        Targets::Classes {
            labels,
            num_classes: 2,
        },
        GeneratorMeta {
            name: "spirals".into(),
            seed,
            params,
            beta: None,
        },
    )
}

/// `y = x . beta + eta`, `x ~ N(0, I)`, `beta ~ N(0, I)` fixed by `seed`,
/// `eta ~ N(0, noise_std^2)`.
pub fn gen_linear_regression(n: usize, d: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 || !(noise_std >= 0.0) {
        return Err(Error::Spec(format!(
            "linear regression needs n, d >= 1 and noise_std >= 0; got n={n} d={d} noise_std={noise_std}"
        )));
    }
    let mut rng = rng::substream(seed, &[domain::DATA, 3]);
    let beta: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Spec(e.to_string()))?;
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let clean: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        y.push(clean + noise.sample(&mut rng));
        x.extend(row);
    }
    let params = BTreeMap::from([
        ("n".into(), n as f64),
        ("d".into(), d as f64),
        ("noise_std".into(), noise_std),
    ]);
    finish(
        x,
        d,
        Targets::Values(y),
        GeneratorMeta {
            name: "linear_regression".into(),
            seed,
            params,
            beta: Some(beta),
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetColumn {
    Index(usize),
    Name(String),
}

/// Reads a numeric CSV. A first row that does not parse as numbers is
/// taken as the header.
pub fn load_csv(
    path: &Path,
    target: &TargetColumn,
    task: Task,
    ratios: [f64; 3],
    seed: u64,
) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ds = parse_csv(&text, target, task, &path.display().to_string())?;
    ds.meta.seed = seed;
    ds.resplit(ratios, seed)?;
    Ok(ds)
}

/// A rectangular numeric CSV: optional header, then rows tagged with their
/// line numbers.
struct NumericTable {
    header: Option<Vec<String>>,
    width: usize,
    rows: Vec<(u64, Vec<f64>)>,
}

impl NumericTable {
    fn parse(text: &str, source: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Parse {
                location: source.to_string(),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            records.push((line, rec));
        }
        let Some((_, first)) = records.first() else {
            return Err(Error::Data(format!("{source} has no rows")));
        };
        let header: Option<Vec<String>> = first
            .iter()
            .any(|c| c.parse::<f64>().is_err())
            .then(|| first.iter().map(str::to_string).collect());
        let width = first.len();
        let body = &records[usize::from(header.is_some())..];
        if body.is_empty() {
            return Err(Error::Data(format!("{source} has no data rows")));
        }
        let mut rows = Vec::with_capacity(body.len());
        for (line, rec) in body {
            if rec.len() != width {
                return Err(Error::Parse {
                    location: format!("{source} line {line}"),
                    msg: format!("expected {width} fields, found {}", rec.len()),
                });
            }
            let row = rec
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    cell.parse::<f64>().map_err(|_| Error::Parse {
                        location: format!("{source} line {line}, column {}", c + 1),
                        msg: format!("{cell:?} is not a number"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((*line, row));
        }
        Ok(Self { header, width, rows })
    }

    fn column(&self, col: &TargetColumn) -> Result<usize> {
        match col {
            TargetColumn::Index(i) if *i < self.width => Ok(*i),
            TargetColumn::Index(i) => Err(Error::Data(format!(
                "column {i} out of range for {} columns",
                self.width
            ))),
            TargetColumn::Name(name) => self
                .header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| Error::Data(format!("no column named {name:?}"))),
        }
    }

    /// Row-major values of every column except `skip`.
    fn features(&self, skip: Option<usize>) -> Result<Tensor> {
        let width = self.width - usize::from(skip.is_some());
        if width == 0 {
            return Err(Error::Data("no feature columns".into()));
        }
        let mut out = Vec::with_capacity(self.rows.len() * width);
        for (_, row) in &self.rows {
            out.extend(row.iter().enumerate().filter(|(c, _)| Some(*c) != skip).map(|(_, v)| *v));
        }
        Tensor::new(vec![self.rows.len(), width], out)
    }
}

/// Reads a feature-only CSV (optional header), dropping column `drop`.
pub fn read_features(path: &Path, drop: Option<&TargetColumn>) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table = NumericTable::parse(&text, &path.display().to_string())?;
    let skip = drop.map(|c| table.column(c)).transpose()?;
    table.features(skip)
}

pub(crate) fn parse_csv(text: &str, target: &TargetColumn, task: Task, source: &str) -> Result<Dataset> {
    let table = NumericTable::parse(text, source)?;
    let target_idx = table.column(target)?;
    let features = table.features(Some(target_idx))?;
    let raw_targets: Vec<(u64, f64)> = table.rows.iter().map(|(l, r)| (*l, r[target_idx])).collect();

    let targets = match task {
        Task::Regression => Targets::Values(raw_targets.iter().map(|&(_, v)| v).collect()),
        Task::Classification => {
            let mut labels = Vec::with_capacity(raw_targets.len());
            for &(line, v) in &raw_targets {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Parse {
                        location: format!("{source} line {line}, column {}", target_idx + 1),
                        msg: format!("class label {v} is not a non-negative integer"),
                    });
                }
                labels.push(v as usize);
            }
            let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
            Targets::Classes { labels, num_classes }
        }
    };
    let n = targets.len();
    Ok(Dataset {
        features,
        targets,
        splits: Splits {
            train: (0..n).collect(),
            ..Splits::default()
        },
        meta: GeneratorMeta {
            name: format!("csv:{source}"),
            ..GeneratorMeta::default()
        },
    })
}
