//! Diversity and variance diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::RunReport;

/// Window of the trailing mean used by [`diversity_trace`].
pub const TRACE_WINDOW: usize = 10;

/// `m x m` matrix; entry `(i, j)` is the fraction of samples on which
/// branches `i` and `j` predict the same label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix(pub Vec<Vec<f64>>);

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    /// Mean of the off-diagonal entries; 1 for a single branch.
    pub fn mean_off_diagonal(&self) -> f64 {
        let m = self.size();
        if m < 2 {
            return 1.0;
        }
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    total += self.0[i][j];
                }
            }
        }
        total / (m * (m - 1)) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.0 {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn prediction_similarity(labels: &[Vec<usize>]) -> Result<SimilarityMatrix> {
    let m = labels.len();
    if m < 2 {
        return Err(Error::Contract(format!("similarity needs at least 2 branches, got {m}")));
    }
    let n = labels[0].len();
    if labels.iter().any(|l| l.len() != n) {
        return Err(Error::Contract("branch prediction vectors differ in length".into()));
    }
    if n == 0 {
        return Err(Error::Contract("similarity over zero samples".into()));
    }
    let mut s = vec![vec![1.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let agree = labels[i].iter().zip(&labels[j]).filter(|(a, b)| a == b).count();
            let v = agree as f64 / n as f64;
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    Ok(SimilarityMatrix(s))
}

/// Mean row-wise cosine similarity between branch logits.
pub fn cosine_similarity(logits: &[Tensor]) -> Result<SimilarityMatrix> {
    let m = logits.len();
    if m < 2 {
        return Err(Error::Contract(format!("similarity needs at least 2 branches, got {m}")));
    }
    if logits.iter().any(|t| t.shape() != logits[0].shape()) {
        return Err(Error::Contract("branch logits differ in shape".into()));
    }
    let n = logits[0].rows();
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            if na == nb { 1.0 } else { 0.0 }
        } else {
            (dot / (na * nb)).clamp(-1.0, 1.0)
        }
    };
    let mut s = vec![vec![1.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let v = (0..n).map(|r| cos(logits[i].row(r), logits[j].row(r))).sum::<f64>() / n as f64;
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    Ok(SimilarityMatrix(s))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "accuracy over {} predictions and {} labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "mse over {} predictions and {} targets",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; `None` for a single value.
    pub std: Option<f64>,
    pub min: f64,
    pub max: f64,
}

impl SeedSummary {
    pub fn from_values(seeds: Vec<u64>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || seeds.len() != values.len() {
            return Err(Error::Contract("summary needs one value per seed".into()));
        }
        let n = values.len() as f64;
        // offset by the first value so identical inputs give an exact mean
        let mean = values[0] + values.iter().map(|v| v - values[0]).sum::<f64>() / n;
        let std = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            seeds,
            values,
            mean,
            std,
            min,
            max,
        })
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }
}

/// Summary of the final dev ensemble metric over runs that differ only in
/// seed. Runs are ordered by seed first, so the result does not depend on
/// the order of `reports`.
pub fn seed_variance(reports: &[RunReport]) -> Result<SeedSummary> {
    if reports.len() < 2 {
        return Err(Error::Contract(format!(
            "seed variance needs at least 2 runs, got {}",
            reports.len()
        )));
    }
    let key = |r: &RunReport| {
        let mut c = r.config.clone();
        c.seed = 0;
        (c, r.model.clone())
    };
    let reference = key(&reports[0]);
    if let Some(bad) = reports.iter().find(|r| key(r) != reference) {
        return Err(Error::Contract(format!(
            "run with seed {} differs from the first run in more than its seed",
            bad.config.seed
        )));
    }
    let mut pairs: Vec<(u64, f64)> = reports.iter().map(|r| (r.config.seed, r.final_dev.ensemble)).collect();
    pairs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (seeds, values) = pairs.into_iter().unzip();
    SeedSummary::from_values(seeds, values)
}

/// `(step, consistency_loss)` pairs, optionally smoothed by a trailing
/// mean over the last [`TRACE_WINDOW`] steps.
pub fn diversity_trace(report: &RunReport, smooth: bool) -> Result<Vec<(u64, f64)>> {
    if report.steps.is_empty() {
        return Err(Error::Contract("report has no logged steps".into()));
    }
    let raw: Vec<(u64, f64)> = report.steps.iter().map(|s| (s.step, s.consistency_loss)).collect();
    if !smooth {
        return Ok(raw);
    }
    Ok(raw
        .iter()
        .enumerate()
        .map(|(i, &(step, _))| {
            let lo = (i + 1).saturating_sub(TRACE_WINDOW);
            let w = &raw[lo..=i];
            (step, w.iter().map(|p| p.1).sum::<f64>() / w.len() as f64)
        })
        .collect())
}

/// Spearman rank correlation, with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Contract("spearman needs two equal series of length >= 2".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}
