use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use toml::Value;

use super::config::value_str;
use super::runner::{Index, IndexEntry};
use crate::error::{Error, Result};
use crate::metrics::{self, SeedSummary, SimilarityMatrix};
use crate::train::{MetricName, RunReport};

/// Steps averaged for the end-of-training consistency loss.
pub const FINAL_WINDOW: usize = 100;

/// Mean consistency loss over the last [`FINAL_WINDOW`] logged steps.
pub fn final_consistency(report: &RunReport) -> f64 {
    let s = &report.steps;
    let tail = &s[s.len().saturating_sub(FINAL_WINDOW)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(|l| l.consistency_loss).sum::<f64>() / tail.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub experiment: String,
    pub method: String,
    pub m: usize,
    pub point: String,
    pub metric: MetricName,
    pub summary: SeedSummary,
    pub param_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
}

fn metric_str(m: MetricName) -> &'static str {
    match m {
        MetricName::Accuracy => "accuracy",
        MetricName::Mse => "mse",
    }
}

fn point_label(point: &BTreeMap<String, Value>) -> String {
    point
        .iter()
        .map(|(k, v)| format!("{k}={}", value_str(v)))
        .collect::<Vec<_>>()
        .join(";")
}

/// One row per (experiment, method, m, sweep point), summarizing the final
/// dev ensemble metric over seeds. Rows are sorted by method, then m.
pub fn compare(index_paths: &[&Path]) -> Result<Comparison> {
    if index_paths.is_empty() {
        return Err(Error::Contract("compare needs at least one index".into()));
    }
    let mut groups: BTreeMap<(String, usize, String, String), Vec<RunReport>> = BTreeMap::new();
    for path in index_paths {
        let index = Index::load(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for (entry, report) in index.reports(dir)? {
            let key = (
                report.config.method.name().to_string(),
                report.model.num_branches,
                index.name.clone(),
                point_label(&entry.point),
            );
            groups.entry(key).or_default().push(report);
        }
    }
    let mut rows = Vec::new();
    for ((method, m, experiment, point), reports) in groups {
        let summary = if reports.len() >= 2 {
            metrics::seed_variance(&reports)?
        } else {
            SeedSummary::from_values(vec![reports[0].seed], vec![reports[0].final_dev.ensemble])?
        };
        rows.push(CompareRow {
            experiment,
            method,
            m,
            point,
            metric: reports[0].metric,
            summary,
            param_count: reports[0].param_count,
        });
    }
    if let Some(first) = rows.first() {
        if let Some(bad) = rows.iter().find(|r| r.metric != first.metric) {
            return Err(Error::Contract(format!(
                "incompatible metric sets: {} and {}",
                metric_str(first.metric),
                metric_str(bad.metric)
            )));
        }
    }
    Ok(Comparison { rows })
}

const HEADER: [&str; 11] = [
    "method", "m", "experiment", "point", "metric", "runs", "mean", "std", "min", "max", "params",
];

impl Comparison {
    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.m.to_string(),
                    r.experiment.clone(),
                    r.point.clone(),
                    metric_str(r.metric).to_string(),
                    r.summary.count().to_string(),
                    format!("{:.6}", r.summary.mean),
                    r.summary.std.map(|s| format!("{s:.6}")).unwrap_or_default(),
                    format!("{:.6}", r.summary.min),
                    format!("{:.6}", r.summary.max),
                    r.param_count.to_string(),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Contract(format!("csv: {e}"));
        w.write_record(HEADER).map_err(err)?;
        for row in self.cells() {
            w.write_record(&row).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }

    /// Column-aligned table with `mean ± std`.
    pub fn to_text(&self) -> String {
        let header = ["method", "m", "experiment", "point", "metric", "runs", "mean ± std", "params"];
        let rows: Vec<Vec<String>> = self
            .cells()
            .into_iter()
            .map(|c| {
                let ms = if c[7].is_empty() { c[6].clone() } else { format!("{} ± {}", c[6], c[7]) };
                vec![c[0].clone(), c[1].clone(), c[2].clone(), c[3].clone(), c[4].clone(), c[5].clone(), ms, c[10].clone()]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cells: Vec<String>| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            writeln!(out, "{}", padded.join("  ").trim_end()).unwrap();
        };
        line(header.iter().map(|s| s.to_string()).collect());
        line(widths.iter().map(|&w| "-".repeat(w)).collect());
        for r in rows {
            line(r);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Figure {
    BranchSimilarity,
    DiversityVsStrength,
    VarianceVsStrength,
    AlphaSweep,
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "branch_similarity" => Figure::BranchSimilarity,
            "diversity_vs_strength" => Figure::DiversityVsStrength,
            "variance_vs_strength" => Figure::VarianceVsStrength,
            "alpha_sweep" => Figure::AlphaSweep,
            other => {
                return Err(Error::Config(vec![format!(
                    "figure: unknown figure {other:?}; expected branch_similarity, diversity_vs_strength, variance_vs_strength, or alpha_sweep"
                )]))
            }
        })
    }
}

const STRENGTH_AXES: [&str; 2] = ["train.perturbation.p", "train.perturbation.epsilon"];

fn require_axis<'a>(index: &Index, candidates: &[&'a str]) -> Result<&'a str> {
    candidates
        .iter()
        .find(|a| index.sweep_axes.iter().any(|s| s == *a))
        .copied()
        .ok_or_else(|| Error::Contract(format!("index has no sweep axis {}", candidates[0])))
}

/// Series name with the run's other sweep assignments appended.
fn series(name: &str, entry: &IndexEntry, axis: &str) -> String {
    let rest: Vec<String> = entry
        .point
        .iter()
        .filter(|(k, _)| k.as_str() != axis)
        .map(|(k, v)| format!("{k}={}", value_str(v)))
        .collect();
    if rest.is_empty() {
        name.to_string()
    } else {
        format!("{name}[{}]", rest.join(";"))
    }
}

/// Long-format plot data `x,series,value,seed`, in index order.
pub fn figdata(index_path: &Path, figure: Figure) -> Result<String> {
    let index = Index::load(index_path)?;
    let dir = index_path.parent().unwrap_or(Path::new("."));
    let runs = index.reports(dir)?;
    let mut rows: Vec<(String, String, f64, String)> = Vec::new();
    let x_of = |e: &IndexEntry, axis: &str| value_str(&e.point[axis]);
    match figure {
        Figure::BranchSimilarity => {
            let axis = require_axis(&index, &["model.share_depth"])?;
            for (e, r) in &runs {
                let x = (r.model.depth() - r.model.share_depth).to_string();
                let sim = r
                    .similarity
                    .clone()
                    .ok_or_else(|| Error::Contract(format!("run {} has no similarity matrix", e.id)))?;
                rows.push((x.clone(), series("similarity", e, axis), SimilarityMatrix(sim).mean_off_diagonal(), e.seed.to_string()));
                if let Some(c) = &r.cosine_similarity {
                    rows.push((x, series("cosine_similarity", e, axis), SimilarityMatrix(c.clone()).mean_off_diagonal(), e.seed.to_string()));
                }
            }
        }
        Figure::DiversityVsStrength => {
            let axis = require_axis(&index, &STRENGTH_AXES)?;
            for (e, r) in &runs {
                rows.push((x_of(e, axis), series("consistency_loss", e, axis), final_consistency(r), e.seed.to_string()));
            }
        }
        Figure::VarianceVsStrength | Figure::AlphaSweep => {
            let axis = if figure == Figure::AlphaSweep {
                require_axis(&index, &["train.consistency.alpha"])?
            } else {
                require_axis(&index, &STRENGTH_AXES)?
            };
            for (e, r) in &runs {
                rows.push((x_of(e, axis), series("dev_ensemble", e, axis), r.final_dev.ensemble, e.seed.to_string()));
            }
            for (e, r) in &runs {
                if let Some(t) = &r.final_test {
                    rows.push((x_of(e, axis), series("test_ensemble", e, axis), t.ensemble, e.seed.to_string()));
                }
            }
            if figure == Figure::VarianceVsStrength {
                let mut by_x: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
                let mut order = Vec::new();
                for (e, r) in &runs {
                    let key = (x_of(e, axis), series("dev_ensemble_std", e, axis));
                    if !by_x.contains_key(&key) {
                        order.push(key.clone());
                    }
                    by_x.entry(key).or_default().push(r.final_dev.ensemble);
                }
                for key in order {
                    let v = &by_x[&key];
                    if let Some(std) = SeedSummary::from_values(vec![0; v.len()], v.clone())?.std {
                        rows.push((key.0, key.1, std, "all".into()));
                    }
                }
            }
        }
    }
    let mut out = String::from("x,series,value,seed\n");
    for (x, s, v, seed) in rows {
        writeln!(out, "{x},{s},{v},{seed}").unwrap();
    }
    Ok(out)
}
