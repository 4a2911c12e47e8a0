#![allow(dead_code)]

pub mod grad;
pub mod reference;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use camero::experiment::{run_experiment, ExperimentConfig, Index, RunOptions};
use camero::rng::Rng;
use camero::tensor::Tensor;
use rand::Rng as _;

pub fn rand_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn recipe_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/recipes")
}

pub fn load_recipe(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_file(&recipe_dir().join(name)).unwrap()
}

pub fn run_into(config: &ExperimentConfig, out: &Path) -> camero::Result<Index> {
    run_experiment(
        config,
        &RunOptions {
            out_dir: out.to_path_buf(),
            jobs: 0,
            base_dir: recipe_dir(),
        },
    )
}

/// Per-x means of one series in a figdata CSV, keyed by the numeric x.
pub fn series_means(csv: &str, series: &str) -> Vec<(f64, f64)> {
    let mut acc: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells[1] != series {
            continue;
        }
        let x: f64 = cells[0].parse().unwrap();
        let e = acc.entry(cells[0].to_string()).or_insert((x, 0.0, 0));
        e.1 += cells[2].parse::<f64>().unwrap();
        e.2 += 1;
    }
    let mut out: Vec<(f64, f64)> = acc.into_values().map(|(x, s, c)| (x, s / c as f64)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}
