use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{self, Dataset, TargetColumn, DEFAULT_SPLIT};
use crate::error::{Error, Result};
use crate::model::{Activation, ModelSpec, Task};
use crate::perturb::{ApplyLayers, LayerPreset, PerturbationSpec};
use crate::consistency::ConsistencySpec;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    GaussianMixture,
    Spirals,
    LinearRegression,
    Csv,
}

/// Where the data comes from. Each kind reads only its own fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default = "defaults::n")]
    pub n: usize,
    #[serde(default = "defaults::d")]
    pub d: usize,
    #[serde(default = "defaults::classes")]
    pub classes: usize,
    #[serde(default = "defaults::spread")]
    pub spread: f64,
    #[serde(default = "defaults::turns")]
    pub turns: f64,
    #[serde(default = "defaults::noise")]
    pub noise: f64,
    #[serde(default = "defaults::noise")]
    pub noise_std: f64,
    /// CSV file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_column: Option<TargetColumn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub standardize: bool,
}

mod defaults {
    pub fn n() -> usize {
        400
    }
    pub fn d() -> usize {
        2
    }
    pub fn classes() -> usize {
        3
    }
    pub fn spread() -> f64 {
        0.5
    }
    pub fn turns() -> f64 {
        1.5
    }
    pub fn noise() -> f64 {
        0.1
    }
    pub fn split() -> [f64; 3] {
        super::DEFAULT_SPLIT
    }
}

impl DatasetSpec {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let s = self.split;
        if s.iter().any(|&r| !(r >= 0.0)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            out.push(format!("dataset.split: ratios {s:?} must be non-negative and sum to 1"));
        }
        if self.kind == DatasetKind::Csv {
            if self.path.is_none() {
                out.push("dataset.path: required for kind = \"csv\"".into());
            }
            if self.target_column.is_none() {
                out.push("dataset.target_column: required for kind = \"csv\"".into());
            }
        }
        out
    }

    /// Builds the dataset; relative CSV paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<Dataset> {
        let mut ds = match self.kind {
            DatasetKind::GaussianMixture => data::gen_gaussian_mixture(self.n, self.d, self.classes, self.spread, self.seed)?,
            DatasetKind::Spirals => data::gen_spirals(self.n, self.turns, self.noise, self.seed)?,
            DatasetKind::LinearRegression => data::gen_linear_regression(self.n, self.d, self.noise_std, self.seed)?,
            DatasetKind::Csv => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config(vec!["dataset.path: required for kind = \"csv\"".into()]))?;
                let target = self
                    .target_column
                    .as_ref()
                    .ok_or_else(|| Error::Config(vec!["dataset.target_column: required for kind = \"csv\"".into()]))?;
                let task = self.task.unwrap_or(Task::Classification);
                return self.finish(data::load_csv(&base.join(path), target, task, self.split, self.seed)?);
            }
        };
        ds.resplit(self.split, self.seed)?;
        self.finish(ds)
    }

    fn finish(&self, mut ds: Dataset) -> Result<Dataset> {
        if self.standardize {
            ds.standardize()?;
        }
        ds.validate()?;
        Ok(ds)
    }
}

/// One experiment: a base configuration, optional sweep axes, and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Dotted config path, such as `train.consistency.alpha`, to the values
    /// it takes. Runs cover the cartesian product of all axes.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sweep: BTreeMap<String, Vec<Value>>,
}

/// A config with every optional field filled in; its keys are the set of
/// keys a config file may use.
fn schema() -> Table {
    let example = ExperimentConfig {
        name: String::new(),
        output_dir: Some(PathBuf::from(".")),
        seeds: vec![0],
        dataset: DatasetSpec {
            kind: DatasetKind::Csv,
            n: 0,
            d: 0,
            classes: 0,
            spread: 0.0,
            turns: 0.0,
            noise: 0.0,
            noise_std: 0.0,
            path: Some(PathBuf::from(".")),
            target_column: Some(TargetColumn::Index(0)),
            task: Some(Task::Classification),
            seed: 0,
            split: DEFAULT_SPLIT,
            standardize: false,
        },
        model: ModelSpec {
            layer_dims: vec![1, 1],
            activation: Activation::Relu,
            share_depth: 0,
            num_branches: 1,
            task: Task::Classification,
        },
        train: TrainConfig {
            betas: Some([0.0, 0.0]),
            perturbation: PerturbationSpec {
                apply_layers: ApplyLayers::Preset(LayerPreset::All),
                ..PerturbationSpec::default()
            },
            consistency: ConsistencySpec {
                weights: Some(vec![1.0]),
                ..ConsistencySpec::default()
            },
            ..TrainConfig::default()
        },
        sweep: BTreeMap::new(),
    };
    Table::try_from(&example).expect("schema example serializes")
}

fn unknown_keys(table: &Table, schema: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if prefix.is_empty() && k == "sweep" {
            continue;
        }
        match schema.get(k) {
            None => out.push(format!("{path}: unknown key")),
            Some(Value::Table(sub)) => {
                if let Value::Table(t) = v {
                    unknown_keys(t, sub, &path, out);
                }
            }
            Some(_) => {}
        }
    }
}

fn path_exists(schema: &Table, path: &str) -> bool {
    let mut cur = schema;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        match cur.get(*p) {
            Some(Value::Table(t)) if i + 1 < parts.len() => cur = t,
            Some(_) if i + 1 == parts.len() => return true,
            _ => return false,
        }
    }
    false
}

/// Sets `path` (dotted) in `table`, creating intermediate tables.
pub(crate) fn set_path(table: &mut Table, path: &str, value: Value) {
    let mut cur = table;
    let parts: Vec<&str> = path.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        if !entry.is_table() {
            *entry = Value::Table(Table::new());
        }
        cur = entry.as_table_mut().expect("table");
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
}

fn de_error(e: toml::de::Error) -> String {
    e.message().trim().to_string()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses and validates a config, reporting every problem at once.
    pub fn parse(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
            location: match e.span() {
                Some(span) => format!("config line {}", text[..span.start].lines().count().max(1)),
                None => "config".into(),
            },
            msg: de_error(e),
        })?;
        let schema = schema();
        let mut problems = Vec::new();
        unknown_keys(&table, &schema, "", &mut problems);
        if let Some(Value::Table(sweep)) = table.get("sweep") {
            for (axis, values) in sweep {
                if !path_exists(&schema, axis) || axis.starts_with("sweep") {
                    problems.push(format!("sweep.{axis}: does not name a config key"));
                }
                match values {
                    Value::Array(a) if !a.is_empty() => {}
                    _ => problems.push(format!("sweep.{axis}: must be a non-empty list")),
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let config: ExperimentConfig = table.try_into().map_err(|e| Error::Config(vec![de_error(e)]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Contract(format!("config serialization: {e}")))
    }

    /// Every problem across the base config and each sweep point.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.seeds.is_empty() {
            out.push("seeds: must list at least one seed".into());
        }
        let points = match self.points() {
            Ok(p) => p,
            Err(Error::Config(p)) => {
                out.extend(p);
                return out;
            }
            Err(e) => {
                out.push(e.to_string());
                return out;
            }
        };
        for (assign, cfg) in points {
            let label = label(&assign);
            for p in cfg.point_problems() {
                let msg = if label.is_empty() { p } else { format!("{p} (at {label})") };
                if !out.contains(&msg) {
                    out.push(msg);
                }
            }
        }
        out
    }

    fn point_problems(&self) -> Vec<String> {
        let mut out = self.dataset.problems();
        if let Err(Error::Spec(msg)) = self.model.validate() {
            out.extend(msg.split("; ").map(|m| format!("model: {m}")));
        }
        if self.model.validate().is_ok() {
            out.extend(self.train.problems(&self.model));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn sweep_axes(&self) -> Vec<String> {
        self.sweep.keys().cloned().collect()
    }

    /// The cartesian product of the sweep axes (last axis varies fastest),
    /// each as its assignments plus the substituted config.
    pub fn points(&self) -> Result<Vec<(BTreeMap<String, Value>, ExperimentConfig)>> {
        let mut base = self.clone();
        base.sweep.clear();
        let base_table = Table::try_from(&base).map_err(|e| Error::Contract(format!("config serialization: {e}")))?;
        let mut combos: Vec<BTreeMap<String, Value>> = vec![BTreeMap::new()];
        for (axis, values) in &self.sweep {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.insert(axis.clone(), v.clone());
                        c
                    })
                })
                .collect();
        }
        let mut problems = Vec::new();
        let mut out = Vec::new();
        for assign in combos {
            let mut t = base_table.clone();
            for (axis, v) in &assign {
                set_path(&mut t, axis, v.clone());
            }
            match t.try_into::<ExperimentConfig>() {
                Ok(cfg) => out.push((assign, cfg)),
                Err(e) => {
                    let msg = format!("sweep at {}: {}", label(&assign), de_error(e));
                    if !problems.contains(&msg) {
                        problems.push(msg);
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(out)
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// `axis=value` pairs joined by commas.
pub fn label(assign: &BTreeMap<String, Value>) -> String {
    assign
        .iter()
        .map(|(k, v)| format!("{k}={}", value_str(v)))
        .collect::<Vec<_>>()
        .join(",")
}

/// Plain rendering of a sweep value: no quotes around strings.
pub fn value_str(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Float(f) => f.to_string(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = r#"
name = "example"
seeds = [0, 1, 2]

[dataset]
kind = "spirals"
n = 100

[model]
layer_dims = [2, 8, 8, 2]
activation = "tanh"
share_depth = 1
num_branches = 2
task = "classification"

[train]
method = "camero"
optimizer = "adamax"
learning_rate = 0.01
epochs = 2
batch_size = 16
eval_every = 5

[train.perturbation]
family = "neuron_dropout"
p = 0.1

[train.consistency]
alpha = 1.0

[sweep]
"train.consistency.alpha" = [0.0, 1.0]
"#;

    #[test]
    fn parses_and_expands() {
        let c = ExperimentConfig::parse(EXAMPLE).unwrap();
        let points = c.points().unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].1.train.consistency.alpha, 0.0);
        assert_eq!(points[1].1.train.consistency.alpha, 1.0);
        assert!(points[1].1.sweep.is_empty());
    }

    #[test]
    fn cartesian_product_order() {
        let text = EXAMPLE.replace(
            "\"train.consistency.alpha\" = [0.0, 1.0]",
            "\"train.consistency.alpha\" = [0.0, 1.0]\n\"train.perturbation.p\" = [0.1, 0.2, 0.3]",
        );
        let c = ExperimentConfig::parse(&text).unwrap();
        let labels: Vec<String> = c.points().unwrap().iter().map(|(a, _)| label(a)).collect();
        assert_eq!(labels.len(), 6);
        assert_eq!(labels[0], "train.consistency.alpha=0,train.perturbation.p=0.1");
        assert_eq!(labels[1], "train.consistency.alpha=0,train.perturbation.p=0.2");
    }

    #[test]
    fn round_trip_is_stable() {
        let c = ExperimentConfig::parse(EXAMPLE).unwrap();
        let text = c.to_toml().unwrap();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn lists_every_bad_key() {
        let text = EXAMPLE
            .replace("n = 100", "n = 100\nwobble = 3")
            .replace("epochs = 2", "epochs = 2\nlearning_rat = 0.1")
            .replace("\"train.consistency.alpha\"", "\"train.consistency.alhpa\"");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        let msg = err.to_string();
        for key in ["dataset.wobble", "train.learning_rat", "sweep.train.consistency.alhpa"] {
            assert!(msg.contains(key), "{key} missing from {msg}");
        }
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn lists_every_bad_value() {
        let text = EXAMPLE
            .replace("learning_rate = 0.01", "learning_rate = -1.0")
            .replace("batch_size = 16", "batch_size = 0")
            .replace("seeds = [0, 1, 2]", "seeds = []");
        let msg = ExperimentConfig::parse(&text).unwrap_err().to_string();
        for key in ["train.learning_rate", "train.batch_size", "seeds"] {
            assert!(msg.contains(key), "{key} missing from {msg}");
        }
    }

    #[test]
    fn sweep_values_are_validated() {
        let text = EXAMPLE.replace("[0.0, 1.0]", "[0.0, -1.0]");
        let msg = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(msg.contains("train.consistency.alpha") && msg.contains("-1"), "{msg}");
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = ExperimentConfig::parse("seeds = [0\n[model\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }
}
