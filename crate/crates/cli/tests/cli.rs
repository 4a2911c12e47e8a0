use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn camero(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camero"))
        .args(args)
        .env_remove("CAMERO_OUT")
        .output()
        .unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn recipes() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/recipes");
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    out.sort();
    out
}

/// A copy of `recipe` cut down to one seed and one epoch.
fn shrink(recipe: &Path, dir: &Path) -> PathBuf {
    let mut v: toml::Table = fs::read_to_string(recipe).unwrap().parse().unwrap();
    v.insert("seeds".into(), toml::Value::Array(vec![toml::Value::Integer(0)]));
    v["train"].as_table_mut().unwrap().insert("epochs".into(), toml::Value::Integer(1));
    let path = dir.join(recipe.file_name().unwrap());
    fs::write(&path, toml::to_string(&v).unwrap()).unwrap();
    path
}

const SMALL: &str = r#"
name = "small"
seeds = [0, 1]

[dataset]
kind = "gaussian_mixture"
n = 90
classes = 3
spread = 0.3
seed = 2

[model]
layer_dims = [2, 8, 3]
activation = "relu"
share_depth = 1
num_branches = 3
task = "classification"

[train]
method = "camero"
optimizer = "adamax"
learning_rate = 0.01
epochs = 2
batch_size = 16
eval_every = 4

[train.perturbation]
family = "neuron_dropout"
p = 0.1

[sweep]
"train.consistency.alpha" = [0.0, 1.0, 2.0]
"#;

#[test]
fn every_recipe_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let list = recipes();
    assert!(list.len() >= 5);
    for recipe in list {
        let small = shrink(&recipe, tmp.path());
        let out = tmp.path().join(recipe.file_stem().unwrap());
        let o = camero(&["run", "--config", path_str(&small), "--out", path_str(&out)]);
        assert!(o.status.success(), "{}: {}", recipe.display(), String::from_utf8_lossy(&o.stderr));
        assert!(out.join("index.json").exists());
    }
}

#[test]
fn run_compare_figdata_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = tmp.path().join("out");
    let o = camero(&["run", "--config", path_str(&cfg), "--out", path_str(&out), "--jobs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reports = fs::read_dir(out.join("runs"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json"))
        .count();
    assert_eq!(reports, 6);

    let table = tmp.path().join("table.csv");
    let o = camero(&["compare", path_str(&out), "--out", path_str(&table)]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("± "));
    assert_eq!(fs::read_to_string(&table).unwrap().lines().count(), 4);

    let o = camero(&["figdata", "--index", path_str(&out), "--figure", "alpha_sweep"]);
    assert!(o.status.success());
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some("x,series,value,seed"));
    // dev and test rows for 3 alphas x 2 seeds
    assert_eq!(csv.lines().count(), 1 + 12);

    let features = tmp.path().join("x.csv");
    fs::write(&features, "a,b,label\n0.9,0.1,0\n-0.5,0.8,1\n-0.5,-0.8,2\n").unwrap();
    let ckpt = out.join("runs/p000-s0.ckpt");
    let o = camero(&["predict", "--checkpoint", path_str(&ckpt), "--input", path_str(&features), "--drop-column", "label"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pred = String::from_utf8(o.stdout).unwrap();
    assert_eq!(pred.lines().next(), Some("row,ensemble,branch0,branch1,branch2"));
    assert_eq!(pred.lines().count(), 4);
}

#[test]
fn seeds_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = tmp.path().join("out");
    let o = camero(&["run", "--config", path_str(&cfg), "--out", path_str(&out), "--seeds", "3..5"]);
    assert!(o.status.success());
    let index = fs::read_to_string(out.join("index.json")).unwrap();
    assert!(index.contains("p002-s4"));
    assert!(!index.contains("-s0\""));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    fs::write(&cfg, SMALL.replace("seeds = [0, 1]", "seeds = [0]")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_camero"))
        .args(["run", "--config", path_str(&cfg)])
        .env("CAMERO_OUT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("root/small/index.json").exists());
}

#[test]
fn invalid_config_exits_with_1_and_lists_every_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    let text = SMALL
        .replace("learning_rate = 0.01", "learning_rate = -1.0\nmomentum = 0.9")
        .replace("p = 0.1", "p = 1.5");
    fs::write(&cfg, text).unwrap();
    let o = camero(&["run", "--config", path_str(&cfg), "--out", path_str(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("momentum"), "{err}");

    fs::write(&cfg, SMALL.replace("learning_rate = 0.01", "learning_rate = -1.0").replace("p = 0.1", "p = 1.5")).unwrap();
    let o = camero(&["run", "--config", path_str(&cfg), "--out", path_str(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("learning_rate") && err.contains("p"), "{err}");

    let o = camero(&["run"]);
    assert_eq!(o.status.code(), Some(1));
    let o = camero(&["figdata", "--index", "x", "--figure", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = camero(&["compare", path_str(&tmp.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = tmp.path().join("nan.toml");
    fs::write(&cfg, SMALL.replace("learning_rate = 0.01", "learning_rate = 1e300")).unwrap();
    let out = tmp.path().join("o");
    let o = camero(&["run", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let index = fs::read_to_string(out.join("index.json")).unwrap();
    assert!(index.contains("\"failed\""));
}
