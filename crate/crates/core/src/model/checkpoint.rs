//! Text checkpoint format, version 1.
//!
//! ```text
//! camero-checkpoint 1
//! spec {"layer_dims":[2,8,3],"activation":"relu",...}
//! gated false
//! param trunk.layer1.W 2,8 0.125 -0.5 ...
//! param trunk.layer1.b 1,8 0 0 ...
//! ...
//! ```
//!
//! One `param` line per tensor in canonical parameter order: name, shape as
//! comma-separated sizes, then row-major values. Values use Rust's shortest
//! round-trip float formatting, so a write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{EnsembleModel, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "camero-checkpoint 1";

pub fn write_checkpoint(model: &EnsembleModel, path: &Path) -> Result<()> {
    let text = encode(model)?;
    crate::io::write_atomic(path, text.as_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<EnsembleModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode(&text)
}

pub(crate) fn encode(model: &EnsembleModel) -> Result<String> {
    let spec = serde_json::to_string(model.spec())
        .map_err(|e| Error::Contract(format!("spec serialization: {e}")))?;
    let mut out = format!("{CHECKPOINT_MAGIC}\nspec {spec}\ngated {}\n", model.gates().is_some());
    for (name, t) in model.param_names().iter().zip(model.params()) {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        write!(out, "param {name} {}", shape.join(",")).unwrap();
        for v in t.data() {
            write!(out, " {v:?}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub(crate) fn decode(text: &str) -> Result<EnsembleModel> {
    let perr = |line: usize, msg: String| Error::Parse {
        location: format!("checkpoint line {line}"),
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l == CHECKPOINT_MAGIC => {}
        _ => return Err(perr(1, format!("expected header {CHECKPOINT_MAGIC:?}"))),
    }
    let (n, spec_line) = lines.next().ok_or_else(|| perr(2, "missing spec".into()))?;
    let spec: ModelSpec = spec_line
        .strip_prefix("spec ")
        .ok_or_else(|| perr(n, "expected `spec`".into()))
        .and_then(|s| serde_json::from_str(s).map_err(|e| perr(n, e.to_string())))?;
    let (n, gated_line) = lines.next().ok_or_else(|| perr(3, "missing gated flag".into()))?;
    let gated = match gated_line {
        "gated true" => true,
        "gated false" => false,
        _ => return Err(perr(n, "expected `gated true|false`".into())),
    };

    let mut model = EnsembleModel::build(spec, 0)?;
    if gated {
        model = model.with_gates();
    }
    let names = model.param_names();
    let mut params = model.params_mut();
    let mut seen = 0;
    for (n, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let mut fields = line.split_ascii_whitespace();
        if fields.next() != Some("param") {
            return Err(perr(n, "expected `param`".into()));
        }
        let name = fields.next().ok_or_else(|| perr(n, "missing name".into()))?;
        let idx = names
            .iter()
            .position(|x| x == name)
            .ok_or_else(|| perr(n, format!("unknown parameter {name}")))?;
        let shape = fields
            .next()
            .ok_or_else(|| perr(n, "missing shape".into()))?
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|e| perr(n, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let values = fields
            .map(|s| s.parse::<f64>().map_err(|e| perr(n, format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if shape != params[idx].shape() {
            return Err(perr(
                n,
                format!("{name} has shape {shape:?}, spec needs {:?}", params[idx].shape()),
            ));
        }
        *params[idx] = Tensor::new(shape, values).map_err(|e| perr(n, e.to_string()))?;
        seen += 1;
    }
    if seen != names.len() {
        return Err(perr(0, format!("expected {} parameters, found {seen}", names.len())));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Task};

    fn model() -> EnsembleModel {
        let spec = ModelSpec {
            layer_dims: vec![3, 5, 4, 2],
            activation: Activation::Tanh,
            share_depth: 2,
            num_branches: 3,
            task: Task::Classification,
        };
        EnsembleModel::build(spec, 11).unwrap().with_gates()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = decode(&encode(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_wrong_header_and_shapes() {
        assert!(decode("camero-checkpoint 0\n").is_err());
        let text = encode(&model()).unwrap().replace("param trunk.layer1.W 3,5", "param trunk.layer1.W 5,3");
        assert!(decode(&text).is_err());
    }

    #[test]
    fn rejects_missing_parameters() {
        let text = encode(&model()).unwrap();
        let truncated: Vec<&str> = text.lines().take(5).collect();
        assert!(decode(&truncated.join("\n")).is_err());
    }
}
