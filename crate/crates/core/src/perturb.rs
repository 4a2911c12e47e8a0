//! Perturbation families used to make weight-shared branches differ during
//! training: neuron dropout, Gaussian noise with a fixed norm, virtual
//! adversarial input perturbation, and input-feature dropout.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnsembleModel, LayerPerturbation, PerturbationSet, Task};
use crate::rng::{self, domain, Rng};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    None,
    NeuronDropout,
    GaussianNoise,
    VirtualAdversarial,
    InputDropout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerPreset {
    /// Every hidden layer `1..K`.
    All,
    /// Hidden layers inside the shared trunk only.
    TrunkOnly,
    InputOnly,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ApplyLayers {
    Preset(LayerPreset),
    Explicit(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSpec {
    pub family: Family,
    /// Dropout ratio.
    pub p: f64,
    /// Norm bound for Gaussian and virtual adversarial perturbations.
    pub epsilon: f64,
    /// Probe scale of the virtual adversarial power-iteration step.
    pub xi: f64,
    pub apply_layers: ApplyLayers,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            family: Family::NeuronDropout,
            p: 0.1,
            epsilon: 1e-5,
            xi: 1e-6,
            apply_layers: ApplyLayers::Preset(LayerPreset::All),
        }
    }
}

impl PerturbationSpec {
    pub fn none() -> Self {
        Self {
            family: Family::None,
            ..Self::default()
        }
    }

    pub fn dropout(p: f64) -> Self {
        Self {
            family: Family::NeuronDropout,
            p,
            ..Self::default()
        }
    }

    /// Problems with this spec, as `key: message` strings.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..1.0).contains(&self.p) {
            out.push(format!("perturbation.p: must be in [0, 1), got {}", self.p));
        }
        if !(self.epsilon >= 0.0) {
            out.push(format!("perturbation.epsilon: must be >= 0, got {}", self.epsilon));
        }
        if !(self.xi > 0.0) {
            out.push(format!("perturbation.xi: must be > 0, got {}", self.xi));
        }
        let input_only = self.apply_layers == ApplyLayers::Preset(LayerPreset::InputOnly);
        match self.family {
            Family::InputDropout | Family::VirtualAdversarial if !input_only => out.push(format!(
                "perturbation.apply_layers: {:?} perturbs the input, set apply_layers = \"input_only\"",
                self.family
            )),
            Family::VirtualAdversarial if !(self.epsilon > 0.0) => {
                out.push("perturbation.epsilon: virtual adversarial needs epsilon > 0".into())
            }
            Family::NeuronDropout if input_only => out.push(
                "perturbation.apply_layers: neuron dropout acts on hidden layers, use input_dropout for inputs"
                    .into(),
            ),
            _ => {}
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Spec(problems.join("; ")))
        }
    }

    /// Hidden layers (in `1..K`) this spec perturbs for the given model.
    pub fn hidden_layers(&self, depth: usize, share_depth: usize) -> Result<Vec<usize>> {
        let hidden = 1..depth;
        Ok(match &self.apply_layers {
            ApplyLayers::Preset(LayerPreset::All) => hidden.collect(),
            ApplyLayers::Preset(LayerPreset::TrunkOnly) => {
                hidden.filter(|&k| k <= share_depth).collect()
            }
            ApplyLayers::Preset(LayerPreset::InputOnly) => vec![],
            ApplyLayers::Explicit(ks) => {
                if let Some(&k) = ks.iter().find(|k| !hidden.contains(k)) {
                    return Err(Error::Perturbation {
                        layer: k,
                        msg: format!("layer index outside 1..{depth}"),
                    });
                }
                ks.clone()
            }
        })
    }
}

fn check_ratio(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Spec(format!("dropout ratio must be in [0, 1), got {p}")))
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1 / (1 - p)`, so the masked value is unbiased.
pub fn sample_dropout_mask(shape: &[usize], p: f64, rng: &mut Rng) -> Result<Tensor> {
    check_ratio(p)?;
    let keep = 1.0 / (1.0 - p);
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Standard normal draw rescaled to have L2 norm exactly `epsilon`.
pub fn sample_gaussian(shape: &[usize], epsilon: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(epsilon >= 0.0) {
        return Err(Error::Spec(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let numel: usize = shape.iter().product();
    let raw: Vec<f64> = (0..numel).map(|_| rng.sample(StandardNormal)).collect();
    if epsilon == 0.0 {
        return Ok(Tensor::zeros(shape));
    }
    let t = Tensor::new(shape.to_vec(), raw)?;
    Ok(rescale(&t, epsilon))
}

fn rescale(t: &Tensor, norm: f64) -> Tensor {
    let n = t.norm_l2();
    let scaled = t.map(|v| v / n * norm);
    // one correction pass pins the norm to the last ulp or so
    let m = scaled.norm_l2();
    scaled.map(|v| v * (norm / m))
}

/// Input-feature dropout: zeroes each entry of `x` with probability `p`,
/// without rescaling the survivors.
pub fn input_dropout(x: &Tensor, p: f64, rng: &mut Rng) -> Result<Tensor> {
    let mask = input_dropout_mask(x.shape(), p, rng)?;
    Ok(x.zip_map(&mask, |a, b| a * b))
}

fn input_dropout_mask(shape: &[usize], p: f64, rng: &mut Rng) -> Result<Tensor> {
    check_ratio(p)?;
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// One power-iteration step toward the input direction that most changes
/// branch `j`'s output distribution.
///
/// The probe `delta0` is `sample_gaussian(x.shape(), xi, rng)`. With the
/// clean prediction held constant, the gradient of
/// `KL(f(x) || f(x + delta0))` (squared output distance for regression)
/// with respect to `delta0` is normalized to length `epsilon`. When that
/// gradient vanishes the probe direction itself is returned.
pub fn virtual_adversarial(
    model: &EnsembleModel,
    j: usize,
    x: &Tensor,
    epsilon: f64,
    xi: f64,
    rng: &mut Rng,
) -> Result<Tensor> {
    if !(epsilon > 0.0 && xi > 0.0) {
        return Err(Error::Spec(format!(
            "virtual adversarial needs epsilon > 0 and xi > 0, got {epsilon} and {xi}"
        )));
    }
    let probe = sample_gaussian(x.shape(), xi, rng)?;

    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let none = PerturbationSet::none();
    let clean = model.forward_branch(&mut g, &bound, j, xv, &none)?;
    let clean = g.detach(clean);
    let d = g.param(probe.clone());
    let shifted_x = g.add(xv, d)?;
    let shifted = model.forward_branch(&mut g, &bound, j, shifted_x, &none)?;
    let n = x.rows() as f64;
    let div = match model.spec().task {
        Task::Classification => {
            let p = g.value(clean).softmax(1)?;
            let log_p = g.value(clean).log_softmax(1)?;
            let p = g.constant(p);
            let log_p = g.constant(log_p);
            let log_q = g.log_softmax(shifted, 1)?;
            let diff = g.sub(log_p, log_q)?;
            let terms = g.mul(p, diff)?;
            let total = g.sum(terms);
            g.scale(total, 1.0 / n)
        }
        Task::Regression => {
            let diff = g.sub(shifted, clean)?;
            let sq = g.mul(diff, diff)?;
            let total = g.sum(sq);
            g.scale(total, 1.0 / n)
        }
    };
    g.backward(div)?;
    let grad = g.grad(d).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    if !grad.is_finite() {
        return Err(Error::Numeric("virtual adversarial gradient is not finite".into()));
    }
    if grad.norm_l2() < 1e-12 {
        Ok(rescale(&probe, epsilon))
    } else {
        Ok(rescale(&grad, epsilon))
    }
}

/// Identifies the random substreams of one training step.
#[derive(Clone, Copy, Debug)]
pub struct StreamKey {
    pub seed: u64,
    pub step: u64,
}

impl StreamKey {
    /// Stream for (step, branch, layer); layer 0 is the input.
    pub fn rng(&self, branch: usize, layer: usize) -> Rng {
        rng::substream(
            self.seed,
            &[domain::PERTURB, self.step, branch as u64, layer as u64],
        )
    }
}

/// Samples `Delta_j` for branch `j` on input batch `x`.
pub fn sample_branch(
    spec: &PerturbationSpec,
    model: &EnsembleModel,
    j: usize,
    x: &Tensor,
    key: StreamKey,
) -> Result<PerturbationSet> {
    let mut set = PerturbationSet::none();
    let mspec = model.spec();
    let n = x.rows();
    let hidden = spec.hidden_layers(mspec.depth(), mspec.share_depth)?;
    match spec.family {
        Family::None => {}
        Family::NeuronDropout => {
            for k in hidden {
                let mask = sample_dropout_mask(&[n, mspec.layer_dims[k]], spec.p, &mut key.rng(j, k))?;
                set.layers.insert(k, LayerPerturbation::Mask(mask));
            }
        }
        Family::GaussianNoise => {
            if spec.apply_layers == ApplyLayers::Preset(LayerPreset::InputOnly) {
                let d = sample_gaussian(x.shape(), spec.epsilon, &mut key.rng(j, 0))?;
                set.input = Some(LayerPerturbation::Additive(d));
            }
            for k in hidden {
                let d = sample_gaussian(&[n, mspec.layer_dims[k]], spec.epsilon, &mut key.rng(j, k))?;
                set.layers.insert(k, LayerPerturbation::Additive(d));
            }
        }
        Family::VirtualAdversarial => {
            let d = virtual_adversarial(model, j, x, spec.epsilon, spec.xi, &mut key.rng(j, 0))?;
            set.input = Some(LayerPerturbation::Additive(d));
        }
        Family::InputDropout => {
            let mask = input_dropout_mask(x.shape(), spec.p, &mut key.rng(j, 0))?;
            set.input = Some(LayerPerturbation::Mask(mask));
        }
    }
    Ok(set)
}
