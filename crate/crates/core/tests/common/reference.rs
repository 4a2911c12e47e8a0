//! A plain single-network training loop, written without the ensemble
//! machinery, used to pin down the m = 1, alpha = 0 reduction.

use camero::consistency::ConsistencySpec;
use camero::data::{gen_gaussian_mixture, Dataset};
use camero::model::{Activation, EnsembleModel, ModelSpec, Task};
use camero::perturb::PerturbationSpec;
use camero::tensor::{Graph, Tensor, Var};
use camero::train::{cross_entropy, Method, OptimizerKind, TrainConfig, Trainer};
use camero::Result;

pub struct Reduction {
    pub steps: usize,
    /// First step whose loss differs in any bit.
    pub loss_mismatch: Option<usize>,
    /// First step after which any parameter differs in any bit.
    pub param_mismatch: Option<usize>,
}

pub fn reduction_setup(share_depth: usize) -> (Dataset, ModelSpec, TrainConfig) {
    let data = gen_gaussian_mixture(240, 3, 3, 0.7, 5).unwrap();
    let spec = ModelSpec {
        layer_dims: vec![3, 16, 16, 3],
        activation: Activation::Tanh,
        share_depth,
        num_branches: 1,
        task: Task::Classification,
    };
    let config = TrainConfig {
        method: Method::Camero,
        optimizer: OptimizerKind::Adamax,
        learning_rate: 0.01,
        batch_size: 16,
        epochs: 100,
        seed: 9,
        perturbation: PerturbationSpec::none(),
        consistency: ConsistencySpec {
            alpha: 0.0,
            ..ConsistencySpec::default()
        },
        ..TrainConfig::default()
    };
    (data, spec, config)
}

struct Adamax {
    lr: f64,
    b1: f64,
    b2: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
}

impl Adamax {
    fn new(lr: f64, params: &[Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self { lr, b1: 0.9, b2: 0.999, t: 0, m: zeros.clone(), u: zeros }
    }

    fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let step = self.lr / (1.0 - self.b1.powi(self.t));
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                self.m[k][i] = self.b1 * self.m[k][i] + (1.0 - self.b1) * gi;
                self.u[k][i] = (self.b2 * self.u[k][i]).max(gi.abs());
                if self.u[k][i] > 0.0 {
                    *w -= step * self.m[k][i] / self.u[k][i];
                }
            }
        }
    }
}

/// Tanh MLP over `[W1, b1, W2, b2, ...]`.
fn forward(g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
    let layers = params.len() / 2;
    let mut h = x;
    for k in 0..layers {
        let n = g.value(h).rows();
        let xw = g.matmul(h, params[2 * k])?;
        let ones = g.constant(Tensor::ones(&[n, 1]));
        let b = g.matmul(ones, params[2 * k + 1])?;
        h = g.add(xw, b)?;
        if k + 1 < layers {
            h = g.tanh(h);
        }
    }
    Ok(h)
}

/// Runs the ensemble trainer and the reference loop side by side on the
/// same batches for `steps` updates.
pub fn reduction_identity(steps: usize, share_depth: usize) -> Result<Reduction> {
    let (data, spec, config) = reduction_setup(share_depth);
    let mut trainer = Trainer::new(&config, &spec, &data)?;
    let init = EnsembleModel::build(spec.clone(), config.seed)?;
    let mut params: Vec<Tensor> = init.params().into_iter().cloned().collect();
    let mut opt = Adamax::new(config.learning_rate, &params);

    let mut out = Reduction { steps: 0, loss_mismatch: None, param_mismatch: None };
    let mut epoch = 0;
    'outer: loop {
        let order = trainer.epoch_order(epoch);
        for chunk in order.chunks(config.batch_size) {
            if out.steps == steps {
                break 'outer;
            }
            let batch = data.batch(chunk);
            let log = trainer.step_on(&batch)?;

            let mut g = Graph::new();
            let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
            let x = g.constant(batch.x.clone());
            let logits = forward(&mut g, &vars, x)?;
            let labels = match &batch.y {
                camero::data::Targets::Classes { labels, .. } => labels.clone(),
                _ => unreachable!("classification data"),
            };
            let loss = cross_entropy(&mut g, logits, &labels)?;
            g.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| g.grad(v).cloned().unwrap()).collect();
            let value = g.value(loss).item();
            opt.update(&mut params, &grads);

            out.steps += 1;
            let same_loss = log.task_loss.to_bits() == value.to_bits() && log.total_loss.to_bits() == value.to_bits();
            if !same_loss && out.loss_mismatch.is_none() {
                out.loss_mismatch = Some(out.steps);
            }
            let same_params = trainer
                .model
                .params()
                .iter()
                .zip(&params)
                .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            if !same_params && out.param_mismatch.is_none() {
                out.param_mismatch = Some(out.steps);
            }
        }
        epoch += 1;
    }
    Ok(out)
}
