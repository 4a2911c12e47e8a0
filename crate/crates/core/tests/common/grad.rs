use camero::consistency::{self, Metric};
use camero::rng::{substream, Rng};
use camero::tensor::{check_gradient, Graph, Tensor, Var};
use camero::train::cross_entropy;
use camero::Result;
use rand::Rng as _;

use super::rand_tensor;

pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;
pub const STEP: f64 = 1e-5;

type Build = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

pub struct Case {
    pub name: &'static str,
    make: fn(&mut Rng) -> (Tensor, Build),
}

#[derive(Debug)]
pub struct CaseResult {
    pub name: &'static str,
    pub points: usize,
    pub failures: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

/// `sum(out * r)` for a fixed random `r`, so every output entry matters.
fn project(g: &mut Graph, out: Var, r: &Tensor) -> Result<Var> {
    let r = g.constant(r.clone());
    let p = g.mul(out, r)?;
    Ok(g.sum(p))
}

fn weights(rng: &mut Rng, shape: &[usize]) -> Tensor {
    rand_tensor(rng, shape, -1.0, 1.0)
}

/// Values at least 0.05 away from zero, so relu has no kink within a step.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape, 0.05, 2.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

macro_rules! binary_case {
    ($name:literal, $op:ident, $lhs:expr) => {
        Case {
            name: $name,
            make: |rng| {
                let x = rand_tensor(rng, &[3, 4], -2.0, 2.0);
                let c = rand_tensor(rng, &[3, 4], -2.0, 2.0);
                let r = weights(rng, &[3, 4]);
                let lhs: bool = $lhs;
                (
                    x,
                    Box::new(move |g, x| {
                        let c = g.constant(c.clone());
                        let out = if lhs { g.$op(x, c)? } else { g.$op(c, x)? };
                        project(g, out, &r)
                    }),
                )
            },
        }
    };
}

macro_rules! scalar_broadcast_case {
    ($name:literal, $op:ident, $lhs:expr) => {
        Case {
            name: $name,
            make: |rng| {
                let x = rand_tensor(rng, &[1], -2.0, 2.0);
                let c = rand_tensor(rng, &[3, 4], -2.0, 2.0);
                let r = weights(rng, &[3, 4]);
                let lhs: bool = $lhs;
                (
                    x,
                    Box::new(move |g, x| {
                        let c = g.constant(c.clone());
                        let out = if lhs { g.$op(x, c)? } else { g.$op(c, x)? };
                        project(g, out, &r)
                    }),
                )
            },
        }
    };
}

macro_rules! unary_case {
    ($name:literal, $lo:expr, $hi:expr, |$g:ident, $x:ident| $body:expr) => {
        Case {
            name: $name,
            make: |rng| {
                let x = rand_tensor(rng, &[3, 4], $lo, $hi);
                let r = weights(rng, &[3, 4]);
                (
                    x,
                    Box::new(move |$g, $x| {
                        let out = $body;
                        project($g, out, &r)
                    }),
                )
            },
        }
    };
}

/// Splits a `[m * n, c]` input into `m` branch logits with constant
/// row-selection matrices.
fn split_rows(g: &mut Graph, x: Var, m: usize) -> Result<Vec<Var>> {
    let rows = g.value(x).rows();
    let n = rows / m;
    (0..m)
        .map(|j| {
            let mut s = Tensor::zeros(&[n, rows]);
            for i in 0..n {
                s.data_mut()[i * rows + j * n + i] = 1.0;
            }
            let s = g.constant(s);
            g.matmul(s, x)
        })
        .collect()
}

fn regularizer_case(rng: &mut Rng, m: usize, f: fn(&mut Graph, &[Var]) -> Result<Var>) -> (Tensor, Build) {
    let x = rand_tensor(rng, &[m * 4, 3], -3.0, 3.0);
    (
        x,
        Box::new(move |g, x| {
            let logits = split_rows(g, x, m)?;
            f(g, &logits)
        }),
    )
}

pub fn cases() -> Vec<Case> {
    vec![
        binary_case!("add_lhs", add, true),
        binary_case!("add_rhs", add, false),
        scalar_broadcast_case!("add_scalar_broadcast", add, true),
        binary_case!("sub_lhs", sub, true),
        binary_case!("sub_rhs", sub, false),
        scalar_broadcast_case!("sub_scalar_broadcast", sub, false),
        binary_case!("mul_lhs", mul, true),
        binary_case!("mul_rhs", mul, false),
        scalar_broadcast_case!("mul_scalar_broadcast", mul, true),
        unary_case!("mul_self", -2.0, 2.0, |g, x| g.mul(x, x)?),
        unary_case!("scale", -2.0, 2.0, |g, x| g.scale(x, -1.7)),
        Case {
            name: "matmul_lhs",
            make: |rng| {
                let x = rand_tensor(rng, &[3, 4], -1.0, 1.0);
                let b = rand_tensor(rng, &[4, 2], -1.0, 1.0);
                let r = weights(rng, &[3, 2]);
                (
                    x,
                    Box::new(move |g, x| {
                        let b = g.constant(b.clone());
                        let out = g.matmul(x, b)?;
                        project(g, out, &r)
                    }),
                )
            },
        },
        Case {
            name: "matmul_rhs",
            make: |rng| {
                let x = rand_tensor(rng, &[4, 2], -1.0, 1.0);
                let a = rand_tensor(rng, &[3, 4], -1.0, 1.0);
                let r = weights(rng, &[3, 2]);
                (
                    x,
                    Box::new(move |g, x| {
                        let a = g.constant(a.clone());
                        let out = g.matmul(a, x)?;
                        project(g, out, &r)
                    }),
                )
            },
        },
        Case {
            name: "relu",
            make: |rng| {
                let x = away_from_zero(rng, &[3, 4]);
                let r = weights(rng, &[3, 4]);
                (
                    x,
                    Box::new(move |g, x| {
                        let out = g.relu(x);
                        project(g, out, &r)
                    }),
                )
            },
        },
        unary_case!("tanh", -2.0, 2.0, |g, x| g.tanh(x)),
        unary_case!("exp", -2.0, 2.0, |g, x| g.exp(x)),
        unary_case!("ln", 0.2, 3.0, |g, x| g.ln(x)),
        unary_case!("ln_floor", 0.2, 3.0, |g, x| g.ln_floor(x, 1e-12)),
        unary_case!("sum", -2.0, 2.0, |g, x| {
            let s = g.sum(x);
            g.mul(s, s)?
        }),
        unary_case!("mean", -2.0, 2.0, |g, x| {
            let s = g.mean(x);
            g.mul(s, s)?
        }),
        unary_case!("softmax_rows", -3.0, 3.0, |g, x| g.softmax(x, 1)?),
        unary_case!("softmax_cols", -3.0, 3.0, |g, x| g.softmax(x, 0)?),
        unary_case!("log_softmax_rows", -3.0, 3.0, |g, x| g.log_softmax(x, 1)?),
        unary_case!("log_softmax_cols", -3.0, 3.0, |g, x| g.log_softmax(x, 0)?),
        Case {
            name: "cross_entropy",
            make: |rng| {
                let x = rand_tensor(rng, &[5, 3], -3.0, 3.0);
                let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
                (x, Box::new(move |g, x| cross_entropy(g, x, &labels)))
            },
        },
        Case {
            name: "gated_ensemble_gates",
            make: |rng| {
                let gates = rand_tensor(rng, &[1, 3], 0.0, 1.0);
                let logits: Vec<Tensor> = (0..3).map(|_| rand_tensor(rng, &[4, 3], -2.0, 2.0)).collect();
                let r = weights(rng, &[4, 3]);
                (
                    gates,
                    Box::new(move |g, gates| {
                        let ls: Vec<Var> = logits.iter().map(|t| g.constant(t.clone())).collect();
                        let out = consistency::gated_ensemble_logits(g, &ls, gates)?;
                        project(g, out, &r)
                    }),
                )
            },
        },
        Case {
            name: "ensemble_consistency_skl",
            make: |rng| {
                regularizer_case(rng, 3, |g, l| {
                    consistency::ensemble_consistency(g, l, &[0.2, 0.3, 0.5], Metric::SymmetricKl, false)
                })
            },
        },
        Case {
            name: "ensemble_consistency_sq_euclid",
            make: |rng| {
                regularizer_case(rng, 3, |g, l| {
                    consistency::ensemble_consistency(g, l, &[1.0 / 3.0; 3], Metric::SquaredEuclidean, false)
                })
            },
        },
        Case {
            name: "pairwise_consistency_skl",
            make: |rng| regularizer_case(rng, 3, |g, l| consistency::pairwise_consistency(g, l, Metric::SymmetricKl)),
        },
        Case {
            name: "pairwise_consistency_sq_euclid",
            make: |rng| {
                regularizer_case(rng, 3, |g, l| consistency::pairwise_consistency(g, l, Metric::SquaredEuclidean))
            },
        },
    ]
}

/// Checks every case at `points` random inputs.
pub fn run_all(points: usize, seed: u64) -> Result<Vec<CaseResult>> {
    cases()
        .into_iter()
        .enumerate()
        .map(|(ci, case)| {
            let mut rng = substream(seed, &[ci as u64]);
            let mut res = CaseResult {
                name: case.name,
                points,
                failures: 0,
                max_abs_err: 0.0,
                max_rel_err: 0.0,
            };
            for _ in 0..points {
                let (x, build) = (case.make)(&mut rng);
                let chk = check_gradient(|g, v| build(g, v), &x, STEP, REL_TOL, ABS_TOL)?;
                res.max_abs_err = res.max_abs_err.max(chk.max_abs_err);
                res.max_rel_err = res.max_rel_err.max(chk.max_rel_err);
                if !chk.passed {
                    res.failures += 1;
                }
            }
            Ok(res)
        })
        .collect()
}
