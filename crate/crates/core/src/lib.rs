//! Weight-shared multi-branch ensembles trained with per-branch
//! perturbations and a consistency regularizer, along with baseline
//! methods and an experiment runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consistency;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
