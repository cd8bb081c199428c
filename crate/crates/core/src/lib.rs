//! PMCNet: a multi-class lesion segmentation network built from progressive
//! feature fusion and dynamic attention blocks, together with the reverse-mode
//! autodiff core, training loop, evaluation metrics and synthetic dataset
//! tooling needed to run it end to end on a CPU.

pub mod cli;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Activation, Gradients, Graph, Var};
pub use tensor::{Shape, Tensor};
