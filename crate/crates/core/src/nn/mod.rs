//! A small trainable network engine: 3x3 convolutions, ReLU, biases, skip
//! concatenation and global pooling with exact analytic gradients, plus Adam
//! with linear warmup and parameter EMA.
//!
//! All arithmetic is `f64`. Batches are processed sample by sample (in
//! parallel when the `parallel` feature is on) and parameter gradients are
//! summed in sample order, so results do not depend on the worker count.

pub mod arch;
mod conv;
mod gradcheck;
mod network;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, LossSpec, FD_STEP};
pub use network::{Gradients, LayerKind, LayerSpec, Network, Tape};
pub use optim::{adam_step, AdamConfig, EmaState, OptimizerState};
pub use tensor::FeatureMap;
