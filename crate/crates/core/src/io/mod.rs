//! Persistence: images, checkpoints, configuration and tables.

pub mod checkpoint;
pub mod config;
pub mod pgm;

pub use checkpoint::{Checkpoint, CheckpointMeta, ModelKind};
pub use config::{ExperimentConfig, InferConfig};
