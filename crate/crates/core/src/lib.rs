//! Cascaded multi-path shortcut diffusion for paired image-to-image
//! translation.
//!
//! A one-step prior generator produces a rough translation, which is noised
//! to an intermediate timestep and denoised by a conditional noise predictor
//! along several independent paths. The path average is the translation and
//! the per-pixel spread across paths is its uncertainty. Cascades repeat the
//! procedure with a prior formed by averaging the previous prior and the
//! previous output.
//!
//! Modules, bottom-up:
//!
//! * [`grid`], [`rng`]: image grids and counter-derived random streams.
//! * [`schedule`], [`diffusion`]: the noise schedule and the forward /
//!   reverse process math.
//! * [`nn`]: the network engine used to train all learned models.
//! * [`models`]: prior generator, noise predictor, discriminator, training.
//! * [`sampler`]: shortcut paths, multi-path averaging, cascades.
//! * [`tasks`]: synthetic paired datasets (sparse-view CT, blur, mask).
//! * [`metrics`]: PSNR, SSIM, MAE, Pearson correlation.
//! * [`io`], [`harness`]: persistence formats and the experiment workflow.

pub mod diffusion;
pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tasks;

pub use error::{CmdmError, Result};
pub use grid::Grid2D;
pub use rng::RngStream;
pub use schedule::NoiseSchedule;
