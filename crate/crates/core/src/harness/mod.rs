//! The experiment workflow behind the `cmdm` command line: dataset
//! generation, training, inference, ablation sweeps and reporting.
//!
//! Everything lives under `ExperimentConfig::output_dir`:
//!
//! ```text
//! config.toml                 last resolved configuration
//! data/manifest.json          splits, normalisation, hashes
//! data/{x,y0}/NNNN.pgm        16-bit images on [-1, 1] (+ .json sidecars)
//! train/{prior,denoiser}.ckpt checkpoints with optimizer and EMA state
//! train/*_loss.csv            loss curves
//! infer/<run>/                images, metrics.csv, report.json
//! ablate/ablation.csv
//! report.md
//! ```

mod data;
mod infer;
mod report;
mod train;

use std::path::{Path, PathBuf};

use serde::Serialize;

pub use data::{cmd_gen_data, load_dataset, DataSummary, Manifest, ManifestEntry};
pub use infer::{
    cmd_ablate, cmd_infer, load_models, AblationRow, CorrelationSummary, ImageMetrics,
    MetricSummary, Models, RunReport, SweepSpec, Timings,
};
pub use report::cmd_report;
pub use train::{cmd_train, LossRow, Stage, TrainOutcome};

use crate::error::{CmdmError, Result};
use crate::io::ExperimentConfig;

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Top-level stream tags under the master seed.
const TRAIN_TAG: u64 = 1;
const INFER_TAG: u64 = 2;
const SHUFFLE_TAG: u64 = 3;

pub fn data_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("data")
}

pub fn train_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("train")
}

pub fn checkpoint_path(cfg: &ExperimentConfig, stage: Stage) -> PathBuf {
    train_dir(cfg).join(format!("{}.ckpt", stage.as_str()))
}

pub fn infer_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .join("infer")
        .join(cfg.sampler.baseline_mode.as_str())
}

pub fn ablate_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("ablate")
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(CmdmError::Io)
}

/// Records the resolved configuration next to the artifacts.
fn write_config(cfg: &ExperimentConfig) -> Result<()> {
    create_dir(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml_string())?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CmdmError::invalid(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CmdmError::NotFound(path.display().to_string()),
        _ => CmdmError::Io(e),
    })?;
    serde_json::from_str(&text).map_err(|e| CmdmError::Parse {
        offset: 0,
        message: format!("{}: {e}", path.display()),
    })
}

fn csv_error(path: &Path, e: csv::Error) -> CmdmError {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CmdmError::Io(io),
        other => CmdmError::Parse {
            offset,
            message: format!("{}: {other:?}", path.display()),
        },
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            CmdmError::NotFound(path.display().to_string())
        }
        _ => csv_error(path, e),
    })?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}
