use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{create_dir, data_dir, read_json, write_config, write_json};
use crate::error::{CmdmError, Result};
use crate::io::pgm;
use crate::io::ExperimentConfig;
use crate::rng::RngStream;
use crate::tasks::{
    make_paired_dataset, Normalization, PairedDataset, Sample, Split, TaskSpec, TaskTag,
};

const MANIFEST_VERSION: u32 = 1;
const DATA_TAG: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub split: Split,
    /// Paths relative to the data directory.
    pub x: PathBuf,
    pub y0: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub data_hash: String,
    pub config_hash: String,
    pub task: TaskTag,
    pub dataset_seed: u64,
    pub task_spec: TaskSpec,
    /// Raw intensities `[lo, hi]` map to the stored `[-1, 1]`.
    pub normalization: Normalization,
    pub bits: u8,
    pub split_counts: SplitCounts,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct DataSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// False when an identical dataset was already present.
    pub generated: bool,
    pub seconds: f64,
    /// Seconds the dataset took to generate, whenever that happened.
    pub generation_seconds: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct GenerationTime {
    seconds: f64,
}

fn manifest_path(cfg: &ExperimentConfig) -> PathBuf {
    data_dir(cfg).join("manifest.json")
}

fn complete(dir: &Path, m: &Manifest) -> bool {
    m.entries
        .iter()
        .all(|e| dir.join(&e.x).exists() && dir.join(&e.y0).exists())
}

/// Generates the paired dataset and writes it as 16-bit images on `[-1, 1]`
/// plus a manifest. Does nothing when the same dataset is already present.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<DataSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = data_dir(cfg);
    let data_hash = cfg.data_hash();
    if let Ok(existing) = read_json::<Manifest>(&manifest_path(cfg)) {
        if existing.data_hash != data_hash {
            return Err(CmdmError::Compatibility(format!(
                "{} holds dataset {}, the configuration describes {data_hash}",
                dir.display(),
                existing.data_hash
            )));
        }
        if complete(&dir, &existing) {
            let generation_seconds = read_json::<GenerationTime>(&dir.join("generation.json"))
                .ok()
                .map(|g| g.seconds);
            return Ok(DataSummary {
                dir,
                manifest: existing,
                generated: false,
                seconds: start.elapsed().as_secs_f64(),
                generation_seconds,
            });
        }
    }
    write_config(cfg)?;
    let data = make_paired_dataset(
        cfg.task,
        cfg.dataset_size,
        &RngStream::derive(cfg.dataset_seed, &[DATA_TAG]),
        &cfg.task_spec(),
    )?;
    create_dir(&dir.join("x"))?;
    create_dir(&dir.join("y0"))?;
    let config_hash = cfg.config_hash();
    let mut entries = Vec::with_capacity(data.len());
    for (i, (s, split)) in data.samples.iter().zip(&data.splits).enumerate() {
        let name = format!("{i:04}.pgm");
        let e = ManifestEntry {
            index: i,
            split: *split,
            x: Path::new("x").join(&name),
            y0: Path::new("y0").join(&name),
        };
        pgm::write_image_range(&dir.join(&e.x), &s.x, 16, -1.0, 1.0, Some(&config_hash))?;
        pgm::write_image_range(&dir.join(&e.y0), &s.y0, 16, -1.0, 1.0, Some(&config_hash))?;
        entries.push(e);
    }
    let count = |sp| data.splits.iter().filter(|&&s| s == sp).count();
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        data_hash,
        config_hash,
        task: cfg.task,
        dataset_seed: cfg.dataset_seed,
        task_spec: cfg.task_spec(),
        normalization: data.normalization,
        bits: 16,
        split_counts: SplitCounts {
            train: count(Split::Train),
            val: count(Split::Val),
            test: count(Split::Test),
        },
        entries,
    };
    // Written last so an interrupted run is regenerated next time.
    write_json(&manifest_path(cfg), &manifest)?;
    let seconds = start.elapsed().as_secs_f64();
    write_json(&dir.join("generation.json"), &GenerationTime { seconds })?;
    Ok(DataSummary {
        dir,
        manifest,
        generated: true,
        seconds,
        generation_seconds: Some(seconds),
    })
}

/// Reads the persisted dataset for `cfg`.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<PairedDataset> {
    let dir = data_dir(cfg);
    let m: Manifest = read_json(&manifest_path(cfg))?;
    if m.format_version != MANIFEST_VERSION {
        return Err(CmdmError::Compatibility(format!(
            "manifest version {}, expected {MANIFEST_VERSION}",
            m.format_version
        )));
    }
    if m.data_hash != cfg.data_hash() {
        return Err(CmdmError::Compatibility(format!(
            "dataset {} does not match the configured {}",
            m.data_hash,
            cfg.data_hash()
        )));
    }
    let mut samples = Vec::with_capacity(m.entries.len());
    let mut splits = Vec::with_capacity(m.entries.len());
    for e in &m.entries {
        samples.push(Sample {
            x: pgm::read_image(&dir.join(&e.x))?,
            y0: pgm::read_image(&dir.join(&e.y0))?,
        });
        splits.push(e.split);
    }
    Ok(PairedDataset {
        task: m.task,
        spec: m.task_spec,
        seed: m.dataset_seed,
        samples,
        splits,
        normalization: m.normalization,
    })
}
