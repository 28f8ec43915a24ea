//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `CMDMCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then for
//! each network its parameters, Adam first and second moments and EMA
//! shadow as little-endian `f64`, layer by layer. Values are stored bit for
//! bit, so a save/load round trip is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CmdmError, Result};
use crate::models::{TrainConfig, TrainedNet};
use crate::nn::{AdamConfig, EmaState, LayerSpec, Network, OptimizerState};
use crate::schedule::ScheduleParams;

pub const MAGIC: &[u8; 8] = b"CMDMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Prior,
    Denoiser,
}

/// Everything about a checkpoint except the parameter payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    /// Completed optimisation steps.
    pub step: u64,
    pub config_hash: String,
    /// Hash of the settings that must match for training to resume.
    pub stage_hash: String,
    pub schedule: Option<ScheduleParams>,
    pub schedule_hash: Option<String>,
    pub train: TrainConfig,
    pub rng_seed: u64,
    pub rng_path: Vec<u64>,
    pub software_version: String,
    /// Wall-clock seconds spent training, summed over resumed runs.
    #[serde(default)]
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetHeader {
    name: String,
    layers: Vec<LayerSpec>,
    adam: AdamConfig,
    opt_step: u64,
    ema_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    nets: Vec<NetHeader>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// Named networks, e.g. `generator` and `discriminator`.
    pub nets: Vec<(String, TrainedNet)>,
}

impl Checkpoint {
    pub fn net(&self, name: &str) -> Option<&TrainedNet> {
        self.nets.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn push_all(out: &mut Vec<u8>, blocks: &[Vec<f64>]) {
    for v in blocks.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        meta: ckpt.meta.clone(),
        nets: ckpt
            .nets
            .iter()
            .map(|(name, t)| NetHeader {
                name: name.clone(),
                layers: t.net.layers().to_vec(),
                adam: t.opt.config,
                opt_step: t.opt.step,
                ema_rate: t.ema.rate,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| CmdmError::invalid(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &ckpt.nets {
        push_all(&mut out, t.net.params());
        push_all(&mut out, &t.opt.first_moment);
        push_all(&mut out, &t.opt.second_moment);
        push_all(&mut out, &t.ema.shadow);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CmdmError::Parse {
                offset: self.bytes.len(),
                message: format!("truncated checkpoint while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn blocks(&mut self, layers: &[LayerSpec]) -> Result<Vec<Vec<f64>>> {
        layers
            .iter()
            .map(|l| {
                let raw = self.take(8 * l.param_count(), "parameters")?;
                Ok(raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect())
            })
            .collect()
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(CmdmError::Parse {
            offset: 0,
            message: "not a checkpoint (bad magic)".into(),
        });
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CmdmError::Compatibility(format!(
            "checkpoint format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(r.take(8, "header length")?.try_into().expect("8 bytes")) as usize;
    let start = r.pos;
    let header: Header =
        serde_json::from_slice(r.take(len, "header")?).map_err(|e| CmdmError::Parse {
            offset: start,
            message: format!("checkpoint header: {e}"),
        })?;
    let mut nets = Vec::with_capacity(header.nets.len());
    for h in header.nets {
        let params = r.blocks(&h.layers)?;
        let first_moment = r.blocks(&h.layers)?;
        let second_moment = r.blocks(&h.layers)?;
        let shadow = r.blocks(&h.layers)?;
        let net = Network::from_parts(h.layers, params)?;
        nets.push((
            h.name,
            TrainedNet {
                net,
                opt: OptimizerState {
                    config: h.adam,
                    step: h.opt_step,
                    first_moment,
                    second_moment,
                },
                ema: EmaState {
                    rate: h.ema_rate,
                    shadow,
                },
            },
        ));
    }
    if r.pos != bytes.len() {
        return Err(CmdmError::Parse {
            offset: r.pos,
            message: "trailing bytes after checkpoint payload".into(),
        });
    }
    Ok(Checkpoint {
        meta: header.meta,
        nets,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    // Write then rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, encode(ckpt)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CmdmError::NotFound(path.display().to_string()),
        _ => CmdmError::Io(e),
    })?;
    decode(&bytes)
}
