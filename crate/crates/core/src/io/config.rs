//! Experiment configuration, read from TOML.
//!
//! Every field has a default, so a file only needs the keys it changes:
//!
//! ```toml
//! task = "sparse-view-6x"     # sparse-view-6x | sparse-view-4x | blur | mask | identity
//! image_size = 64             # overrides task_spec.phantom.image_size
//! dataset_size = 600          # split 80/10/10 into train/val/test
//! dataset_seed = 7
//! master_seed = 1
//! output_dir = "runs/default"
//!
//! [schedule]                  # linear beta schedule
//! steps = 1000
//! beta_start = 1e-4
//! beta_end = 0.02
//!
//! [task_spec]                 # full_views, detectors, view_factor, blur_sigma, mask_fraction
//! [task_spec.phantom]         # ellipse_count, intensity, semi_axis, rotation_deg, center_spread
//!
//! [prior]                     # steps, batch_size, lr, beta1, beta2, eps, warmup_steps,
//! [denoiser]                  # ema_rate, lambda_adv, width, disc_width
//!
//! [sampler]                   # t_s, n_paths, n_cascades, noise_mode, baseline_mode,
//!                             # pooled_uncertainty
//! [infer]                     # prior_kind, use_ema, prior_use_ema, max_images, bits
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CmdmError, Result};
use crate::models::{PriorKind, TrainConfig};
use crate::sampler::SamplerConfig;
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::tasks::{TaskSpec, TaskTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub prior_kind: PriorKind,
    /// Use the EMA weights of the noise predictor.
    pub use_ema: bool,
    /// Use the EMA weights of the prior generator.
    pub prior_use_ema: bool,
    /// Only translate the first `max_images` test images.
    pub max_images: Option<usize>,
    /// Bit depth of written images.
    pub bits: u8,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            prior_kind: PriorKind::Trained,
            use_ema: true,
            prior_use_ema: false,
            max_images: None,
            bits: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskTag,
    pub image_size: usize,
    pub dataset_size: usize,
    pub dataset_seed: u64,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub schedule: ScheduleParams,
    pub task_spec: TaskSpec,
    pub prior: TrainConfig,
    pub denoiser: TrainConfig,
    pub sampler: SamplerConfig,
    pub infer: InferConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskTag::SparseView6x,
            image_size: 64,
            dataset_size: 600,
            dataset_seed: 7,
            master_seed: 1,
            output_dir: PathBuf::from("runs/default"),
            schedule: ScheduleParams::default(),
            task_spec: TaskSpec::default(),
            prior: TrainConfig {
                steps: 5_000,
                ..TrainConfig::default()
            },
            denoiser: TrainConfig {
                steps: 20_000,
                lambda_adv: 0.0,
                ..TrainConfig::default()
            },
            sampler: SamplerConfig::default(),
            infer: InferConfig::default(),
        }
    }
}

fn digest(parts: &[&serde_json::Value]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_string().as_bytes());
        h.update([0]);
    }
    h.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config types serialise to JSON")
}

fn without_steps(cfg: &TrainConfig) -> serde_json::Value {
    let mut v = json(cfg);
    v.as_object_mut().expect("struct").remove("steps");
    v
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, applies `key.path=value` overrides and lays the result
    /// over the defaults, so only the named keys change. Override values are
    /// read as TOML literals and fall back to plain strings, so
    /// `sampler.n_paths=5` and `task=blur` both work.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut user: toml::Table = toml::from_str(text).map_err(|e| CmdmError::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: e.message().to_owned(),
        })?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| CmdmError::invalid(format!("override `{ov}` is not key=value")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
            let mut parts: Vec<&str> = key.trim().split('.').collect();
            let leaf = parts
                .pop()
                .filter(|l| !l.is_empty())
                .ok_or_else(|| CmdmError::invalid("empty override key"))?;
            let mut table = &mut user;
            for p in parts {
                table = table
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| {
                        CmdmError::invalid(format!("`{p}` in `{key}` is not a table"))
                    })?;
            }
            table.insert(leaf.to_owned(), value);
        }
        let mut root = toml::Table::try_from(Self::default()).expect("defaults serialise to TOML");
        merge(&mut root, user);
        let cfg: ExperimentConfig =
            toml::Value::Table(root)
                .try_into()
                .map_err(|e: toml::de::Error| CmdmError::Parse {
                    offset: 0,
                    message: e.message().to_owned(),
                })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_overrides(path, &[])
    }

    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CmdmError::NotFound(path.display().to_string()),
            _ => CmdmError::Io(e),
        })?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to TOML")
    }

    /// The task settings with the top-level image size applied.
    pub fn task_spec(&self) -> TaskSpec {
        let mut spec = self.task_spec.clone();
        spec.phantom.image_size = self.image_size;
        spec
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(CmdmError::invalid(format!(
                "image size {} is below 8",
                self.image_size
            )));
        }
        if self.dataset_size < 10 {
            return Err(CmdmError::invalid(
                "dataset needs at least 10 samples for an 80/10/10 split",
            ));
        }
        self.task_spec().validate(self.task)?;
        let s = self.build_schedule()?;
        self.prior.validate()?;
        self.denoiser.validate()?;
        self.sampler.validate(&s)?;
        if !matches!(self.infer.bits, 8 | 16) {
            return Err(CmdmError::invalid(format!(
                "image bit depth {} is not 8 or 16",
                self.infer.bits
            )));
        }
        Ok(())
    }

    /// Hash of everything except the output directory.
    pub fn config_hash(&self) -> String {
        let mut v = json(self);
        v.as_object_mut().expect("struct").remove("output_dir");
        digest(&[&v])
    }

    /// Identifies the generated dataset.
    pub fn data_hash(&self) -> String {
        digest(&[
            &json(&self.task),
            &json(&self.dataset_size),
            &json(&self.dataset_seed),
            &json(&self.task_spec()),
        ])
    }

    /// Identifies a prior training run up to its step budget, so a longer
    /// run can resume a shorter one.
    pub fn prior_stage_hash(&self) -> String {
        digest(&[
            &json(&self.data_hash()),
            &json(&self.master_seed),
            &without_steps(&self.prior),
        ])
    }

    pub fn denoiser_stage_hash(&self) -> String {
        digest(&[
            &json(&self.data_hash()),
            &json(&self.master_seed),
            &json(&self.schedule),
            &without_steps(&self.denoiser),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash(), c.config_hash());
    }

    #[test]
    fn partial_files_take_defaults() {
        let c =
            ExperimentConfig::from_toml_str("task = \"blur\"\n[sampler]\nn_paths = 4\n").unwrap();
        assert_eq!(c.task, TaskTag::Blur);
        assert_eq!(c.sampler.n_paths, 4);
        assert_eq!(c.denoiser.steps, 20_000);
        let c = ExperimentConfig::from_toml_str("[prior]\nwidth = 4\n").unwrap();
        assert_eq!(c.prior.width, 4);
        assert_eq!(c.prior.steps, 5_000);
        assert_eq!(c.prior.adam, ExperimentConfig::default().prior.adam);
    }

    #[test]
    fn overrides_replace_file_values() {
        let c = ExperimentConfig::from_toml_with_overrides(
            "[sampler]\nn_paths = 4\n",
            &[
                "sampler.n_paths=7".into(),
                "task=blur".into(),
                "denoiser.lr=3e-4".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.sampler.n_paths, 7);
        assert_eq!(c.task, TaskTag::Blur);
        assert_eq!(c.denoiser.adam.lr, 3e-4);
        assert!(ExperimentConfig::from_toml_with_overrides("", &["nonsense".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides(
            "task = \"blur\"",
            &["task.x=1".into()]
        )
        .is_err());
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(matches!(
            ExperimentConfig::from_toml_str("task = \"nope\""),
            Err(CmdmError::Parse { .. })
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str("typo_key = 1"),
            Err(CmdmError::Parse { .. })
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str("[sampler]\nt_s = 5000"),
            Err(CmdmError::InvalidArgument(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str("[task_spec]\nview_factor = 7"),
            Err(CmdmError::InvalidArgument(_))
        ));
    }

    #[test]
    fn stage_hashes_ignore_step_budgets_and_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.denoiser.steps += 100;
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.denoiser_stage_hash(), b.denoiser_stage_hash());
        assert_ne!(a.config_hash(), b.config_hash());
        b.output_dir = a.output_dir.clone();
        b.denoiser.steps = a.denoiser.steps;
        assert_eq!(a.config_hash(), b.config_hash());
        b.denoiser.width += 1;
        assert_ne!(a.denoiser_stage_hash(), b.denoiser_stage_hash());
        assert_eq!(a.prior_stage_hash(), b.prior_stage_hash());
        b.dataset_seed += 1;
        assert_ne!(a.prior_stage_hash(), b.prior_stage_hash());
    }
}
