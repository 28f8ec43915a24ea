use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    checkpoint_path, create_dir, load_dataset, read_csv, train_dir, write_config, write_csv,
    SOFTWARE_VERSION, TRAIN_TAG,
};
use crate::error::{CmdmError, Result};
use crate::io::checkpoint::{self, Checkpoint, CheckpointMeta, ModelKind};
use crate::io::ExperimentConfig;
use crate::models::{DenoiserTrainer, LossRecord, PriorTrainer, TrainConfig, TrainedNet};
use crate::rng::RngStream;
use crate::tasks::{Sample, Split};

/// Steps between checkpoint saves.
const CHECKPOINT_EVERY: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prior,
    Denoiser,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Prior => "prior",
            Stage::Denoiser => "denoiser",
        }
    }

    fn kind(self) -> ModelKind {
        match self {
            Stage::Prior => ModelKind::Prior,
            Stage::Denoiser => ModelKind::Denoiser,
        }
    }

    fn train_config(self, cfg: &ExperimentConfig) -> &TrainConfig {
        match self {
            Stage::Prior => &cfg.prior,
            Stage::Denoiser => &cfg.denoiser,
        }
    }

    fn stage_hash(self, cfg: &ExperimentConfig) -> String {
        match self {
            Stage::Prior => cfg.prior_stage_hash(),
            Stage::Denoiser => cfg.denoiser_stage_hash(),
        }
    }

    fn root(self, cfg: &ExperimentConfig) -> RngStream {
        let k = match self {
            Stage::Prior => 0,
            Stage::Denoiser => 1,
        };
        RngStream::derive(cfg.master_seed, &[TRAIN_TAG, k])
    }
}

/// One row of `train/<stage>_loss.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub loss: f64,
    pub adv: Option<f64>,
    pub disc: Option<f64>,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub stage: Stage,
    pub start_step: u64,
    pub end_step: u64,
    /// Mean loss over the last (up to) 100 steps of the curve.
    pub recent_loss: Option<f64>,
    /// Seconds spent in this call.
    pub seconds: f64,
    /// Seconds spent on this stage over every run, as kept in the checkpoint.
    pub total_seconds: f64,
}

fn loss_path(cfg: &ExperimentConfig, stage: Stage) -> std::path::PathBuf {
    train_dir(cfg).join(format!("{}_loss.csv", stage.as_str()))
}

enum Trainer {
    Prior(Box<PriorTrainer>),
    Denoiser(Box<DenoiserTrainer>),
}

impl Trainer {
    fn step(&self) -> u64 {
        match self {
            Trainer::Prior(t) => t.step(),
            Trainer::Denoiser(t) => t.step(),
        }
    }

    fn train_until(&mut self, train: &[Sample], until: u64) -> Result<()> {
        match self {
            Trainer::Prior(t) => t.train_until(train, until),
            Trainer::Denoiser(t) => t.train_until(train, until),
        }
    }

    fn history(&self) -> &[LossRecord] {
        match self {
            Trainer::Prior(t) => t.history(),
            Trainer::Denoiser(t) => t.history(),
        }
    }

    fn nets(&self) -> Vec<(String, TrainedNet)> {
        match self {
            Trainer::Prior(t) => {
                let mut v = vec![("generator".to_owned(), t.generator().clone())];
                if let Some(d) = t.discriminator() {
                    v.push(("discriminator".to_owned(), d.clone()));
                }
                v
            }
            Trainer::Denoiser(t) => vec![("denoiser".to_owned(), t.model().clone())],
        }
    }
}

/// Returns the trainer and the training seconds already spent on it.
fn resume_or_start(cfg: &ExperimentConfig, stage: Stage, path: &Path) -> Result<(Trainer, f64)> {
    let tc = stage.train_config(cfg).clone();
    let root = stage.root(cfg);
    let schedule = cfg.build_schedule()?;
    let ckpt = match checkpoint::load(path) {
        Ok(c) => Some(c),
        Err(CmdmError::NotFound(_)) => None,
        Err(e) => return Err(e),
    };
    let Some(mut ckpt) = ckpt else {
        let t = match stage {
            Stage::Prior => Trainer::Prior(Box::new(PriorTrainer::new(tc, &root)?)),
            Stage::Denoiser => {
                Trainer::Denoiser(Box::new(DenoiserTrainer::new(tc, schedule, &root)?))
            }
        };
        return Ok((t, 0.0));
    };
    if ckpt.meta.kind != stage.kind() || ckpt.meta.stage_hash != stage.stage_hash(cfg) {
        return Err(CmdmError::Compatibility(format!(
            "{} was trained with different settings; choose a new output directory",
            path.display()
        )));
    }
    let step = ckpt.meta.step;
    if step > tc.steps {
        return Err(CmdmError::InvalidState(format!(
            "{} is already at step {step}, past the requested {}",
            path.display(),
            tc.steps
        )));
    }
    let mut take = |name: &str| {
        ckpt.nets
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| ckpt.nets.remove(i).1)
    };
    let missing = || CmdmError::Parse {
        offset: 0,
        message: format!("{} lacks a required network", path.display()),
    };
    let t = match stage {
        Stage::Prior => {
            let g = take("generator").ok_or_else(missing)?;
            let d = take("discriminator");
            Trainer::Prior(Box::new(PriorTrainer::from_parts(tc, &root, g, d, step)?))
        }
        Stage::Denoiser => {
            let m = take("denoiser").ok_or_else(missing)?;
            Trainer::Denoiser(Box::new(DenoiserTrainer::from_parts(
                tc, schedule, &root, m, step,
            )?))
        }
    };
    Ok((t, ckpt.meta.train_seconds))
}

fn save(cfg: &ExperimentConfig, stage: Stage, t: &Trainer, train_seconds: f64) -> Result<()> {
    let root = stage.root(cfg);
    let schedule = (stage == Stage::Denoiser).then_some(cfg.schedule);
    let meta = CheckpointMeta {
        kind: stage.kind(),
        step: t.step(),
        config_hash: cfg.config_hash(),
        stage_hash: stage.stage_hash(cfg),
        schedule,
        schedule_hash: schedule.map(|s| s.fingerprint()),
        train: stage.train_config(cfg).clone(),
        rng_seed: root.master_seed(),
        rng_path: root.path().to_vec(),
        software_version: SOFTWARE_VERSION.to_owned(),
        train_seconds,
    };
    checkpoint::save(
        &checkpoint_path(cfg, stage),
        &Checkpoint {
            meta,
            nets: t.nets(),
        },
    )
}

/// Trains the requested stages to their configured step budgets, resuming
/// from compatible checkpoints. Resumed runs are bitwise identical to
/// uninterrupted ones.
pub fn cmd_train(cfg: &ExperimentConfig, stages: &[Stage]) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    if stages.is_empty() {
        return Err(CmdmError::invalid("no training stage selected"));
    }
    let data = load_dataset(cfg)?;
    let train = data.split_samples(Split::Train);
    create_dir(&train_dir(cfg))?;
    write_config(cfg)?;
    let config_hash = cfg.config_hash();
    let mut outcomes = Vec::new();
    for &stage in stages {
        let start = Instant::now();
        let path = checkpoint_path(cfg, stage);
        let (mut t, before) = resume_or_start(cfg, stage, &path)?;
        let start_step = t.step();
        let target = stage.train_config(cfg).steps;

        // Drop curve rows past the checkpoint left by an interrupted run.
        let csv = loss_path(cfg, stage);
        let mut rows: Vec<LossRow> = match read_csv(&csv) {
            Ok(r) => r,
            Err(CmdmError::NotFound(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        rows.retain(|r| r.step < start_step);
        let mut written = 0;
        loop {
            let next = (t.step() + CHECKPOINT_EVERY).min(target);
            t.train_until(&train, next)?;
            rows.extend(t.history()[written..].iter().map(|r| LossRow {
                step: r.step,
                loss: r.loss,
                adv: r.adv,
                disc: r.disc,
                config_hash: config_hash.clone(),
            }));
            written = t.history().len();
            save(cfg, stage, &t, before + start.elapsed().as_secs_f64())?;
            write_csv(&csv, &rows)?;
            if t.step() >= target {
                break;
            }
        }
        let tail = &rows[rows.len().saturating_sub(100)..];
        outcomes.push(TrainOutcome {
            stage,
            start_step,
            end_step: t.step(),
            recent_loss: (!tail.is_empty())
                .then(|| tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64),
            seconds: start.elapsed().as_secs_f64(),
            total_seconds: before + start.elapsed().as_secs_f64(),
        });
    }
    Ok(outcomes)
}
