use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    ablate_dir, checkpoint_path, create_dir, infer_dir, load_dataset, write_config, write_csv,
    write_json, Stage, INFER_TAG, SHUFFLE_TAG, SOFTWARE_VERSION,
};
use crate::error::{CmdmError, Result};
use crate::grid::Grid2D;
use crate::io::checkpoint::{self, ModelKind};
use crate::io::{pgm, ExperimentConfig};
use crate::metrics::{mae, mean, median, pearson, psnr, ssim, SsimParams};
use crate::models::{PriorGenerator, PriorKind, TrainedPredictor};
use crate::rng::RngStream;
use crate::sampler::{cascade_sample, BaselineMode, SamplerConfig};
use crate::schedule::NoiseSchedule;
use crate::tasks::{to_unit, PairedDataset, Sample, Split, TaskTag};

/// Everything inference needs, loaded from the training checkpoints.
#[derive(Debug, Clone)]
pub struct Models {
    pub prior: PriorGenerator,
    pub predictor: TrainedPredictor,
    pub schedule: NoiseSchedule,
    pub denoiser_step: u64,
    pub prior_step: Option<u64>,
}

/// Loads the noise predictor and the configured prior. Refuses a denoiser
/// trained under a different noise schedule.
pub fn load_models(cfg: &ExperimentConfig) -> Result<Models> {
    let path = checkpoint_path(cfg, Stage::Denoiser);
    let ckpt = checkpoint::load(&path)?;
    if ckpt.meta.kind != ModelKind::Denoiser {
        return Err(CmdmError::Compatibility(format!(
            "{} is not a denoiser checkpoint",
            path.display()
        )));
    }
    let expected = cfg.schedule.fingerprint();
    if ckpt.meta.schedule_hash.as_deref() != Some(expected.as_str()) {
        return Err(CmdmError::Compatibility(format!(
            "{} was trained with schedule {:?}, the configuration uses {expected}",
            path.display(),
            ckpt.meta.schedule_hash
        )));
    }
    let t = ckpt.net("denoiser").ok_or_else(|| {
        CmdmError::Compatibility(format!("{} has no denoiser network", path.display()))
    })?;
    let net = if cfg.infer.use_ema {
        t.ema_network()?
    } else {
        t.net.clone()
    };
    let predictor = TrainedPredictor::new(net)?;

    let (prior, prior_step) = match cfg.infer.prior_kind {
        PriorKind::Identity => (PriorGenerator::Identity, None),
        PriorKind::None => (PriorGenerator::None, None),
        PriorKind::Trained => {
            let path = checkpoint_path(cfg, Stage::Prior);
            let ckpt = checkpoint::load(&path)?;
            if ckpt.meta.kind != ModelKind::Prior {
                return Err(CmdmError::Compatibility(format!(
                    "{} is not a prior checkpoint",
                    path.display()
                )));
            }
            let g = ckpt.net("generator").ok_or_else(|| {
                CmdmError::Compatibility(format!("{} has no generator network", path.display()))
            })?;
            let net = if cfg.infer.prior_use_ema {
                g.ema_network()?
            } else {
                g.net.clone()
            };
            (PriorGenerator::trained(net)?, Some(ckpt.meta.step))
        }
    };
    Ok(Models {
        prior,
        predictor,
        schedule: cfg.build_schedule()?,
        denoiser_step: ckpt.meta.step,
        prior_step,
    })
}

/// One row of `metrics.csv`. Metrics are computed on `[0, 1]` intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    /// Index of the image in the dataset.
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
    pub prior_psnr: Option<f64>,
    pub prior_ssim: Option<f64>,
    pub prior_mae: Option<f64>,
    pub input_psnr: f64,
    /// Pearson correlation of pixel |error| with pixel uncertainty; empty
    /// when the uncertainty map is constant.
    pub corr: Option<f64>,
    /// The same against a pixel-shuffled error map.
    pub corr_shuffled: Option<f64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean_psnr: f64,
    pub median_psnr: f64,
    pub mean_ssim: f64,
    pub median_ssim: f64,
    pub mean_mae: f64,
    pub median_mae: f64,
}

impl MetricSummary {
    fn of(psnr: &[f64], ssim: &[f64], mae: &[f64]) -> Option<Self> {
        Some(MetricSummary {
            mean_psnr: mean(psnr)?,
            median_psnr: median(psnr)?,
            mean_ssim: mean(ssim)?,
            median_ssim: median(ssim)?,
            mean_mae: mean(mae)?,
            median_mae: median(mae)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub median_shuffled: Option<f64>,
    /// Images whose uncertainty map was constant.
    pub degenerate: usize,
}

/// Wall-clock seconds per stage; the stages partition `total_s`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_s: f64,
    pub prior_s: f64,
    pub sampling_s: f64,
    pub metrics_s: f64,
    pub write_s: f64,
    pub total_s: f64,
}

impl Timings {
    pub fn stage_sum(&self) -> f64 {
        self.load_s + self.prior_s + self.sampling_s + self.metrics_s + self.write_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub master_seed: u64,
    pub software_version: String,
    pub task: TaskTag,
    pub sampler: SamplerConfig,
    pub prior_kind: PriorKind,
    pub denoiser_step: u64,
    pub prior_step: Option<u64>,
    pub n_images: usize,
    pub summary: MetricSummary,
    pub prior_summary: Option<MetricSummary>,
    pub correlation: CorrelationSummary,
    pub images: Vec<ImageMetrics>,
    pub timings: Timings,
}

struct Score {
    psnr: f64,
    ssim: f64,
    mae: f64,
}

fn score(pred: &Grid2D, target_unit: &Grid2D) -> Result<Score> {
    let p = to_unit(pred)?;
    Ok(Score {
        psnr: psnr(&p, target_unit, 1.0)?,
        ssim: ssim(&p, target_unit, &SsimParams::default())?,
        mae: mae(&p, target_unit)?,
    })
}

/// Sampling stream for dataset image `index`, shared by every command so
/// results for one image do not depend on which others are processed.
fn image_stream(cfg: &ExperimentConfig, index: usize) -> RngStream {
    RngStream::derive(cfg.master_seed, &[INFER_TAG, index as u64])
}

fn test_images(cfg: &ExperimentConfig, data: &PairedDataset) -> Result<Vec<(usize, Sample)>> {
    let mut idx = data.indices(Split::Test);
    if let Some(m) = cfg.infer.max_images {
        idx.truncate(m);
    }
    if idx.is_empty() {
        return Err(CmdmError::invalid("no test images to process"));
    }
    Ok(idx
        .into_iter()
        .map(|i| (i, data.samples[i].clone()))
        .collect())
}

fn correlations(
    cfg: &ExperimentConfig,
    index: usize,
    err: &[f64],
    unc: &[f64],
) -> Result<(Option<f64>, Option<f64>)> {
    let c = pearson(err, unc)?;
    if c.degenerate {
        return Ok((None, None));
    }
    let mut shuffled = err.to_vec();
    RngStream::derive(cfg.master_seed, &[SHUFFLE_TAG, index as u64]).shuffle(&mut shuffled);
    Ok((Some(c.r), Some(pearson(&shuffled, unc)?.r)))
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Translates the test split, writing per-image outputs, uncertainty and
/// error maps, `metrics.csv` and `report.json` under `infer/<mode>/`.
pub fn cmd_infer(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let total = Instant::now();
    let mut tm = Timings::default();
    let t = Instant::now();
    let data = load_dataset(cfg)?;
    let models = load_models(cfg)?;
    let images = test_images(cfg, &data)?;
    let out_dir = infer_dir(cfg);
    create_dir(&out_dir.join("images"))?;
    write_config(cfg)?;
    tm.load_s = secs(t);

    let config_hash = cfg.config_hash();
    let bits = cfg.infer.bits;
    let mut rows = Vec::with_capacity(images.len());
    for (index, smp) in &images {
        let t = Instant::now();
        let prior = if models.prior.is_none() {
            None
        } else {
            Some(models.prior.generate(&smp.x)?)
        };
        tm.prior_s += secs(t);

        let t = Instant::now();
        let result = cascade_sample(
            &smp.x,
            &models.prior,
            &models.predictor,
            &models.schedule,
            &cfg.sampler,
            &image_stream(cfg, *index),
        )?;
        tm.sampling_s += secs(t);

        let t = Instant::now();
        let y0 = to_unit(&smp.y0)?;
        let out = score(&result.y_final, &y0)?;
        let prior_score = prior.as_ref().map(|p| score(p, &y0)).transpose()?;
        let err = to_unit(&result.y_final)?.sub(&y0)?.map(f64::abs)?;
        // Standard deviations scale by 1/2 on the unit range.
        let unc = result.uncertainty.scale(0.5)?;
        let (corr, corr_shuffled) = correlations(cfg, *index, err.data(), unc.data())?;
        rows.push(ImageMetrics {
            index: *index,
            psnr: out.psnr,
            ssim: out.ssim,
            mae: out.mae,
            prior_psnr: prior_score.as_ref().map(|s| s.psnr),
            prior_ssim: prior_score.as_ref().map(|s| s.ssim),
            prior_mae: prior_score.as_ref().map(|s| s.mae),
            input_psnr: psnr(&to_unit(&smp.x)?, &y0, 1.0)?,
            corr,
            corr_shuffled,
            config_hash: config_hash.clone(),
        });
        tm.metrics_s += secs(t);

        let t = Instant::now();
        let img = |name: &str| {
            out_dir
                .join("images")
                .join(format!("{index:04}_{name}.pgm"))
        };
        let h = Some(config_hash.as_str());
        pgm::write_image(&img("output"), &result.y_final, bits, h)?;
        pgm::write_image(&img("uncertainty"), &unc, bits, h)?;
        pgm::write_image(&img("error"), &err, bits, h)?;
        if let Some(p) = &prior {
            pgm::write_image(&img("prior"), p, bits, h)?;
        }
        tm.write_s += secs(t);
    }

    let t = Instant::now();
    let col = |f: fn(&ImageMetrics) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let summary = MetricSummary::of(&col(|r| r.psnr), &col(|r| r.ssim), &col(|r| r.mae))
        .expect("at least one test image");
    let prior_col =
        |f: fn(&ImageMetrics) -> Option<f64>| rows.iter().filter_map(f).collect::<Vec<_>>();
    let prior_summary = MetricSummary::of(
        &prior_col(|r| r.prior_psnr),
        &prior_col(|r| r.prior_ssim),
        &prior_col(|r| r.prior_mae),
    );
    let corrs = prior_col(|r| r.corr);
    let shuffled = prior_col(|r| r.corr_shuffled);
    let correlation = CorrelationSummary {
        median: median(&corrs),
        mean: mean(&corrs),
        median_shuffled: median(&shuffled),
        degenerate: rows.len() - corrs.len(),
    };
    let mut report = RunReport {
        config_hash,
        master_seed: cfg.master_seed,
        software_version: SOFTWARE_VERSION.to_owned(),
        task: cfg.task,
        sampler: cfg.sampler,
        prior_kind: cfg.infer.prior_kind,
        denoiser_step: models.denoiser_step,
        prior_step: models.prior_step,
        n_images: rows.len(),
        summary,
        prior_summary,
        correlation,
        images: rows,
        timings: Timings::default(),
    };
    write_csv(&out_dir.join("metrics.csv"), &report.images)?;
    tm.write_s += secs(t);
    tm.total_s = secs(total);
    report.timings = tm;
    write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

/// Values to sweep; an empty list keeps the configured value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub t_s: Vec<usize>,
    pub n_paths: Vec<usize>,
    pub n_cascades: Vec<usize>,
}

impl SweepSpec {
    pub fn is_empty(&self) -> bool {
        self.t_s.is_empty() && self.n_paths.is_empty() && self.n_cascades.is_empty()
    }

    /// All settings of the grid, `t_s` outermost.
    pub fn settings(&self, base: &SamplerConfig) -> Vec<SamplerConfig> {
        let or_base = |v: &Vec<usize>, b: usize| if v.is_empty() { vec![b] } else { v.clone() };
        let mut out = Vec::new();
        for t_s in or_base(&self.t_s, base.t_s) {
            for n_paths in or_base(&self.n_paths, base.n_paths) {
                for n_cascades in or_base(&self.n_cascades, base.n_cascades) {
                    out.push(SamplerConfig {
                        t_s,
                        n_paths,
                        n_cascades,
                        ..*base
                    });
                }
            }
        }
        out
    }
}

/// One row of `ablation.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub baseline_mode: BaselineMode,
    pub t_s: usize,
    pub n_paths: usize,
    pub n_cascades: usize,
    pub n_images: usize,
    pub mean_psnr: f64,
    pub median_psnr: f64,
    pub mean_ssim: f64,
    pub median_ssim: f64,
    pub mean_mae: f64,
    pub median_mae: f64,
    /// Sampling wall-clock over all images.
    pub wall_s: f64,
    pub config_hash: String,
}

/// Runs the sampler over the test split for every setting of `sweep`. Each
/// image uses the same stream as [`cmd_infer`], so a row equals an inference
/// run with that setting.
pub fn cmd_ablate(cfg: &ExperimentConfig, sweep: &SweepSpec) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    if sweep.is_empty() {
        return Err(CmdmError::invalid("the sweep names no parameter values"));
    }
    let settings = sweep.settings(&cfg.sampler);
    for s in &settings {
        s.validate(&cfg.build_schedule()?)?;
    }
    let data = load_dataset(cfg)?;
    let models = load_models(cfg)?;
    let images = test_images(cfg, &data)?;
    let targets = images
        .iter()
        .map(|(_, s)| to_unit(&s.y0))
        .collect::<Result<Vec<_>>>()?;
    let config_hash = cfg.config_hash();
    let mut rows = Vec::with_capacity(settings.len());
    for s in settings {
        let mut scores = Vec::with_capacity(images.len());
        let mut wall = 0.0;
        for ((index, smp), y0) in images.iter().zip(&targets) {
            let t = Instant::now();
            let r = cascade_sample(
                &smp.x,
                &models.prior,
                &models.predictor,
                &models.schedule,
                &s,
                &image_stream(cfg, *index),
            )?;
            wall += secs(t);
            scores.push(score(&r.y_final, y0)?);
        }
        let col = |f: fn(&Score) -> f64| scores.iter().map(f).collect::<Vec<_>>();
        let m = MetricSummary::of(&col(|s| s.psnr), &col(|s| s.ssim), &col(|s| s.mae))
            .expect("non-empty");
        rows.push(AblationRow {
            baseline_mode: s.baseline_mode,
            t_s: s.t_s,
            n_paths: s.n_paths,
            n_cascades: s.n_cascades,
            n_images: scores.len(),
            mean_psnr: m.mean_psnr,
            median_psnr: m.median_psnr,
            mean_ssim: m.mean_ssim,
            median_ssim: m.median_ssim,
            mean_mae: m.mean_mae,
            median_mae: m.median_mae,
            wall_s: wall,
            config_hash: config_hash.clone(),
        });
    }
    let dir = ablate_dir(cfg);
    create_dir(&dir)?;
    write_csv(&dir.join("ablation.csv"), &rows)?;
    Ok(rows)
}
