//! Training loops for the prior generator (L2 plus optional conditional
//! adversarial term) and the noise predictor (noise-regression loss).
//!
//! Every step draws from its own stream `root / [STEP_TAG, step]`, so a run
//! resumed from a checkpoint at step `k` continues exactly as the
//! uninterrupted run would have.

use serde::{Deserialize, Serialize};

use super::{
    denoiser_input, sigmoid, NoisePredictor, PriorGenerator, TrainedPredictor, PROB_CLAMP,
};
use crate::diffusion::{dm_loss, forward_sample, mean_squared_difference};
use crate::error::{CmdmError, Result};
use crate::grid::Grid2D;
use crate::nn::{
    adam_step, arch, AdamConfig, EmaState, FeatureMap, LayerKind, Network, OptimizerState,
};
use crate::par::map_indexed;
use crate::rng::{sample_gaussian_grid, RngStream};
use crate::schedule::NoiseSchedule;
use crate::tasks::{PairedDataset, Sample, Split};

const INIT_TAG: u64 = 0;
const STEP_TAG: u64 = 1;
const DENOISER_OUTPUT_GAIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub ema_rate: f64,
    /// Weight of the generator's adversarial term; 0 disables the
    /// discriminator entirely.
    pub lambda_adv: f64,
    /// Base channel width of the UNet backbone.
    pub width: usize,
    pub disc_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 8,
            adam: AdamConfig::default(),
            ema_rate: 0.9999,
            lambda_adv: 0.01,
            width: 32,
            disc_width: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.width == 0 || self.disc_width == 0 {
            return Err(CmdmError::invalid("batch size and widths must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ema_rate) {
            return Err(CmdmError::invalid(format!(
                "EMA rate {} outside [0, 1]",
                self.ema_rate
            )));
        }
        if !(self.lambda_adv >= 0.0 && self.lambda_adv.is_finite()) {
            return Err(CmdmError::invalid(
                "lambda_adv must be a finite non-negative number",
            ));
        }
        if !(self.adam.lr > 0.0) {
            return Err(CmdmError::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// One row of a loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// Step index the loss was measured at (0-based, before the update).
    pub step: u64,
    /// Objective minimised by the trained network.
    pub loss: f64,
    /// Generator adversarial term `-log d_fake`, when a discriminator is used.
    pub adv: Option<f64>,
    /// Discriminator loss, when a discriminator is used.
    pub disc: Option<f64>,
}

/// A network with its optimizer and EMA state.
#[derive(Debug, Clone)]
pub struct TrainedNet {
    pub net: Network,
    pub opt: OptimizerState,
    pub ema: EmaState,
}

impl TrainedNet {
    /// `output_gain` scales the initial weights of the last convolution.
    fn init(
        layers: Vec<crate::nn::LayerSpec>,
        cfg: &TrainConfig,
        rng: &mut RngStream,
        output_gain: f64,
    ) -> Result<Self> {
        let mut net = Network::new(layers, rng)?;
        if let Some(last) = net
            .layers()
            .iter()
            .rposition(|l| l.kind == LayerKind::Conv3x3)
        {
            net.params_mut()[last]
                .iter_mut()
                .for_each(|w| *w *= output_gain);
        }
        let opt = OptimizerState::new(&net, cfg.adam)?;
        let ema = EmaState::new(&net, cfg.ema_rate)?;
        Ok(TrainedNet { net, opt, ema })
    }

    fn update(&mut self, grads: &crate::nn::Gradients, step: u64) -> Result<()> {
        adam_step(&mut self.net, grads, &mut self.opt).map_err(|e| CmdmError::Training {
            step,
            message: e.to_string(),
        })?;
        self.ema.update(&self.net)
    }

    pub fn ema_network(&self) -> Result<Network> {
        self.ema.to_network(&self.net)
    }
}

fn check_train_set(train: &[Sample]) -> Result<()> {
    let first = train
        .first()
        .ok_or_else(|| CmdmError::invalid("training split is empty"))?;
    for s in train {
        s.x.check_same_shape(&first.x)?;
        s.y0.check_same_shape(&first.x)?;
    }
    Ok(())
}

fn diverged(step: u64, what: &str, value: f64) -> CmdmError {
    CmdmError::Training {
        step,
        message: format!("{what} is not finite ({value})"),
    }
}

fn single(value: f64) -> FeatureMap {
    FeatureMap {
        channels: 1,
        height: 1,
        width: 1,
        data: vec![value],
    }
}

/// `grad = scale·(a - b)` as a one-channel map.
fn scaled_residual(a: &FeatureMap, b: &Grid2D, scale: f64) -> FeatureMap {
    FeatureMap {
        channels: 1,
        height: a.height,
        width: a.width,
        data: a
            .data
            .iter()
            .zip(b.data())
            .map(|(p, q)| scale * (p - q))
            .collect(),
    }
}

/// Trains `f_prior` on the pixel L2 loss, plus `lambda_adv·(-log d_fake)`
/// against a conditional discriminator updated once per generator step.
#[derive(Debug, Clone)]
pub struct PriorTrainer {
    config: TrainConfig,
    root: RngStream,
    generator: TrainedNet,
    discriminator: Option<TrainedNet>,
    step: u64,
    history: Vec<LossRecord>,
}

impl PriorTrainer {
    pub fn new(config: TrainConfig, root: &RngStream) -> Result<Self> {
        config.validate()?;
        let generator = TrainedNet::init(
            arch::unet(1, config.width, 1),
            &config,
            &mut root.child(&[INIT_TAG, 0]),
            1.0,
        )?;
        let discriminator = if config.lambda_adv > 0.0 {
            Some(TrainedNet::init(
                arch::discriminator(2, config.disc_width),
                &config,
                &mut root.child(&[INIT_TAG, 1]),
                1.0,
            )?)
        } else {
            None
        };
        Ok(PriorTrainer {
            config,
            root: root.clone(),
            generator,
            discriminator,
            step: 0,
            history: Vec::new(),
        })
    }

    /// Rebuilds a trainer from persisted state.
    pub fn from_parts(
        config: TrainConfig,
        root: &RngStream,
        generator: TrainedNet,
        discriminator: Option<TrainedNet>,
        step: u64,
    ) -> Result<Self> {
        config.validate()?;
        if discriminator.is_some() != (config.lambda_adv > 0.0) {
            return Err(CmdmError::InvalidState(
                "discriminator presence does not match lambda_adv".into(),
            ));
        }
        Ok(PriorTrainer {
            config,
            root: root.clone(),
            generator,
            discriminator,
            step,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn root(&self) -> &RngStream {
        &self.root
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn generator(&self) -> &TrainedNet {
        &self.generator
    }

    pub fn discriminator(&self) -> Option<&TrainedNet> {
        self.discriminator.as_ref()
    }

    /// Loss records produced since construction.
    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    /// Raw generator weights (used at inference).
    pub fn prior(&self) -> PriorGenerator {
        PriorGenerator::Trained(self.generator.net.clone())
    }

    /// Runs steps until `self.step() == until`.
    pub fn train_until(&mut self, train: &[Sample], until: u64) -> Result<()> {
        check_train_set(train)?;
        while self.step < until {
            let rec = self.step_once(train)?;
            self.history.push(rec);
        }
        Ok(())
    }

    fn step_once(&mut self, train: &[Sample]) -> Result<LossRecord> {
        let step = self.step;
        let b = self.config.batch_size;
        let lambda = self.config.lambda_adv;
        let mut rng = self.root.child(&[STEP_TAG, step]);
        let batch: Vec<&Sample> = (0..b).map(|_| &train[rng.below(train.len())]).collect();
        let inputs = batch
            .iter()
            .map(|s| FeatureMap::from_grids(&[&s.x]))
            .collect::<Result<Vec<_>>>()?;
        let (outs, tape) = self.generator.net.forward(&inputs)?;
        let npix = outs[0].data.len() as f64;
        let mut l2 = 0.0;
        let mut grad_out = Vec::with_capacity(b);
        for (o, s) in outs.iter().zip(&batch) {
            l2 += mean_squared_difference(&o.to_grid(0)?, &s.y0);
            grad_out.push(scaled_residual(o, &s.y0, 2.0 / (npix * b as f64)));
        }
        l2 /= b as f64;

        let mut adv = None;
        let mut disc_loss = None;
        if let Some(d) = self.discriminator.as_mut() {
            let candidates: Vec<Grid2D> =
                outs.iter().map(|o| o.to_grid(0)).collect::<Result<_>>()?;
            let fake_inputs = batch
                .iter()
                .zip(&candidates)
                .map(|(s, c)| FeatureMap::from_grids(&[&s.x, c]))
                .collect::<Result<Vec<_>>>()?;
            let mut d_inputs = batch
                .iter()
                .map(|s| FeatureMap::from_grids(&[&s.x, &s.y0]))
                .collect::<Result<Vec<_>>>()?;
            d_inputs.extend(fake_inputs.iter().cloned());

            // Discriminator step on real (first half) and fake (second half).
            let (logits, d_tape) = d.net.forward(&d_inputs)?;
            let mut ld = 0.0;
            let mut d_grads = Vec::with_capacity(2 * b);
            for (k, l) in logits.iter().enumerate() {
                let p = sigmoid(l.data[0]);
                let in_range = (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
                let (term, g) = if k < b {
                    (-p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln(), p - 1.0)
                } else {
                    (-(1.0 - p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)).ln(), p)
                };
                ld += term;
                d_grads.push(single(if in_range { g / b as f64 } else { 0.0 }));
            }
            ld /= b as f64;
            if !ld.is_finite() {
                return Err(diverged(step, "discriminator loss", ld));
            }
            let (grads, _) = d.net.backward(&d_tape, &d_grads)?;
            d.update(&grads, step)?;

            // Generator adversarial gradient through the updated discriminator.
            let (logits, f_tape) = d.net.forward(&fake_inputs)?;
            let mut lg = 0.0;
            let mut g_grads = Vec::with_capacity(b);
            for l in &logits {
                let p = sigmoid(l.data[0]);
                let in_range = (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
                lg -= p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln();
                g_grads.push(single(if in_range {
                    lambda * (p - 1.0) / b as f64
                } else {
                    0.0
                }));
            }
            lg /= b as f64;
            let (_, input_grads) = d.net.backward(&f_tape, &g_grads)?;
            for (go, ig) in grad_out.iter_mut().zip(&input_grads) {
                for (a, v) in go.data.iter_mut().zip(ig.channel(1)) {
                    *a += v;
                }
            }
            adv = Some(lg);
            disc_loss = Some(ld);
        }

        let loss = l2 + lambda * adv.unwrap_or(0.0);
        if !loss.is_finite() {
            return Err(diverged(step, "generator loss", loss));
        }
        let (grads, _) = self.generator.net.backward(&tape, &grad_out)?;
        self.generator.update(&grads, step)?;
        self.step += 1;
        Ok(LossRecord {
            step,
            loss,
            adv,
            disc: disc_loss,
        })
    }
}

/// Trains `f_dm` to regress the injected noise at uniformly drawn timesteps.
#[derive(Debug, Clone)]
pub struct DenoiserTrainer {
    config: TrainConfig,
    root: RngStream,
    schedule: NoiseSchedule,
    model: TrainedNet,
    step: u64,
    history: Vec<LossRecord>,
}

impl DenoiserTrainer {
    pub fn new(config: TrainConfig, schedule: NoiseSchedule, root: &RngStream) -> Result<Self> {
        config.validate()?;
        let model = TrainedNet::init(
            arch::unet(3, config.width, 1),
            &config,
            &mut root.child(&[INIT_TAG, 0]),
            // Starts near the zero predictor, whose loss is 1.
            DENOISER_OUTPUT_GAIN,
        )?;
        Ok(DenoiserTrainer {
            config,
            root: root.clone(),
            schedule,
            model,
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn from_parts(
        config: TrainConfig,
        schedule: NoiseSchedule,
        root: &RngStream,
        model: TrainedNet,
        step: u64,
    ) -> Result<Self> {
        config.validate()?;
        Ok(DenoiserTrainer {
            config,
            root: root.clone(),
            schedule,
            model,
            step,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn root(&self) -> &RngStream {
        &self.root
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn model(&self) -> &TrainedNet {
        &self.model
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    /// The predictor with EMA (`use_ema`) or raw weights.
    pub fn predictor(&self, use_ema: bool) -> Result<TrainedPredictor> {
        let net = if use_ema {
            self.model.ema_network()?
        } else {
            self.model.net.clone()
        };
        TrainedPredictor::new(net)
    }

    pub fn train_until(&mut self, train: &[Sample], until: u64) -> Result<()> {
        check_train_set(train)?;
        while self.step < until {
            let rec = self.step_once(train)?;
            self.history.push(rec);
        }
        Ok(())
    }

    fn step_once(&mut self, train: &[Sample]) -> Result<LossRecord> {
        let step = self.step;
        let b = self.config.batch_size;
        let steps = self.schedule.steps();
        let mut rng = self.root.child(&[STEP_TAG, step]);
        let mut inputs = Vec::with_capacity(b);
        let mut targets = Vec::with_capacity(b);
        for _ in 0..b {
            let s = &train[rng.below(train.len())];
            let t = 1 + rng.below(steps);
            let eps = sample_gaussian_grid(&mut rng, s.y0.height(), s.y0.width());
            let y_t = forward_sample(&s.y0, t, &eps, &self.schedule)?;
            inputs.push(denoiser_input(&s.x, &y_t, self.schedule.gamma(t))?);
            targets.push(eps);
        }
        let (outs, tape) = self.model.net.forward(&inputs)?;
        let npix = outs[0].data.len() as f64;
        let mut loss = 0.0;
        let mut grad_out = Vec::with_capacity(b);
        for (o, eps) in outs.iter().zip(&targets) {
            loss += mean_squared_difference(&o.to_grid(0)?, eps);
            grad_out.push(scaled_residual(o, eps, 2.0 / (npix * b as f64)));
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(diverged(step, "denoising loss", loss));
        }
        let (grads, _) = self.model.net.backward(&tape, &grad_out)?;
        self.model.update(&grads, step)?;
        self.step += 1;
        Ok(LossRecord {
            step,
            loss,
            adv: None,
            disc: None,
        })
    }
}

/// Mean noise-regression loss over `draws` (t, eps) pairs per sample, drawn
/// from `rng / [sample, draw]`.
pub fn eval_dm_loss(
    f: &dyn NoisePredictor,
    samples: &[Sample],
    s: &NoiseSchedule,
    rng: &RngStream,
    draws: usize,
) -> Result<f64> {
    if samples.is_empty() || draws == 0 {
        return Err(CmdmError::invalid(
            "evaluation needs at least one sample and draw",
        ));
    }
    let per_sample = map_indexed(samples, |i, smp| -> Result<f64> {
        let mut total = 0.0;
        for d in 0..draws {
            let mut r = rng.child(&[i as u64, d as u64]);
            let t = 1 + r.below(s.steps());
            let eps = sample_gaussian_grid(&mut r, smp.y0.height(), smp.y0.width());
            total += dm_loss(f, &smp.x, &smp.y0, t, &eps, s)?;
        }
        Ok(total / draws as f64)
    });
    let mut sum = 0.0;
    for v in per_sample {
        sum += v?;
    }
    Ok(sum / samples.len() as f64)
}

/// Mean prior L2 loss over `samples`.
pub fn eval_prior_loss(prior: &PriorGenerator, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(CmdmError::invalid("evaluation needs at least one sample"));
    }
    let xs: Vec<Grid2D> = samples.iter().map(|s| s.x.clone()).collect();
    let preds = prior.generate_many(&xs)?;
    let mut sum = 0.0;
    for (p, s) in preds.iter().zip(samples) {
        sum += super::prior_loss(p, &s.y0)?;
    }
    Ok(sum / samples.len() as f64)
}

/// Trains a prior generator on the training split of `data` for
/// `cfg.steps` steps.
pub fn train_prior(
    data: &PairedDataset,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<PriorTrainer> {
    let mut trainer = PriorTrainer::new(cfg.clone(), rng)?;
    trainer.train_until(&data.split_samples(Split::Train), cfg.steps)?;
    Ok(trainer)
}

/// Trains a noise predictor on the training split of `data` for
/// `cfg.steps` steps.
pub fn train_denoiser(
    data: &PairedDataset,
    s: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<DenoiserTrainer> {
    let mut trainer = DenoiserTrainer::new(cfg.clone(), s.clone(), rng)?;
    trainer.train_until(&data.split_samples(Split::Train), cfg.steps)?;
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(steps: u64, lambda_adv: f64) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 2,
            adam: AdamConfig {
                lr: 1e-3,
                warmup_steps: 1,
                ..AdamConfig::default()
            },
            ema_rate: 0.9,
            lambda_adv,
            width: 2,
            disc_width: 2,
        }
    }

    fn toy_samples(n: usize) -> Vec<Sample> {
        let mut rng = RngStream::derive(5, &[]);
        (0..n)
            .map(|_| {
                let x = sample_gaussian_grid(&mut rng, 16, 16);
                Sample {
                    y0: x.scale(0.5).unwrap(),
                    x,
                }
            })
            .collect()
    }

    #[test]
    fn zero_steps_leave_the_network_unchanged() {
        let root = RngStream::derive(1, &[7]);
        let mut a = PriorTrainer::new(tiny_config(0, 0.0), &root).unwrap();
        let before = a.generator().net.params().to_vec();
        a.train_until(&toy_samples(3), 0).unwrap();
        assert_eq!(a.generator().net.params(), &before[..]);
        assert!(a.discriminator().is_none());
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let data = toy_samples(4);
        let root = RngStream::derive(2, &[]);
        let mut full =
            DenoiserTrainer::new(tiny_config(4, 0.0), NoiseSchedule::default_linear(), &root)
                .unwrap();
        full.train_until(&data, 4).unwrap();
        let mut half =
            DenoiserTrainer::new(tiny_config(4, 0.0), NoiseSchedule::default_linear(), &root)
                .unwrap();
        half.train_until(&data, 2).unwrap();
        let mut resumed = DenoiserTrainer::from_parts(
            half.config().clone(),
            half.schedule().clone(),
            half.root(),
            half.model().clone(),
            half.step(),
        )
        .unwrap();
        resumed.train_until(&data, 4).unwrap();
        assert_eq!(full.model().net.params(), resumed.model().net.params());
        assert_eq!(full.history()[2..], resumed.history()[..]);
    }

    #[test]
    fn adversarial_step_records_both_losses() {
        let data = toy_samples(3);
        let root = RngStream::derive(3, &[]);
        let mut t = PriorTrainer::new(tiny_config(2, 0.5), &root).unwrap();
        t.train_until(&data, 2).unwrap();
        for r in t.history() {
            assert!(r.adv.unwrap() > 0.0 && r.disc.unwrap() > 0.0);
        }
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let root = RngStream::derive(3, &[]);
        let mut t = PriorTrainer::new(tiny_config(1, 0.0), &root).unwrap();
        assert!(matches!(
            t.train_until(&[], 1),
            Err(CmdmError::InvalidArgument(_))
        ));
    }
}
