//! Shortcut reverse sampling from a noised prior, multi-path averaging with
//! a pixel-wise uncertainty map, cascades with residual averaging, and the
//! pure-noise baseline.
//!
//! Path `p` of cascade `c` (both 0-based) draws from `master / [c, p]`: its
//! prior noise first, then one Gaussian grid per noisy reverse step. Paths
//! advance in lockstep so a trained predictor sees them as one batch; this
//! does not change any path's values.

use serde::{Deserialize, Serialize};

use crate::diffusion::{reverse_update, NoiseMode};
use crate::error::{CmdmError, Result};
use crate::grid::{mean_of, Grid2D};
use crate::models::{NoisePredictor, PriorGenerator};
use crate::rng::{sample_gaussian_grid, RngStream};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    /// Prior plus shortcut reverse process.
    #[default]
    Cmdm,
    /// Full reverse chains from Gaussian noise at `t = T`, no prior, one
    /// cascade.
    PureNoise,
}

impl BaselineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMode::Cmdm => "cmdm",
            BaselineMode::PureNoise => "pure-noise",
        }
    }
}

impl std::str::FromStr for BaselineMode {
    type Err = CmdmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cmdm" => Ok(BaselineMode::Cmdm),
            "pure-noise" => Ok(BaselineMode::PureNoise),
            other => Err(CmdmError::invalid(format!(
                "unknown baseline mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Shortcut start time.
    pub t_s: usize,
    pub n_paths: usize,
    pub n_cascades: usize,
    pub noise_mode: NoiseMode,
    pub baseline_mode: BaselineMode,
    /// Report the spread over the paths of every cascade instead of only the
    /// last one.
    pub pooled_uncertainty: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            t_s: 250,
            n_paths: 20,
            n_cascades: 3,
            noise_mode: NoiseMode::default(),
            baseline_mode: BaselineMode::default(),
            pooled_uncertainty: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, s: &NoiseSchedule) -> Result<()> {
        if self.t_s > s.steps() {
            return Err(CmdmError::invalid(format!(
                "t_s = {} exceeds the schedule length {}",
                self.t_s,
                s.steps()
            )));
        }
        if self.n_paths == 0 || self.n_cascades == 0 {
            return Err(CmdmError::invalid(
                "path and cascade counts must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeResult {
    /// Average of the last cascade's paths.
    pub y_final: Grid2D,
    /// The last cascade's path outputs, in path order.
    pub per_path_outputs: Vec<Grid2D>,
    /// Pixel-wise population standard deviation across paths.
    pub uncertainty: Grid2D,
    /// Prior used by each cascade (empty for the pure-noise baseline).
    pub per_cascade_priors: Vec<Grid2D>,
    pub per_cascade_averages: Vec<Grid2D>,
}

/// Runs every state in `ys` from `t_start` down to `t = 1`.
fn reverse_paths(
    x: &Grid2D,
    mut ys: Vec<Grid2D>,
    rngs: &mut [RngStream],
    t_start: usize,
    f: &dyn NoisePredictor,
    s: &NoiseSchedule,
    mode: NoiseMode,
) -> Result<Vec<Grid2D>> {
    for t in (1..=t_start).rev() {
        let eps = f.predict_many(x, &ys, s.gamma(t))?;
        if eps.len() != ys.len() {
            return Err(CmdmError::shape(ys.len(), eps.len()));
        }
        ys = ys
            .iter()
            .zip(&eps)
            .zip(rngs.iter_mut())
            .map(|((y, e), r)| reverse_update(y, e, t, s, r, mode))
            .collect::<Result<_>>()?;
    }
    Ok(ys)
}

/// `sqrt(gamma_ts)·y_prior + sqrt(1 - gamma_ts)·eps_prior`, with no noise in
/// deterministic mode.
fn shortcut_start(
    y_prior: &Grid2D,
    t_s: usize,
    s: &NoiseSchedule,
    rng: &mut RngStream,
    mode: NoiseMode,
) -> Result<Grid2D> {
    let g = s.gamma(t_s);
    if mode.is_stochastic() {
        let eps = sample_gaussian_grid(rng, y_prior.height(), y_prior.width());
        y_prior.lincomb(g.sqrt(), &eps, (1.0 - g).sqrt())
    } else {
        y_prior.scale(g.sqrt())
    }
}

fn check_inputs(x: &Grid2D, y_prior: &Grid2D, t_s: usize, s: &NoiseSchedule) -> Result<()> {
    x.check_same_shape(y_prior)?;
    if t_s > s.steps() {
        return Err(CmdmError::Index {
            index: t_s,
            min: 0,
            max: s.steps(),
        });
    }
    Ok(())
}

/// One shortcut path: noise the prior to `t_s`, then reverse to `t = 0`.
pub fn shortcut_path(
    x: &Grid2D,
    y_prior: &Grid2D,
    t_s: usize,
    f: &dyn NoisePredictor,
    s: &NoiseSchedule,
    rng: &mut RngStream,
    mode: NoiseMode,
) -> Result<Grid2D> {
    check_inputs(x, y_prior, t_s, s)?;
    if t_s == 0 {
        return Ok(y_prior.clone());
    }
    let start = shortcut_start(y_prior, t_s, s, rng, mode)?;
    Ok(reverse_paths(x, vec![start], std::slice::from_mut(rng), t_s, f, s, mode)?.remove(0))
}

/// `n_paths` shortcut paths on streams `master / [p]`, averaged in path
/// order.
#[allow(clippy::too_many_arguments)]
pub fn multi_path(
    x: &Grid2D,
    y_prior: &Grid2D,
    t_s: usize,
    n_paths: usize,
    f: &dyn NoisePredictor,
    s: &NoiseSchedule,
    master: &RngStream,
    mode: NoiseMode,
) -> Result<(Grid2D, Vec<Grid2D>)> {
    check_inputs(x, y_prior, t_s, s)?;
    if n_paths == 0 {
        return Err(CmdmError::invalid("at least one path is required"));
    }
    let mut rngs: Vec<RngStream> = (0..n_paths as u64).map(|p| master.child(&[p])).collect();
    let paths = if t_s == 0 {
        vec![y_prior.clone(); n_paths]
    } else {
        let starts = rngs
            .iter_mut()
            .map(|r| shortcut_start(y_prior, t_s, s, r, mode))
            .collect::<Result<Vec<_>>>()?;
        reverse_paths(x, starts, &mut rngs, t_s, f, s, mode)?
    };
    Ok((mean_of(&paths)?, paths))
}

/// Pixel-wise population standard deviation across `paths` (all zeros for
/// a single path).
pub fn uncertainty_map(paths: &[Grid2D]) -> Result<Grid2D> {
    let first = paths
        .first()
        .ok_or_else(|| CmdmError::invalid("uncertainty needs at least one path"))?;
    for p in paths {
        p.check_same_shape(first)?;
    }
    let n = paths.len() as f64;
    let mean = mean_of(paths)?;
    let mut var = vec![0.0; first.len()];
    for p in paths {
        for ((v, a), m) in var.iter_mut().zip(p.data()).zip(mean.data()) {
            *v += (a - m) * (a - m);
        }
    }
    Grid2D::from_vec(
        first.height(),
        first.width(),
        var.into_iter().map(|v| (v / n).sqrt()).collect(),
    )
}

/// Full reverse chains from `y_T ~ N(0, I)` on streams `rng / [p]`.
/// The starting noise is drawn in every noise mode.
pub fn pure_noise_sample(
    x: &Grid2D,
    f: &dyn NoisePredictor,
    s: &NoiseSchedule,
    rng: &RngStream,
    n_paths: usize,
    mode: NoiseMode,
) -> Result<(Grid2D, Vec<Grid2D>)> {
    if n_paths == 0 {
        return Err(CmdmError::invalid("at least one path is required"));
    }
    let mut rngs: Vec<RngStream> = (0..n_paths as u64).map(|p| rng.child(&[p])).collect();
    let starts = rngs
        .iter_mut()
        .map(|r| sample_gaussian_grid(r, x.height(), x.width()))
        .collect();
    let paths = reverse_paths(x, starts, &mut rngs, s.steps(), f, s, mode)?;
    Ok((mean_of(&paths)?, paths))
}

/// The cascaded pipeline. Cascade 1 starts from `prior(x)`; cascade `c > 1`
/// starts from the average of cascade `c - 1`'s output and its prior.
///
/// In pure-noise mode `t_s` and `n_cascades` are ignored: one cascade of
/// full-length chains is run on streams `master / [0, p]`. Without a prior,
/// CMDM mode is only accepted for `t_s = T`, where a zero prior is used.
pub fn cascade_sample(
    x: &Grid2D,
    prior: &PriorGenerator,
    f: &dyn NoisePredictor,
    s: &NoiseSchedule,
    cfg: &SamplerConfig,
    master: &RngStream,
) -> Result<CascadeResult> {
    cfg.validate(s)?;
    if cfg.baseline_mode == BaselineMode::PureNoise {
        let (y_final, paths) =
            pure_noise_sample(x, f, s, &master.child(&[0]), cfg.n_paths, cfg.noise_mode)?;
        return Ok(CascadeResult {
            uncertainty: uncertainty_map(&paths)?,
            per_path_outputs: paths,
            per_cascade_priors: Vec::new(),
            per_cascade_averages: vec![y_final.clone()],
            y_final,
        });
    }
    let mut y_prior = if prior.is_none() {
        if cfg.t_s != s.steps() {
            return Err(CmdmError::invalid(
                "sampling without a prior needs t_s = T or the pure-noise mode",
            ));
        }
        Grid2D::zeros(x.height(), x.width())?
    } else {
        prior.generate(x)?
    };
    let mut priors = Vec::with_capacity(cfg.n_cascades);
    let mut averages = Vec::with_capacity(cfg.n_cascades);
    let mut pooled = Vec::new();
    let mut last = Vec::new();
    for c in 0..cfg.n_cascades {
        let (avg, paths) = multi_path(
            x,
            &y_prior,
            cfg.t_s,
            cfg.n_paths,
            f,
            s,
            &master.child(&[c as u64]),
            cfg.noise_mode,
        )?;
        let next = avg.lincomb(0.5, &y_prior, 0.5)?;
        priors.push(std::mem::replace(&mut y_prior, next));
        averages.push(avg);
        if cfg.pooled_uncertainty {
            pooled.extend(paths.iter().cloned());
        }
        last = paths;
    }
    let uncertainty = if cfg.pooled_uncertainty {
        uncertainty_map(&pooled)?
    } else {
        uncertainty_map(&last)?
    };
    Ok(CascadeResult {
        y_final: averages.last().cloned().expect("at least one cascade"),
        per_path_outputs: last,
        uncertainty,
        per_cascade_priors: priors,
        per_cascade_averages: averages,
    })
}
