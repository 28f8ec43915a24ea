//! The three learned functions (prior generator, noise predictor,
//! discriminator), an analytic oracle predictor, and their losses.

mod train;

pub use train::{
    eval_dm_loss, eval_prior_loss, train_denoiser, train_prior, DenoiserTrainer, LossRecord,
    PriorTrainer, TrainConfig, TrainedNet,
};

use serde::{Deserialize, Serialize};

use crate::diffusion::mean_squared_difference;
use crate::error::{CmdmError, Result};
use crate::grid::Grid2D;
use crate::nn::{FeatureMap, Network};
use crate::schedule::NoiseSchedule;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// `f(x, y_t, gamma_t) -> eps_hat`.
pub trait NoisePredictor: Sync {
    fn predict(&self, x: &Grid2D, y_t: &Grid2D, gamma_t: f64) -> Result<Grid2D>;

    /// Predicts for several states sharing one condition and noise level.
    /// The result must equal calling [`predict`](Self::predict) on each.
    fn predict_many(&self, x: &Grid2D, ys: &[Grid2D], gamma_t: f64) -> Result<Vec<Grid2D>> {
        ys.iter().map(|y| self.predict(x, y, gamma_t)).collect()
    }
}

/// Inverts the forward process exactly given the true clean image.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    y0: Grid2D,
}

impl OraclePredictor {
    pub fn new(y0: Grid2D) -> Self {
        OraclePredictor { y0 }
    }
}

impl NoisePredictor for OraclePredictor {
    fn predict(&self, _x: &Grid2D, y_t: &Grid2D, gamma_t: f64) -> Result<Grid2D> {
        y_t.check_same_shape(&self.y0)?;
        let rest = 1.0 - gamma_t;
        if rest <= 0.0 {
            return Err(CmdmError::Numeric("oracle needs gamma_t < 1".into()));
        }
        let inv = 1.0 / rest.sqrt();
        y_t.lincomb(inv, &self.y0, -gamma_t.sqrt() * inv)
    }
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(&self, _x: &Grid2D, y_t: &Grid2D, _gamma_t: f64) -> Result<Grid2D> {
        Grid2D::zeros(y_t.height(), y_t.width())
    }
}

/// `(y_t - sqrt(gamma_t)·y0) / sqrt(1 - gamma_t)`.
pub fn oracle_predict(
    y_t: &Grid2D,
    y0_true: &Grid2D,
    t: usize,
    s: &NoiseSchedule,
) -> Result<Grid2D> {
    if t == 0 || t > s.steps() {
        return Err(CmdmError::Index {
            index: t,
            min: 1,
            max: s.steps(),
        });
    }
    OraclePredictor::new(y0_true.clone()).predict(y0_true, y_t, s.gamma(t))
}

/// A network taking the stack `(x, y_t, sqrt(gamma_t))` and returning one
/// noise channel.
#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    net: Network,
}

impl TrainedPredictor {
    pub fn new(net: Network) -> Result<Self> {
        if net.input_channels() != 3 || net.output_channels() != 1 {
            return Err(CmdmError::shape(
                "3 input and 1 output channel",
                format!("{} -> {}", net.input_channels(), net.output_channels()),
            ));
        }
        Ok(TrainedPredictor { net })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }
}

pub(crate) fn denoiser_input(x: &Grid2D, y_t: &Grid2D, gamma_t: f64) -> Result<FeatureMap> {
    x.check_same_shape(y_t)?;
    let level = Grid2D::new(x.height(), x.width(), gamma_t.sqrt())?;
    FeatureMap::from_grids(&[x, y_t, &level])
}

impl NoisePredictor for TrainedPredictor {
    fn predict(&self, x: &Grid2D, y_t: &Grid2D, gamma_t: f64) -> Result<Grid2D> {
        Ok(self
            .predict_many(x, std::slice::from_ref(y_t), gamma_t)?
            .remove(0))
    }

    fn predict_many(&self, x: &Grid2D, ys: &[Grid2D], gamma_t: f64) -> Result<Vec<Grid2D>> {
        let inputs = ys
            .iter()
            .map(|y| denoiser_input(x, y, gamma_t))
            .collect::<Result<Vec<_>>>()?;
        self.net
            .predict(&inputs)?
            .iter()
            .map(|o| o.to_grid(0))
            .collect()
    }
}

/// `x -> y_prior`.
#[derive(Debug, Clone, Default)]
pub enum PriorGenerator {
    Identity,
    Trained(Network),
    /// No prior: only valid for sampling that starts from pure noise.
    #[default]
    None,
}

impl PriorGenerator {
    pub fn trained(net: Network) -> Result<Self> {
        if net.input_channels() != 1 || net.output_channels() != 1 {
            return Err(CmdmError::shape(
                "1 input and 1 output channel",
                format!("{} -> {}", net.input_channels(), net.output_channels()),
            ));
        }
        Ok(PriorGenerator::Trained(net))
    }

    pub fn is_none(&self) -> bool {
        matches!(self, PriorGenerator::None)
    }

    pub fn generate(&self, x: &Grid2D) -> Result<Grid2D> {
        Ok(self.generate_many(std::slice::from_ref(x))?.remove(0))
    }

    pub fn generate_many(&self, xs: &[Grid2D]) -> Result<Vec<Grid2D>> {
        match self {
            PriorGenerator::Identity => Ok(xs.to_vec()),
            PriorGenerator::Trained(net) => {
                let inputs = xs
                    .iter()
                    .map(|x| FeatureMap::from_grids(&[x]))
                    .collect::<Result<Vec<_>>>()?;
                net.predict(&inputs)?.iter().map(|o| o.to_grid(0)).collect()
            }
            PriorGenerator::None => Err(CmdmError::InvalidState(
                "no prior generator configured".into(),
            )),
        }
    }
}

/// Which prior variant a configuration asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    Identity,
    #[default]
    Trained,
    None,
}

/// `f_adv(candidate | x)`: a network on the stack `(x, candidate)` whose
/// single logit is squashed to a probability.
#[derive(Debug, Clone)]
pub struct Discriminator {
    net: Network,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Discriminator {
    pub fn new(net: Network) -> Result<Self> {
        if net.input_channels() != 2 || net.output_channels() != 1 {
            return Err(CmdmError::shape(
                "2 input and 1 output channel",
                format!("{} -> {}", net.input_channels(), net.output_channels()),
            ));
        }
        Ok(Discriminator { net })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn probability(&self, candidate: &Grid2D, x: &Grid2D) -> Result<f64> {
        x.check_same_shape(candidate)?;
        let out = self
            .net
            .predict(&[FeatureMap::from_grids(&[x, candidate])?])?;
        Ok(sigmoid(out[0].data[0]))
    }
}

/// Pixel-wise L2 loss of the prior, averaged over pixels.
pub fn prior_loss(y_prior: &Grid2D, y0: &Grid2D) -> Result<f64> {
    y_prior.check_same_shape(y0)?;
    Ok(mean_squared_difference(y_prior, y0))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `(-log d_real - log(1 - d_fake), -log d_fake)`.
pub fn gan_losses(d_real: f64, d_fake: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&d_real) || !(0.0..=1.0).contains(&d_fake) {
        return Err(CmdmError::invalid(format!(
            "discriminator outputs must be probabilities, got {d_real} and {d_fake}"
        )));
    }
    let (r, f) = (clamp_prob(d_real), clamp_prob(d_fake));
    Ok((-r.ln() - (1.0 - f).ln(), -f.ln()))
}
