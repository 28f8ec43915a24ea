//! Forward noising, posterior, clean-image estimate, the single reverse step
//! and the denoising loss.

use serde::{Deserialize, Serialize};

use crate::error::{CmdmError, Result};
use crate::grid::Grid2D;
use crate::models::NoisePredictor;
use crate::rng::{sample_gaussian_grid, RngStream};
use crate::schedule::NoiseSchedule;

/// Lower bound applied to `gamma_t` before dividing by `sqrt(gamma_t)`.
pub const GAMMA_FLOOR: f64 = 1e-12;

/// How the reverse process injects noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// `sqrt(1 - alpha_t)·eps_t` at every step, including `t = 1`.
    StochasticLiteral,
    /// As `StochasticLiteral`, but the last step (`t = 1`) adds no noise.
    #[default]
    StochasticStandard,
    /// No noise is drawn anywhere: neither in the reverse steps nor in the
    /// shortcut initialisation.
    Deterministic,
}

impl NoiseMode {
    /// Whether a reverse step at `t` draws fresh noise.
    pub fn draws_at(self, t: usize) -> bool {
        match self {
            NoiseMode::StochasticLiteral => true,
            NoiseMode::StochasticStandard => t > 1,
            NoiseMode::Deterministic => false,
        }
    }

    pub fn is_stochastic(self) -> bool {
        self != NoiseMode::Deterministic
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = CmdmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic-literal" => Ok(NoiseMode::StochasticLiteral),
            "stochastic-standard" => Ok(NoiseMode::StochasticStandard),
            "deterministic" => Ok(NoiseMode::Deterministic),
            other => Err(CmdmError::invalid(format!("unknown noise mode {other:?}"))),
        }
    }
}

fn check_step(s: &NoiseSchedule, t: usize, min: usize) -> Result<()> {
    if t < min || t > s.steps() {
        return Err(CmdmError::Index {
            index: t,
            min,
            max: s.steps(),
        });
    }
    Ok(())
}

/// `sqrt(gamma_t)·y0 + sqrt(1 - gamma_t)·eps`
pub fn forward_sample(y0: &Grid2D, t: usize, eps: &Grid2D, s: &NoiseSchedule) -> Result<Grid2D> {
    check_step(s, t, 0)?;
    let g = s.gamma(t);
    y0.lincomb(g.sqrt(), eps, (1.0 - g).sqrt())
}

/// Mean and variance of `q(y_{t-1} | y0, y_t)`.
pub fn posterior_params(
    y0: &Grid2D,
    y_t: &Grid2D,
    t: usize,
    s: &NoiseSchedule,
) -> Result<(Grid2D, f64)> {
    check_step(s, t, 1)?;
    let (a, g, g_prev) = (s.alpha(t), s.gamma(t), s.gamma(t - 1));
    let denom = 1.0 - g;
    if denom <= 0.0 {
        return Err(CmdmError::Numeric(format!("1 - gamma_{t} is zero")));
    }
    let c0 = g_prev.sqrt() * (1.0 - a) / denom;
    let ct = a.sqrt() * (1.0 - g_prev) / denom;
    let sigma2 = (1.0 - g_prev) * (1.0 - a) / denom;
    Ok((y0.lincomb(c0, y_t, ct)?, sigma2))
}

/// `(y_t - sqrt(1 - gamma_t)·eps_hat) / sqrt(gamma_t)`, the clean image
/// implied by a noise estimate.
pub fn estimate_y0(y_t: &Grid2D, eps_hat: &Grid2D, t: usize, s: &NoiseSchedule) -> Result<Grid2D> {
    check_step(s, t, 1)?;
    let g = s.gamma(t);
    if g <= GAMMA_FLOOR {
        return Err(CmdmError::Numeric(format!(
            "gamma_{t} = {g:e} is below the floor {GAMMA_FLOOR:e}"
        )));
    }
    let inv = 1.0 / g.sqrt();
    y_t.lincomb(inv, eps_hat, -(1.0 - g).sqrt() * inv)
}

/// Deterministic part of the reverse update:
/// `(y_t - (1 - alpha_t) / sqrt(1 - gamma_t) · eps_hat) / sqrt(alpha_t)`.
pub(crate) fn reverse_mean(
    y_t: &Grid2D,
    eps_hat: &Grid2D,
    t: usize,
    s: &NoiseSchedule,
) -> Result<Grid2D> {
    let (a, g) = (s.alpha(t), s.gamma(t));
    let one_minus_a = 1.0 - a;
    // A zero beta makes the step the identity (and 1 - gamma may be 0 too).
    let eps_coeff = if one_minus_a == 0.0 {
        0.0
    } else {
        one_minus_a / (1.0 - g).sqrt()
    };
    let inv = 1.0 / a.sqrt();
    y_t.lincomb(inv, eps_hat, -eps_coeff * inv)
}

/// Applies one reverse step given an already computed noise estimate,
/// drawing `eps_t` from `rng` when `mode` asks for it.
pub(crate) fn reverse_update(
    y_t: &Grid2D,
    eps_hat: &Grid2D,
    t: usize,
    s: &NoiseSchedule,
    rng: &mut RngStream,
    mode: NoiseMode,
) -> Result<Grid2D> {
    y_t.check_same_shape(eps_hat)?;
    let mean = reverse_mean(y_t, eps_hat, t, s)?;
    if !mode.draws_at(t) {
        return Ok(mean);
    }
    let sigma = (1.0 - s.alpha(t)).sqrt();
    let z = sample_gaussian_grid(rng, y_t.height(), y_t.width());
    mean.lincomb(1.0, &z, sigma)
}

/// One step of the reverse process, `y_t -> y_{t-1}`.
pub fn reverse_step(
    y_t: &Grid2D,
    x: &Grid2D,
    t: usize,
    f: &dyn NoisePredictor,
    s: &NoiseSchedule,
    rng: &mut RngStream,
    mode: NoiseMode,
) -> Result<Grid2D> {
    check_step(s, t, 1)?;
    y_t.check_same_shape(x)?;
    let eps_hat = f.predict(x, y_t, s.gamma(t))?;
    reverse_update(y_t, &eps_hat, t, s, rng, mode)
}

/// Mean squared error between the predicted and the injected noise.
pub fn dm_loss(
    f: &dyn NoisePredictor,
    x: &Grid2D,
    y0: &Grid2D,
    t: usize,
    eps: &Grid2D,
    s: &NoiseSchedule,
) -> Result<f64> {
    check_step(s, t, 1)?;
    x.check_same_shape(y0)?;
    let y_t = forward_sample(y0, t, eps, s)?;
    let eps_hat = f.predict(x, &y_t, s.gamma(t))?;
    eps_hat.check_same_shape(eps)?;
    Ok(mean_squared_difference(&eps_hat, eps))
}

pub(crate) fn mean_squared_difference(a: &Grid2D, b: &Grid2D) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{OraclePredictor, ZeroPredictor};

    fn random_grid(seed: u64, h: usize, w: usize) -> Grid2D {
        sample_gaussian_grid(&mut RngStream::derive(seed, &[]), h, w)
    }

    fn max_abs_diff(a: &Grid2D, b: &Grid2D) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn forward_sample_special_cases() {
        let s = NoiseSchedule::default_linear();
        let y0 = random_grid(1, 4, 4);
        let eps = random_grid(2, 4, 4);
        assert_eq!(forward_sample(&y0, 0, &eps, &s).unwrap(), y0);
        let zero = Grid2D::zeros(4, 4).unwrap();
        let a = forward_sample(&y0, 300, &zero, &s).unwrap();
        assert!(max_abs_diff(&a, &y0.scale(s.gamma(300).sqrt()).unwrap()) == 0.0);
        let b = forward_sample(&zero, 1000, &eps, &s).unwrap();
        assert!(max_abs_diff(&b, &eps.scale((1.0 - s.gamma(1000)).sqrt()).unwrap()) == 0.0);
        assert!(forward_sample(&y0, 1001, &eps, &s).is_err());
        assert!(forward_sample(&y0, 1, &Grid2D::zeros(2, 2).unwrap(), &s).is_err());
    }

    #[test]
    fn posterior_edge_cases() {
        let s = NoiseSchedule::default_linear();
        let y0 = random_grid(3, 4, 4);
        let yt = random_grid(4, 4, 4);
        let (_, sigma2) = posterior_params(&y0, &yt, 1, &s).unwrap();
        assert_eq!(sigma2, 0.0);
        let zero = Grid2D::zeros(4, 4).unwrap();
        let (mu, _) = posterior_params(&zero, &zero, 500, &s).unwrap();
        assert!(mu.data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            posterior_params(&y0, &yt, 0, &s),
            Err(CmdmError::Index { .. })
        ));
    }

    #[test]
    fn posterior_matches_formula_at_t500() {
        let s = NoiseSchedule::default_linear();
        let y0 = random_grid(5, 3, 3);
        let yt = random_grid(6, 3, 3);
        let t = 500;
        let (a, g, gp) = (
            s.alpha_at(t).unwrap(),
            s.gamma_at(t).unwrap(),
            s.gamma_at(t - 1).unwrap(),
        );
        let (mu, sigma2) = posterior_params(&y0, &yt, t, &s).unwrap();
        for i in 0..9 {
            let expected = gp.sqrt() * (1.0 - a) / (1.0 - g) * y0.data()[i]
                + a.sqrt() * (1.0 - gp) / (1.0 - g) * yt.data()[i];
            assert!((mu.data()[i] - expected).abs() < 1e-14);
        }
        // The posterior mean is unbiased: E[mu] = sqrt(gamma_{t-1})·y0 when
        // y_t is replaced by its mean sqrt(gamma_t)·y0.
        let mean_yt = y0.scale(g.sqrt()).unwrap();
        let (mu_bar, _) = posterior_params(&y0, &mean_yt, t, &s).unwrap();
        assert!(max_abs_diff(&mu_bar, &y0.scale(gp.sqrt()).unwrap()) < 1e-12);
        assert!((sigma2 - (1.0 - gp) * (1.0 - a) / (1.0 - g)).abs() < 1e-16);
    }

    #[test]
    fn estimate_y0_inverts_forward_sample() {
        let s = NoiseSchedule::default_linear();
        let y0 = random_grid(7, 5, 5);
        let eps = random_grid(8, 5, 5);
        for t in [1, 10, 250, 999, 1000] {
            let yt = forward_sample(&y0, t, &eps, &s).unwrap();
            let back = estimate_y0(&yt, &eps, t, &s).unwrap();
            assert!(max_abs_diff(&back, &y0) < 1e-9, "t = {t}");
        }
        let yt = forward_sample(&y0, 100, &eps, &s).unwrap();
        let zero = Grid2D::zeros(5, 5).unwrap();
        let est = estimate_y0(&yt, &zero, 100, &s).unwrap();
        assert!(max_abs_diff(&est, &yt.scale(1.0 / s.gamma(100).sqrt()).unwrap()) < 1e-15);
    }

    #[test]
    fn estimate_y0_error_scales_with_perturbation() {
        let s = NoiseSchedule::default_linear();
        let y0 = random_grid(9, 4, 4);
        let eps = random_grid(10, 4, 4);
        let delta = random_grid(11, 4, 4).scale(0.01).unwrap();
        let t = 400;
        let yt = forward_sample(&y0, t, &eps, &s).unwrap();
        let est = estimate_y0(&yt, &eps.add(&delta).unwrap(), t, &s).unwrap();
        let g = s.gamma(t);
        let factor = (1.0 - g).sqrt() / g.sqrt();
        for i in 0..16 {
            let err = est.data()[i] - y0.data()[i];
            assert!((err + factor * delta.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn estimate_y0_rejects_vanishing_gamma() {
        let s = NoiseSchedule::linear(50, 0.9, 0.9).unwrap();
        let g = Grid2D::zeros(2, 2).unwrap();
        assert!(matches!(
            estimate_y0(&g, &g, 50, &s),
            Err(CmdmError::Numeric(_))
        ));
    }

    #[test]
    fn clean_image_coefficient_identity() {
        let s = NoiseSchedule::default_linear();
        for t in 1..=1000 {
            let (a, g, gp) = (s.alpha(t), s.gamma(t), s.gamma(t - 1));
            let lhs = (1.0 / a.sqrt()) * (1.0 - a) * g.sqrt() / (1.0 - g);
            let rhs = gp.sqrt() * (1.0 - a) / (1.0 - g);
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs(), "t = {t}");
        }
    }

    #[test]
    fn deterministic_step_matches_posterior_mean_with_oracle() {
        // With the exact noise, the deterministic update equals
        // sqrt(gamma_{t-1})·y0 + sqrt(alpha_t)(1-gamma_{t-1})/sqrt(1-gamma_t)·eps,
        // whose y0 coefficient is the posterior one.
        let s = NoiseSchedule::default_linear();
        let y0 = random_grid(12, 4, 4);
        let eps = random_grid(13, 4, 4);
        let x = Grid2D::zeros(4, 4).unwrap();
        let oracle = OraclePredictor::new(y0.clone());
        let mut rng = RngStream::derive(0, &[]);
        for t in [2, 50, 700] {
            let yt = forward_sample(&y0, t, &eps, &s).unwrap();
            let next =
                reverse_step(&yt, &x, t, &oracle, &s, &mut rng, NoiseMode::Deterministic).unwrap();
            let (a, g, gp) = (s.alpha(t), s.gamma(t), s.gamma(t - 1));
            let noise_coeff = a.sqrt() * (1.0 - gp) / (1.0 - g).sqrt();
            let expected = y0.lincomb(gp.sqrt(), &eps, noise_coeff).unwrap();
            assert!(max_abs_diff(&next, &expected) < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn zero_beta_step_is_identity() {
        let s = NoiseSchedule::from_betas(&[0.1, 0.0]).unwrap();
        let yt = random_grid(14, 3, 3);
        let x = Grid2D::zeros(3, 3).unwrap();
        let mut rng = RngStream::derive(0, &[]);
        let f = OraclePredictor::new(random_grid(15, 3, 3));
        let next =
            reverse_step(&yt, &x, 2, &f, &s, &mut rng, NoiseMode::StochasticLiteral).unwrap();
        assert_eq!(next, yt);
    }

    #[test]
    fn stochastic_step_is_reproducible() {
        let s = NoiseSchedule::default_linear();
        let yt = random_grid(16, 4, 4);
        let x = random_grid(17, 4, 4);
        let f = ZeroPredictor;
        let run = || {
            let mut rng = RngStream::derive(99, &[1, 2]);
            reverse_step(&yt, &x, 10, &f, &s, &mut rng, NoiseMode::StochasticLiteral).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn standard_mode_skips_noise_on_last_step() {
        let s = NoiseSchedule::default_linear();
        let yt = random_grid(18, 4, 4);
        let x = Grid2D::zeros(4, 4).unwrap();
        let mut rng = RngStream::derive(0, &[]);
        let a = reverse_step(
            &yt,
            &x,
            1,
            &ZeroPredictor,
            &s,
            &mut rng,
            NoiseMode::StochasticStandard,
        )
        .unwrap();
        let b = reverse_step(
            &yt,
            &x,
            1,
            &ZeroPredictor,
            &s,
            &mut rng,
            NoiseMode::Deterministic,
        )
        .unwrap();
        assert_eq!(a, b);
        let c = reverse_step(
            &yt,
            &x,
            1,
            &ZeroPredictor,
            &s,
            &mut rng,
            NoiseMode::StochasticLiteral,
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn loss_values() {
        let s = NoiseSchedule::default_linear();
        let y0 = random_grid(19, 100, 100);
        let eps = random_grid(20, 100, 100);
        let x = Grid2D::zeros(100, 100).unwrap();
        let oracle = OraclePredictor::new(y0.clone());
        let l = dm_loss(&oracle, &x, &y0, 600, &eps, &s).unwrap();
        assert!(l >= 0.0 && l < 1e-20);
        // Zero predictor: E[loss] = E[eps²] = 1; 10^4 pixels give sd ≈ 0.014.
        let l0 = dm_loss(&ZeroPredictor, &x, &y0, 600, &eps, &s).unwrap();
        assert!((l0 - 1.0).abs() < 0.05, "loss {l0}");
    }
}
