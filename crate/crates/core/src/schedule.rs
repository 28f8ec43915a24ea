//! Noise schedules.
//!
//! Tables are indexed by timestep `t` in `0..=T`. Index 0 is the clean image:
//! `alpha[0] = 1`, `beta[0] = 0`, `gamma[0] = 1`, and
//! `gamma[t] = gamma[t - 1] * alpha[t]`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CmdmError, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// The parameters a schedule is rebuilt from when it is persisted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }

    /// Short hex digest identifying the schedule; stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.steps as u64).to_le_bytes());
        h.update(self.beta_start.to_bits().to_le_bytes());
        h.update(self.beta_end.to_bits().to_le_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: Option<ScheduleParams>,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    gamma: Vec<f64>,
}

impl NoiseSchedule {
    /// `beta_t` interpolated linearly from `beta_start` at `t = 1` to
    /// `beta_end` at `t = steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(CmdmError::invalid("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(CmdmError::invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = (1..=steps)
            .map(|t| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut s = Self::from_betas(&betas)?;
        s.params = Some(ScheduleParams {
            steps,
            beta_start,
            beta_end,
        });
        Ok(s)
    }

    /// Schedule from explicit `beta_1..beta_T`. Zero betas are accepted so
    /// degenerate (identity) steps can be expressed.
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(CmdmError::invalid("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b >= 0.0 && **b < 1.0)) {
            return Err(CmdmError::invalid(format!("beta {b} outside [0, 1)")));
        }
        let mut beta = Vec::with_capacity(betas.len() + 1);
        beta.push(0.0);
        beta.extend_from_slice(betas);
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut gamma = Vec::with_capacity(alpha.len());
        gamma.push(1.0);
        for t in 1..alpha.len() {
            gamma.push(gamma[t - 1] * alpha[t]);
        }
        Ok(Self {
            params: None,
            beta,
            alpha,
            gamma,
        })
    }

    pub fn default_linear() -> Self {
        ScheduleParams::default()
            .build()
            .expect("default schedule parameters are valid")
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn params(&self) -> Option<ScheduleParams> {
        self.params
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(CmdmError::Index {
                index: t,
                min: 0,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub fn gamma_at(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.gamma[t])
    }

    pub fn alpha_at(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alpha[t])
    }

    pub fn beta_at(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.beta[t])
    }

    // Unchecked accessors for callers that validated `t` already.
    pub(crate) fn gamma(&self, t: usize) -> f64 {
        self.gamma[t]
    }

    pub(crate) fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_endpoints() {
        let s = NoiseSchedule::default_linear();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.gamma_at(0).unwrap(), 1.0);
        assert!((s.gamma_at(1).unwrap() - 0.9999).abs() < 1e-15);
        let g2 = 0.9999 * (1.0 - (1e-4 + (0.02 - 1e-4) / 999.0));
        assert!((s.gamma_at(2).unwrap() - g2).abs() < 1e-15);
    }

    #[test]
    fn gamma_at_end_matches_direct_product() {
        let s = NoiseSchedule::default_linear();
        let direct: f64 = (0..1000)
            .map(|i| 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0))
            .product();
        let g = s.gamma_at(1000).unwrap();
        assert!((g - direct).abs() <= 1e-12 * direct.abs());
        assert!(g > 3.9e-5 && g < 4.1e-5, "gamma_T = {g}");
    }

    #[test]
    fn single_step() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.gamma_at(1).unwrap(), 0.5);
    }

    #[test]
    fn invalid_bounds() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
        let s = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        assert!(matches!(s.gamma_at(11), Err(CmdmError::Index { .. })));
    }

    #[test]
    fn fingerprint_distinguishes_params() {
        let a = ScheduleParams::default();
        let b = ScheduleParams { steps: 999, ..a };
        assert_eq!(a.fingerprint(), ScheduleParams::default().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
