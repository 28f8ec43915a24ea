use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};
use crate::error::{CmdmError, Result};

/// Adam hyper-parameters plus a linear learning-rate warmup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            warmup_steps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(net: &Network, config: AdamConfig) -> Result<Self> {
        let ok = |b: f64| b > 0.0 && b < 1.0;
        if !(config.lr > 0.0 && ok(config.beta1) && ok(config.beta2) && config.eps > 0.0) {
            return Err(CmdmError::invalid(format!(
                "invalid Adam configuration {config:?}"
            )));
        }
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Ok(Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        })
    }

    /// Learning rate applied at optimizer step `step` (1-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        let w = self.config.warmup_steps;
        if w == 0 {
            self.config.lr
        } else {
            self.config.lr * (step as f64 / w as f64).min(1.0)
        }
    }

    fn matches(&self, net: &Network) -> bool {
        self.first_moment.len() == net.params().len()
            && self
                .first_moment
                .iter()
                .zip(net.params())
                .all(|(m, p)| m.len() == p.len())
    }
}

/// One bias-corrected Adam update. Non-finite gradients reject the step and
/// leave both the network and the optimizer untouched.
pub fn adam_step(net: &mut Network, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    if !opt.matches(net) || grads.per_layer.len() != net.params().len() {
        return Err(CmdmError::shape(
            "optimizer state matching the network",
            "mismatched layout",
        ));
    }
    if !grads.is_finite() {
        return Err(CmdmError::Numeric(format!(
            "non-finite gradient at optimizer step {}",
            opt.step + 1
        )));
    }
    opt.step += 1;
    let t = opt.step;
    let AdamConfig {
        beta1, beta2, eps, ..
    } = opt.config;
    let lr = opt.lr_at(t);
    let c1 = 1.0 - beta1.powf(t as f64);
    let c2 = 1.0 - beta2.powf(t as f64);
    let params = net.params_mut();
    for l in 0..params.len() {
        let (p, g) = (&mut params[l], &grads.per_layer[l]);
        let (m, v) = (&mut opt.first_moment[l], &mut opt.second_moment[l]);
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Exponential moving average of network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub rate: f64,
    pub shadow: Vec<Vec<f64>>,
}

impl EmaState {
    pub fn new(net: &Network, rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(CmdmError::invalid(format!(
                "EMA rate {rate} outside [0, 1]"
            )));
        }
        Ok(Self {
            rate,
            shadow: net.params().to_vec(),
        })
    }

    /// `shadow <- rate * shadow + (1 - rate) * params`
    pub fn update(&mut self, net: &Network) -> Result<()> {
        if self.shadow.len() != net.params().len() {
            return Err(CmdmError::shape(
                "EMA shadow matching the network",
                "mismatched layout",
            ));
        }
        let r = self.rate;
        for (s, p) in self.shadow.iter_mut().zip(net.params()) {
            if s.len() != p.len() {
                return Err(CmdmError::shape(p.len(), s.len()));
            }
            for (a, b) in s.iter_mut().zip(p) {
                *a = r * *a + (1.0 - r) * b;
            }
        }
        Ok(())
    }

    /// A copy of `net` carrying the shadow parameters.
    pub fn to_network(&self, net: &Network) -> Result<Network> {
        Network::from_parts(net.layers().to_vec(), self.shadow.clone())
    }
}
