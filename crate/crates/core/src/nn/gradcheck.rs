//! Finite-difference verification of analytic gradients.

use super::network::Network;
use super::tensor::FeatureMap;
use crate::error::{CmdmError, Result};

/// Scalar loss used to seed the backward pass.
#[derive(Debug, Clone)]
pub enum LossSpec {
    /// `½ Σ (y - target)²`
    SquaredError(Vec<FeatureMap>),
    /// `Σ w · y`
    Weighted(Vec<FeatureMap>),
}

impl LossSpec {
    fn value_and_grad(&self, outputs: &[FeatureMap]) -> Result<(f64, Vec<FeatureMap>)> {
        let refs = match self {
            LossSpec::SquaredError(t) | LossSpec::Weighted(t) => t,
        };
        if refs.len() != outputs.len() || refs.iter().zip(outputs).any(|(a, b)| !a.same_shape(b)) {
            return Err(CmdmError::shape(
                "loss reference matching the outputs",
                "mismatch",
            ));
        }
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(outputs.len());
        for (y, r) in outputs.iter().zip(refs) {
            let mut g = y.clone();
            match self {
                LossSpec::SquaredError(_) => {
                    for (gi, (yi, ti)) in g.data.iter_mut().zip(y.data.iter().zip(&r.data)) {
                        let d = yi - ti;
                        loss += 0.5 * d * d;
                        *gi = d;
                    }
                }
                LossSpec::Weighted(_) => {
                    for (gi, (yi, wi)) in g.data.iter_mut().zip(y.data.iter().zip(&r.data)) {
                        loss += yi * wi;
                        *gi = *wi;
                    }
                }
            }
            grads.push(g);
        }
        Ok((loss, grads))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameters and input entries compared.
    pub checked: usize,
    /// Entries whose perturbation moved a ReLU across its kink.
    pub skipped: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub const FD_STEP: f64 = 1e-3;

/// Compares analytic parameter and input gradients against central
/// differences with step [`FD_STEP`]. The relative error of an entry is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(
    net: &Network,
    inputs: &[FeatureMap],
    loss: &LossSpec,
    tol: f64,
) -> Result<GradCheckReport> {
    if net.param_count() > 10_000 {
        return Err(CmdmError::invalid(format!(
            "gradient check is limited to 10^4 parameters, network has {}",
            net.param_count()
        )));
    }
    let (outputs, tape) = net.forward(inputs)?;
    let (_, seed) = loss.value_and_grad(&outputs)?;
    let (analytic, input_grads) = net.backward(&tape, &seed)?;
    let base_pattern = net.relu_pattern(&tape);

    let eval = |probe: &Network, xs: &[FeatureMap]| -> Result<(f64, Vec<bool>)> {
        let (out, tape) = probe.forward(xs)?;
        Ok((loss.value_and_grad(&out)?.0, probe.relu_pattern(&tape)))
    };

    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    let mut record = |a: f64, plus: (f64, Vec<bool>), minus: (f64, Vec<bool>)| {
        if plus.1 != base_pattern || minus.1 != base_pattern {
            skipped += 1;
            return;
        }
        let n = (plus.0 - minus.0) / (2.0 * FD_STEP);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
        checked += 1;
    };

    let mut probe = net.clone();
    for l in 0..net.params().len() {
        for i in 0..net.params()[l].len() {
            let orig = net.params()[l][i];
            probe.params_mut()[l][i] = orig + FD_STEP;
            let plus = eval(&probe, inputs)?;
            probe.params_mut()[l][i] = orig - FD_STEP;
            let minus = eval(&probe, inputs)?;
            probe.params_mut()[l][i] = orig;
            record(analytic.per_layer[l][i], plus, minus);
        }
    }

    let mut xs = inputs.to_vec();
    for s in 0..xs.len() {
        for i in 0..xs[s].data.len() {
            let orig = xs[s].data[i];
            xs[s].data[i] = orig + FD_STEP;
            let plus = eval(net, &xs)?;
            xs[s].data[i] = orig - FD_STEP;
            let minus = eval(net, &xs)?;
            xs[s].data[i] = orig;
            record(input_grads[s].data[i], plus, minus);
        }
    }

    Ok(GradCheckReport {
        max_relative_error: max_rel,
        checked,
        skipped,
        tolerance: tol,
        passed: checked > 0 && max_rel <= tol,
    })
}
