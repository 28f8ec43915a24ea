//! PSNR, SSIM, MAE and Pearson correlation.

use serde::{Deserialize, Serialize};

use crate::error::{CmdmError, Result};
use crate::grid::Grid2D;

fn mse(a: &Grid2D, b: &Grid2D) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(crate::diffusion::mean_squared_difference(a, b))
}

/// `10·log10(peak² / MSE)` in dB; `f64::INFINITY` for identical inputs.
pub fn psnr(a: &Grid2D, b: &Grid2D, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(CmdmError::invalid(format!(
            "PSNR peak must be positive, got {peak}"
        )));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

pub fn mae(a: &Grid2D, b: &Grid2D) -> Result<f64> {
    a.check_same_shape(b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(s / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    /// Normalised 2-D Gaussian window, row-major.
    fn weights(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - c).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let mut w: Vec<f64> = g
            .iter()
            .flat_map(|a| g.iter().map(move |b| a * b))
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }
}

/// Mean SSIM index over every position where the window fits entirely.
pub fn ssim(a: &Grid2D, b: &Grid2D, p: &SsimParams) -> Result<f64> {
    a.check_same_shape(b)?;
    if p.window == 0 || !(p.sigma > 0.0 && p.k1 > 0.0 && p.k2 > 0.0 && p.dynamic_range > 0.0) {
        return Err(CmdmError::invalid(format!("invalid SSIM parameters {p:?}")));
    }
    let (h, w) = a.shape();
    let k = p.window;
    if h < k || w < k {
        return Err(CmdmError::invalid(format!(
            "image {h}x{w} is smaller than the {k}x{k} window"
        )));
    }
    let weights = p.weights();
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let (da, db) = (a.data(), b.data());
    let mut total = 0.0;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                let row = (r + i) * w + c;
                for j in 0..k {
                    let wt = weights[i * k + j];
                    let (x, y) = (da[row + j], db[row + j]);
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * (x * y);
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * (ma * mb) + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / ((h - k + 1) * (w - k + 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    pub r: f64,
    /// Set when either input has zero variance; `r` is then 0.
    pub degenerate: bool,
}

/// Sample Pearson correlation.
pub fn pearson(u: &[f64], v: &[f64]) -> Result<Pearson> {
    if u.len() != v.len() {
        return Err(CmdmError::invalid(format!(
            "length mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 2 {
        return Err(CmdmError::invalid("correlation needs at least two points"));
    }
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (da, db) = (a - mu, b - mv);
        suv += da * db;
        suu += da * da;
        svv += db * db;
    }
    if suu == 0.0 || svv == 0.0 {
        return Ok(Pearson {
            r: 0.0,
            degenerate: true,
        });
    }
    Ok(Pearson {
        r: (suv / (suu.sqrt() * svv.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Median of a non-empty list (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    Some((values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt())
}
