//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The page generates a synthetic `(input, target)` pair, then noises both
//! to a chosen timestep with the same noise draw. At larger `t` the noised
//! input and the noised target become hard to tell apart, which is why the
//! reverse process can start from the noised prior instead of pure noise.

use cmdm::diffusion::forward_sample;
use cmdm::metrics::psnr;
use cmdm::rng::sample_gaussian_grid;
use cmdm::tasks::dataset::make_raw_pair;
use cmdm::tasks::{to_unit, Normalization, TaskSpec, TaskTag};
use cmdm::{Grid2D, NoiseSchedule, RngStream};
use wasm_bindgen::prelude::*;

fn js_err(e: cmdm::CmdmError) -> JsError {
    JsError::new(&e.to_string())
}

/// A generated pair on `[-1, 1]`.
#[wasm_bindgen]
pub struct Demo {
    x: Grid2D,
    y0: Grid2D,
    schedule: NoiseSchedule,
}

/// Both images noised to the same timestep with one shared noise draw.
#[wasm_bindgen]
pub struct NoisedPair {
    input: Vec<f64>,
    target: Vec<f64>,
    gamma: f64,
    gap_to_noise: f64,
}

#[wasm_bindgen]
impl NoisedPair {
    pub fn input(&self) -> Vec<f64> {
        self.input.clone()
    }

    pub fn target(&self) -> Vec<f64> {
        self.target.clone()
    }

    /// Remaining signal fraction `gamma_t`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Per-pixel energy of the input/target difference after noising,
    /// relative to the noise energy.
    pub fn gap_to_noise(&self) -> f64 {
        self.gap_to_noise
    }
}

#[wasm_bindgen]
impl Demo {
    /// `task` is one of `sparse-view-6x`, `sparse-view-4x`, `blur`, `mask`.
    #[wasm_bindgen(constructor)]
    pub fn new(task: &str, seed: u32, size: usize) -> Result<Demo, JsError> {
        let task: TaskTag = task.parse().map_err(js_err)?;
        let mut spec = TaskSpec::default();
        spec.phantom.image_size = size;
        let mut rng = RngStream::derive(seed as u64, &[]);
        let (x, y0) = make_raw_pair(task, &spec, &mut rng).map_err(js_err)?;
        let lo = x.min().min(y0.min());
        let hi = x.max().max(y0.max());
        let norm = Normalization::new(lo, if hi > lo { hi } else { lo + 1.0 }).map_err(js_err)?;
        Ok(Demo {
            x: norm.normalize(&x).map_err(js_err)?,
            y0: norm.normalize(&y0).map_err(js_err)?,
            schedule: NoiseSchedule::default_linear(),
        })
    }

    pub fn size(&self) -> usize {
        self.x.width()
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    pub fn input(&self) -> Vec<f64> {
        self.x.data().to_vec()
    }

    pub fn target(&self) -> Vec<f64> {
        self.y0.data().to_vec()
    }

    /// PSNR of the input against the target on `[0, 1]` intensities.
    pub fn input_psnr(&self) -> Result<f64, JsError> {
        let u = |g: &Grid2D| to_unit(g).map_err(js_err);
        psnr(&u(&self.x)?, &u(&self.y0)?, 1.0).map_err(js_err)
    }

    /// Noises input and target to timestep `t` with the noise of `seed`.
    pub fn noised(&self, t: usize, seed: u32) -> Result<NoisedPair, JsError> {
        let eps = sample_gaussian_grid(
            &mut RngStream::derive(seed as u64, &[1]),
            self.x.height(),
            self.x.width(),
        );
        let input = forward_sample(&self.x, t, &eps, &self.schedule).map_err(js_err)?;
        let target = forward_sample(&self.y0, t, &eps, &self.schedule).map_err(js_err)?;
        let gamma = self.schedule.gamma_at(t).map_err(js_err)?;
        let diff = input.sub(&target).map_err(js_err)?;
        let gap = diff.data().iter().map(|d| d * d).sum::<f64>() / diff.len() as f64;
        Ok(NoisedPair {
            input: input.into_data(),
            target: target.into_data(),
            gamma,
            gap_to_noise: if gamma < 1.0 {
                gap / (1.0 - gamma)
            } else {
                f64::INFINITY
            },
        })
    }

    /// `gamma_t` for `t = 0..=T`.
    pub fn gamma_curve(&self) -> Vec<f64> {
        self.schedule.gammas().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_view_pair_is_normalised_and_degraded() {
        let d = Demo::new("sparse-view-6x", 3, 32).unwrap();
        assert_eq!(d.size(), 32);
        let all: Vec<f64> = d.input().into_iter().chain(d.target()).collect();
        let (lo, hi) = all
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        assert_ne!(d.input(), d.target());
    }

    #[test]
    fn noising_closes_the_gap_as_t_grows() {
        let d = Demo::new("blur", 1, 32).unwrap();
        let early = d.noised(10, 0).unwrap();
        let late = d.noised(800, 0).unwrap();
        assert!(late.gamma() < early.gamma());
        assert!(late.gap_to_noise() < early.gap_to_noise());
        assert_eq!(d.noised(0, 0).unwrap().input(), d.input());
        assert_eq!(d.gamma_curve().len(), d.steps() + 1);
    }
}
