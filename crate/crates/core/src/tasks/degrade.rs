//! Cheap image degradations: Gaussian blur and rectangular masking.

use serde::{Deserialize, Serialize};

use crate::error::{CmdmError, Result};
use crate::grid::Grid2D;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Degradation {
    /// Separable Gaussian blur with standard deviation `sigma` pixels.
    Blur { sigma: f64 },
    /// Zeroes a random axis-aligned rectangle covering `fraction` of the
    /// image.
    Mask { fraction: f64 },
}

pub fn degrade(img: &Grid2D, kind: Degradation, rng: &mut RngStream) -> Result<Grid2D> {
    match kind {
        Degradation::Blur { sigma } => gaussian_blur(img, sigma),
        Degradation::Mask { fraction } => mask_rectangle(img, fraction, rng),
    }
}

/// Convolves rows then columns; near the border the kernel is renormalised
/// over the taps that fall inside the image.
pub fn gaussian_blur(img: &Grid2D, sigma: f64) -> Result<Grid2D> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CmdmError::invalid(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &[f64], len: usize, stride: usize, count: usize, step: usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..count {
            let base = line * step;
            for i in 0..len as isize {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (t, w) in taps.iter().enumerate() {
                    let j = i + t as isize - radius;
                    if j >= 0 && j < len as isize {
                        acc += w * src[base + j as usize * stride];
                        norm += w;
                    }
                }
                out[base + i as usize * stride] = acc / norm;
            }
        }
        out
    };
    let (h, w) = img.shape();
    let rows = pass(img.data(), w, 1, h, w);
    let cols = pass(&rows, h, w, w, 1);
    Grid2D::from_vec(h, w, cols)
}

/// Zeroes an `a × b` rectangle with `a·b` as close as possible to
/// `fraction·h·w`; the shape is drawn among the closest fits and the
/// position uniformly.
pub fn mask_rectangle(img: &Grid2D, fraction: f64, rng: &mut RngStream) -> Result<Grid2D> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CmdmError::invalid(format!(
            "mask fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let (h, w) = img.shape();
    let target = fraction * (h * w) as f64;
    let mut best = f64::INFINITY;
    let mut shapes = Vec::new();
    for a in 1..=h {
        let b = (target / a as f64).round() as usize;
        if b == 0 || b > w {
            continue;
        }
        let err = ((a * b) as f64 - target).abs();
        if err < best - 1e-9 {
            best = err;
            shapes.clear();
        }
        if (err - best).abs() <= 1e-9 {
            shapes.push((a, b));
        }
    }
    let (a, b) = shapes[rng.below(shapes.len())];
    let (r0, c0) = (rng.below(h - a + 1), rng.below(w - b + 1));
    let mut out = img.clone();
    for r in r0..r0 + a {
        for c in c0..c0 + b {
            out.set(r, c, 0.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::phantom::{gen_phantom, PhantomSpec};

    #[test]
    fn tiny_sigma_is_identity() {
        let img = gen_phantom(&mut RngStream::derive(1, &[]), &PhantomSpec::default()).unwrap();
        let out = gaussian_blur(&img, 1e-6).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_preserves_mass() {
        let img = gen_phantom(&mut RngStream::derive(2, &[]), &PhantomSpec::default()).unwrap();
        let out = gaussian_blur(&img, 1.5).unwrap();
        assert!((out.sum() - img.sum()).abs() / img.sum() < 0.005);
    }

    #[test]
    fn mask_zeroes_the_requested_fraction() {
        let img = Grid2D::new(64, 64, 1.0).unwrap();
        for seed in 0..20 {
            let out = mask_rectangle(&img, 0.25, &mut RngStream::derive(seed, &[])).unwrap();
            let zeros = out.data().iter().filter(|&&v| v == 0.0).count();
            assert_eq!(zeros, 1024);
        }
        let img = Grid2D::new(10, 7, 1.0).unwrap();
        let out = mask_rectangle(&img, 0.3, &mut RngStream::derive(0, &[])).unwrap();
        let zeros = out.data().iter().filter(|&&v| v == 0.0).count();
        assert!((zeros as f64 - 21.0).abs() <= 1.0);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let img = Grid2D::zeros(4, 4).unwrap();
        let mut rng = RngStream::derive(0, &[]);
        assert!(degrade(&img, Degradation::Blur { sigma: 0.0 }, &mut rng).is_err());
        assert!(degrade(&img, Degradation::Mask { fraction: 1.0 }, &mut rng).is_err());
    }
}
