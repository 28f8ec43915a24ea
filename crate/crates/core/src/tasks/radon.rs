//! Parallel-beam projection and filtered back projection.
//!
//! Geometry is in pixel units with the origin at the image centre and `y`
//! pointing up. Detector `k` of `n` sits at offset `k - (n - 1) / 2` and
//! view angles are `k·360/n_views` degrees.

use serde::{Deserialize, Serialize};

use crate::error::{CmdmError, Result};
use crate::grid::Grid2D;

/// Line-integral samples per pixel of ray length.
const RAY_SAMPLES_PER_PIXEL: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sinogram {
    /// One row per view, one column per detector.
    pub values: Grid2D,
    pub angles_deg: Vec<f64>,
}

impl Sinogram {
    pub fn n_views(&self) -> usize {
        self.values.height()
    }

    pub fn n_detectors(&self) -> usize {
        self.values.width()
    }
}

/// Default detector count for an image of side `size`: 1.5 × size, which
/// covers the image diagonal.
pub fn default_detectors(size: usize) -> usize {
    (3 * size).div_ceil(2)
}

fn view_angle(k: usize, n_views: usize) -> f64 {
    (k * 360) as f64 / n_views as f64
}

/// Image with a one-pixel zero border, for branch-light bilinear lookups.
struct Padded {
    data: Vec<f64>,
    side: usize,
    /// Offset from centred coordinates to padded column/row coordinates.
    shift: f64,
}

impl Padded {
    fn new(img: &Grid2D) -> Self {
        let n = img.width();
        let side = n + 2;
        let mut data = vec![0.0; side * side];
        for r in 0..n {
            data[(r + 1) * side + 1..(r + 1) * side + 1 + n].copy_from_slice(img.row(r));
        }
        Padded {
            data,
            side,
            shift: 0.5 * n as f64 + 0.5,
        }
    }

    /// Bilinear sample at centred `(x, y)`, zero outside the image.
    #[inline]
    fn sample(&self, x: f64, y: f64) -> f64 {
        let col = x + self.shift;
        let row = self.shift - y;
        let limit = (self.side - 1) as f64;
        if !(col >= 0.0 && row >= 0.0 && col < limit && row < limit) {
            return 0.0;
        }
        let (c0, r0) = (col as usize, row as usize);
        let (fc, fr) = (col - c0 as f64, row - r0 as f64);
        let i = r0 * self.side + c0;
        let d = &self.data;
        (1.0 - fr) * ((1.0 - fc) * d[i] + fc * d[i + 1])
            + fr * ((1.0 - fc) * d[i + self.side] + fc * d[i + self.side + 1])
    }
}

/// Parallel-beam line integrals over `n_views` angles uniformly spaced in
/// `[0°, 360°)`.
pub fn radon(img: &Grid2D, n_views: usize, n_detectors: usize) -> Result<Sinogram> {
    if img.height() != img.width() {
        return Err(CmdmError::invalid(format!(
            "radon needs a square image, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    if n_views == 0 || n_detectors == 0 {
        return Err(CmdmError::invalid(
            "view and detector counts must be positive",
        ));
    }
    // Rays only need to cover the disc circumscribing the image.
    let reach = img.width() as f64 / std::f64::consts::SQRT_2 + 1.0;
    let du = 1.0 / RAY_SAMPLES_PER_PIXEL;
    let mid = (n_detectors as f64 - 1.0) / 2.0;
    let mut values = Vec::with_capacity(n_views * n_detectors);
    let mut angles = Vec::with_capacity(n_views);
    let padded = Padded::new(img);
    for k in 0..n_views {
        let deg = view_angle(k, n_views);
        angles.push(deg);
        let (sin, cos) = deg.to_radians().sin_cos();
        for d in 0..n_detectors {
            let s = d as f64 - mid;
            let half = (reach * reach - s * s).max(0.0).sqrt();
            let m = (2.0 * half / du).ceil() as usize;
            let mut acc = 0.0;
            for j in 0..m {
                let u = -half + (j as f64 + 0.5) * du;
                acc += padded.sample(s * cos - u * sin, s * sin + u * cos);
            }
            values.push(acc * du);
        }
    }
    Ok(Sinogram {
        values: Grid2D::from_vec(n_views, n_detectors, values)?,
        angles_deg: angles,
    })
}

/// Keeps every `factor`-th view, starting with view 0.
pub fn subsample_views(sino: &Sinogram, factor: usize) -> Result<Sinogram> {
    let n = sino.n_views();
    if factor == 0 || n % factor != 0 {
        return Err(CmdmError::invalid(format!(
            "factor {factor} does not divide {n} views"
        )));
    }
    let nd = sino.n_detectors();
    let mut values = Vec::with_capacity(n / factor * nd);
    let mut angles = Vec::with_capacity(n / factor);
    for k in (0..n).step_by(factor) {
        values.extend_from_slice(sino.values.row(k));
        angles.push(sino.angles_deg[k]);
    }
    Ok(Sinogram {
        values: Grid2D::from_vec(n / factor, nd, values)?,
        angles_deg: angles,
    })
}

/// Ram-Lak kernel sampled at unit detector spacing.
fn ram_lak(offset: isize) -> f64 {
    if offset == 0 {
        0.25
    } else if offset % 2 == 0 {
        0.0
    } else {
        -1.0 / (std::f64::consts::PI * std::f64::consts::PI * (offset * offset) as f64)
    }
}

/// Ramp-filters each projection by spatial convolution with the Ram-Lak
/// kernel.
pub fn ramp_filter(sino: &Sinogram) -> Result<Grid2D> {
    let nd = sino.n_detectors();
    let kernel: Vec<f64> = (0..2 * nd - 1)
        .map(|i| ram_lak(i as isize - (nd as isize - 1)))
        .collect();
    let mut out = Vec::with_capacity(sino.values.len());
    for v in 0..sino.n_views() {
        let p = sino.values.row(v);
        for k in 0..nd {
            let mut acc = 0.0;
            for (j, pj) in p.iter().enumerate() {
                acc += kernel[k + nd - 1 - j] * pj;
            }
            out.push(acc);
        }
    }
    Grid2D::from_vec(sino.n_views(), nd, out)
}

/// Filtered back projection onto an `out_size²` grid, scaled by
/// `π / n_views`.
pub fn fbp(sino: &Sinogram, out_size: usize) -> Result<Grid2D> {
    if out_size == 0 {
        return Err(CmdmError::invalid("output size must be positive"));
    }
    if sino.angles_deg.len() != sino.n_views() {
        return Err(CmdmError::shape(sino.n_views(), sino.angles_deg.len()));
    }
    let filtered = ramp_filter(sino)?;
    let nd = sino.n_detectors();
    let mid = (nd as f64 - 1.0) / 2.0;
    let half = out_size as f64 / 2.0;
    let mut img = vec![0.0; out_size * out_size];
    for (v, deg) in sino.angles_deg.iter().enumerate() {
        let (sin, cos) = deg.to_radians().sin_cos();
        let q = filtered.row(v);
        for r in 0..out_size {
            let y = half - (r as f64 + 0.5);
            for c in 0..out_size {
                let x = c as f64 + 0.5 - half;
                let pos = x * cos + y * sin + mid;
                let i0 = pos.floor();
                let f = pos - i0;
                let i0 = i0 as isize;
                let at = |i: isize| {
                    if i >= 0 && (i as usize) < nd {
                        q[i as usize]
                    } else {
                        0.0
                    }
                };
                img[r * out_size + c] += (1.0 - f) * at(i0) + f * at(i0 + 1);
            }
        }
    }
    let scale = std::f64::consts::PI / sino.n_views() as f64;
    for v in &mut img {
        *v *= scale;
    }
    Grid2D::from_vec(out_size, out_size, img)
}
