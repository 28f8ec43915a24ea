//! Random ellipse phantoms.

use serde::{Deserialize, Serialize};

use crate::error::{CmdmError, Result};
use crate::grid::Grid2D;
use crate::rng::RngStream;

/// Ranges for random phantoms. Coordinates are in the unit square
/// `[-1, 1]²` of the image frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub image_size: usize,
    /// Inclusive range of the ellipse count.
    pub ellipse_count: [usize; 2],
    pub intensity: [f64; 2],
    /// Range of each semi-axis.
    pub semi_axis: [f64; 2],
    pub rotation_deg: [f64; 2],
    /// Fraction of the room left inside the unit disc that the centre may
    /// use; 0 keeps every ellipse centred.
    pub center_spread: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            image_size: 64,
            ellipse_count: [3, 8],
            intensity: [0.1, 0.6],
            semi_axis: [0.08, 0.6],
            rotation_deg: [0.0, 180.0],
            center_spread: 1.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if self.image_size == 0 {
            return Err(CmdmError::invalid("phantom image size must be positive"));
        }
        if self.ellipse_count[0] > self.ellipse_count[1] {
            return Err(CmdmError::invalid("ellipse count range is reversed"));
        }
        if !ordered(self.intensity) || !ordered(self.rotation_deg) || !ordered(self.semi_axis) {
            return Err(CmdmError::invalid(
                "phantom ranges must be finite and ordered",
            ));
        }
        if !(self.semi_axis[0] > 0.0 && self.semi_axis[1] <= 1.0) {
            return Err(CmdmError::invalid("semi-axes must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.center_spread) {
            return Err(CmdmError::invalid("center spread must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub rotation_deg: f64,
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.semi_axes.0).powi(2) + (v / self.semi_axes.1).powi(2) <= 1.0
    }
}

/// Sum of ellipse indicators at pixel centres, clipped to `[0, 1]`.
pub fn render_ellipses(ellipses: &[Ellipse], size: usize) -> Result<Grid2D> {
    let coord = |i: usize| (2.0 * i as f64 + 1.0) / size as f64 - 1.0;
    Grid2D::from_fn(size, size, |r, c| {
        // Row 0 is the top of the image.
        let (x, y) = (coord(c), -coord(r));
        let v: f64 = ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum();
        v.clamp(0.0, 1.0)
    })
}

/// Draws ellipses that fit inside the unit disc: the centre is placed at
/// distance at most `1 - max(semi-axes)` from the origin.
pub fn random_ellipses(rng: &mut RngStream, spec: &PhantomSpec) -> Result<Vec<Ellipse>> {
    spec.validate()?;
    let [lo, hi] = spec.ellipse_count;
    let count = lo + rng.below(hi - lo + 1);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.uniform_range(spec.semi_axis[0], spec.semi_axis[1]);
        let b = rng.uniform_range(spec.semi_axis[0], spec.semi_axis[1]);
        let room = spec.center_spread * (1.0 - a.max(b));
        let radius = room * rng.uniform().sqrt();
        let angle = rng.uniform_range(0.0, std::f64::consts::TAU);
        out.push(Ellipse {
            center: (radius * angle.cos(), radius * angle.sin()),
            semi_axes: (a, b),
            rotation_deg: rng.uniform_range(spec.rotation_deg[0], spec.rotation_deg[1]),
            intensity: rng.uniform_range(spec.intensity[0], spec.intensity[1]),
        });
    }
    Ok(out)
}

pub fn gen_phantom(rng: &mut RngStream, spec: &PhantomSpec) -> Result<Grid2D> {
    let ellipses = random_ellipses(rng, spec)?;
    render_ellipses(&ellipses, spec.image_size)
}
