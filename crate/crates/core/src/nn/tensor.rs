use serde::{Deserialize, Serialize};

use crate::error::{CmdmError, Result};
use crate::grid::Grid2D;

/// A channel stack for one sample, stored channel-major (`C x H x W`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_grids(grids: &[&Grid2D]) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| CmdmError::invalid("feature map needs at least one channel"))?;
        let (h, w) = first.shape();
        let mut data = Vec::with_capacity(grids.len() * h * w);
        for g in grids {
            first.check_same_shape(g)?;
            data.extend_from_slice(g.data());
        }
        Ok(Self {
            channels: grids.len(),
            height: h,
            width: w,
            data,
        })
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn to_grid(&self, c: usize) -> Result<Grid2D> {
        Grid2D::from_vec(self.height, self.width, self.channel(c).to_vec())
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub(crate) fn shape_str(&self) -> String {
        format!("{}x{}x{}", self.channels, self.height, self.width)
    }

    pub(crate) fn add_assign(&mut self, other: &FeatureMap) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}
