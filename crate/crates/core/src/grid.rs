//! Dense row-major 2-D grids of `f64`.
//!
//! Every image-valued quantity in the pipeline (inputs, targets, noisy
//! states, noise draws, uncertainty maps) is a [`Grid2D`]. Grids are values:
//! operations return new grids and never mutate their operands.

use serde::{Deserialize, Serialize};

use crate::error::{CmdmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Binary operation applied by [`Grid2D::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    /// Multiply by a scalar. With a grid operand this behaves like `Mul`.
    Scale,
}

/// Right-hand operand of an elementwise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Grid(&'a Grid2D),
    Scalar(f64),
}

impl Grid2D {
    pub fn new(height: usize, width: usize, fill: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CmdmError::invalid(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if !fill.is_finite() {
            return Err(CmdmError::invalid("fill value must be finite"));
        }
        Ok(Self {
            height,
            width,
            data: vec![fill; height * width],
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, 0.0)
    }

    /// Builds a grid from row-major values.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CmdmError::invalid(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(CmdmError::shape(height * width, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CmdmError::Numeric(
                "grid data contains non-finite values".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a grid from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(CmdmError::invalid("ragged rows"));
        }
        Self::from_vec(height, width, rows.concat())
    }

    /// Builds a grid from a generator called once per `(row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::from_vec(height, width, data)
    }

    // Internal constructor for hot paths whose inputs are already checked.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn check_same_shape(&self, other: &Grid2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(CmdmError::shape(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }

    pub fn elementwise(&self, op: ElementwiseOp, rhs: Operand<'_>) -> Result<Grid2D> {
        let f: fn(f64, f64) -> f64 = match op {
            ElementwiseOp::Add => |a, b| a + b,
            ElementwiseOp::Sub => |a, b| a - b,
            ElementwiseOp::Mul | ElementwiseOp::Scale => |a, b| a * b,
        };
        let data: Vec<f64> = match rhs {
            Operand::Grid(b) => {
                self.check_same_shape(b)?;
                self.data
                    .iter()
                    .zip(&b.data)
                    .map(|(&x, &y)| f(x, y))
                    .collect()
            }
            Operand::Scalar(s) => self.data.iter().map(|&x| f(x, s)).collect(),
        };
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CmdmError::Numeric(format!(
                "{op:?} produced a non-finite value"
            )));
        }
        Ok(Grid2D::from_raw(self.height, self.width, data))
    }

    pub fn add(&self, other: &Grid2D) -> Result<Grid2D> {
        self.elementwise(ElementwiseOp::Add, Operand::Grid(other))
    }

    pub fn sub(&self, other: &Grid2D) -> Result<Grid2D> {
        self.elementwise(ElementwiseOp::Sub, Operand::Grid(other))
    }

    pub fn mul(&self, other: &Grid2D) -> Result<Grid2D> {
        self.elementwise(ElementwiseOp::Mul, Operand::Grid(other))
    }

    pub fn scale(&self, factor: f64) -> Result<Grid2D> {
        self.elementwise(ElementwiseOp::Scale, Operand::Scalar(factor))
    }

    /// `a·self + b·other`, the shape of every update in the diffusion math.
    pub fn lincomb(&self, a: f64, other: &Grid2D, b: f64) -> Result<Grid2D> {
        self.check_same_shape(other)?;
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CmdmError::Numeric(
                "linear combination produced a non-finite value".into(),
            ));
        }
        Ok(Grid2D::from_raw(self.height, self.width, data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Grid2D> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        Grid2D::from_vec(self.height, self.width, data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copies the `height x width` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Grid2D> {
        if row + height > self.height || col + width > self.width {
            return Err(CmdmError::invalid(format!(
                "crop {height}x{width}@({row},{col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Grid2D::from_fn(height, width, |r, c| self.get(row + r, col + c))
    }
}

/// Elementwise mean of equally shaped grids, accumulated in slice order.
pub fn mean_of(grids: &[Grid2D]) -> Result<Grid2D> {
    let first = grids
        .first()
        .ok_or_else(|| CmdmError::invalid("cannot average an empty list of grids"))?;
    let mut acc = vec![0.0; first.len()];
    for g in grids {
        first.check_same_shape(g)?;
        for (a, v) in acc.iter_mut().zip(&g.data) {
            *a += v;
        }
    }
    let n = grids.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Grid2D::from_vec(first.height, first.width, acc)
}
