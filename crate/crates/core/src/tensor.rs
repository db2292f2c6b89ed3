//! Shape-tagged `f32` grids.
//!
//! [`Tensor`] is the general carrier; [`FrameBlock`] is a tensor pinned to the
//! `(n, c, h, w)` layout used for every frame window in the process (the past
//! block `x`, the future block `y` and the bridge state `x_t`).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CvpError, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(CvpError::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(CvpError::InvalidArgument(format!(
                "shape {shape:?} holds {len} values but {} were supplied",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "tensor extents must be positive"
        );
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(&[1], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(CvpError::shape(&self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.ensure_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }
}

/// A window of `n` consecutive frames laid out as `(n, c, h, w)`.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(try_from = "Tensor", into = "Tensor")]
pub struct FrameBlock(Tensor);

impl TryFrom<Tensor> for FrameBlock {
    type Error = CvpError;

    fn try_from(t: Tensor) -> Result<Self> {
        FrameBlock::from_tensor(t)
    }
}

impl From<FrameBlock> for Tensor {
    fn from(b: FrameBlock) -> Tensor {
        b.0
    }
}

impl FrameBlock {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.shape().len() != 4 {
            return Err(CvpError::InvalidArgument(format!(
                "frame block must be 4-D (n, c, h, w), got shape {:?}",
                t.shape()
            )));
        }
        Ok(Self(t))
    }

    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_tensor(Tensor::new(vec![n, c, h, w], data)?)
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self(Tensor::zeros(&[n, c, h, w]))
    }

    pub fn full(n: usize, c: usize, h: usize, w: usize, value: f32) -> Self {
        Self(Tensor::full(&[n, c, h, w], value))
    }

    pub fn n(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn c(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn h(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn w(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn frame_len(&self) -> usize {
        self.c() * self.h() * self.w()
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        self.0.data_mut()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Values of frame `i`, laid out `(c, h, w)`.
    pub fn frame(&self, i: usize) -> &[f32] {
        let fl = self.frame_len();
        &self.data()[i * fl..(i + 1) * fl]
    }

    /// Copies frames `start..start + count` into a new block.
    pub fn frames(&self, start: usize, count: usize) -> Result<FrameBlock> {
        if count == 0 || start + count > self.n() {
            return Err(CvpError::InvalidArgument(format!(
                "frame range {start}..{} outside block of {} frames",
                start + count,
                self.n()
            )));
        }
        let fl = self.frame_len();
        FrameBlock::new(
            count,
            self.c(),
            self.h(),
            self.w(),
            self.data()[start * fl..(start + count) * fl].to_vec(),
        )
    }

    /// Stacks blocks with identical `(c, h, w)` along the frame axis.
    pub fn concat(blocks: &[&FrameBlock]) -> Result<FrameBlock> {
        let first = blocks
            .first()
            .ok_or_else(|| CvpError::InvalidArgument("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut n = 0;
        for b in blocks {
            if b.shape()[1..] != first.shape()[1..] {
                return Err(CvpError::shape(&first.shape()[1..], &b.shape()[1..]));
            }
            n += b.n();
            data.extend_from_slice(b.data());
        }
        FrameBlock::new(n, first.c(), first.h(), first.w(), data)
    }

    pub fn ensure_same_shape(&self, other: &FrameBlock) -> Result<()> {
        self.0.ensure_same_shape(&other.0)
    }

    pub fn zip_map(&self, other: &FrameBlock, f: impl Fn(f32, f32) -> f32) -> Result<FrameBlock> {
        Ok(FrameBlock(self.0.zip_map(&other.0, f)?))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> FrameBlock {
        FrameBlock(self.0.map(f))
    }

    pub fn max_abs_diff(&self, other: &FrameBlock) -> Result<f32> {
        self.0.max_abs_diff(&other.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    pub fn clamped_unit(&self) -> FrameBlock {
        self.map(|v| v.clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn frame_block_requires_four_axes() {
        let t = Tensor::zeros(&[2, 3, 4]);
        assert!(FrameBlock::from_tensor(t).is_err());
    }

    #[test]
    fn frames_and_concat_are_inverse() {
        let data: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let b = FrameBlock::new(3, 1, 2, 4, data).unwrap();
        let head = b.frames(0, 1).unwrap();
        let tail = b.frames(1, 2).unwrap();
        assert_eq!(tail.frame(0), &[8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0]);
        assert_eq!(FrameBlock::concat(&[&head, &tail]).unwrap(), b);
        assert!(b.frames(2, 2).is_err());
    }

    #[test]
    fn zip_map_checks_shape() {
        let a = FrameBlock::zeros(1, 1, 2, 2);
        let b = FrameBlock::zeros(1, 1, 2, 3);
        assert!(matches!(a.zip_map(&b, |x, _| x), Err(CvpError::Shape { .. })));
    }
}
