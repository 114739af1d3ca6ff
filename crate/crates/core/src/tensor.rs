//! Dense NCHW `f32` tensors.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// `(N, C, H, W)` extents.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn with_channels(self, c: usize) -> Self {
        Self { c, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Row-major NCHW buffer. The value type carried through the autograd graph;
/// gradient bookkeeping lives in [`crate::autograd::Graph`] and
/// [`crate::params::ParamStore`].
#[derive(Clone, PartialEq, Debug)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::InvalidArgument(format!(
                "buffer of {} values does not fit shape {shape}",
                data.len()
            )));
        }
        if shape.numel() == 0 {
            return Err(Error::InvalidArgument(format!("empty shape {shape}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(Shape::scalar(), value)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f32, hi: f32, rng: &mut R) -> Self {
        let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// One `H x W` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    /// All channels of batch item `n`.
    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    /// The single value of a `1x1x1x1` tensor.
    pub fn item_value(&self) -> Result<f32> {
        if self.shape != Shape::scalar() {
            return Err(Error::InvalidArgument(format!(
                "expected a scalar, got {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, alpha: f32) -> Self {
        self.map(|v| v * alpha)
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_shape("add_assign", other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.expect_shape("max_abs_diff", other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    pub(crate) fn expect_shape(&self, op: &'static str, other: Shape) -> Result<()> {
        if self.shape != other {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other,
            });
        }
        Ok(())
    }

    /// Rejects NaN and infinities produced by `op`.
    pub(crate) fn check_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Batch items `[start, start + len)` as a new tensor.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.shape.n {
            return Err(Error::InvalidArgument(format!(
                "batch range {start}..{} out of bounds for {}",
                start + len,
                self.shape
            )));
        }
        let item = self.shape.c * self.shape.plane();
        Ok(Self {
            shape: Shape { n: len, ..self.shape },
            data: self.data[start * item..(start + len) * item].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack_batch(items: &[Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack an empty list".into()))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            if (Shape { n: first.shape.n, ..t.shape }) != first.shape {
                return Err(Error::ShapeMismatch {
                    op: "stack_batch",
                    left: first.shape,
                    right: t.shape,
                });
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: Shape { n, ..first.shape },
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_buffer_length() {
        assert!(Tensor::new(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor::new(Shape::new(1, 1, 2, 2), vec![0.0; 4]).is_ok());
    }

    #[test]
    fn offsets_are_row_major_nchw() {
        let t = Tensor::new(Shape::new(2, 3, 4, 5), (0..120).map(|v| v as f32).collect()).unwrap();
        assert_eq!(t.at(1, 2, 3, 4), 119.0);
        assert_eq!(t.at(0, 1, 0, 0), 20.0);
        assert_eq!(t.plane(1, 0)[0], 60.0);
    }

    #[test]
    fn finite_check_flags_nan() {
        let t = Tensor::new(Shape::new(1, 1, 1, 2), vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(t.check_finite("x"), Err(Error::NonFinite { op: "x" })));
    }

    #[test]
    fn stack_and_narrow_are_inverse() {
        let a = Tensor::full(Shape::new(1, 2, 2, 2), 1.0);
        let b = Tensor::full(Shape::new(1, 2, 2, 2), 2.0);
        let s = Tensor::stack_batch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 2, 2));
        assert_eq!(s.narrow_batch(1, 1).unwrap(), b);
        assert_eq!(s.narrow_batch(0, 1).unwrap(), a);
    }
}
