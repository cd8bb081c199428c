//! Dense rank-4 tensors in `(N, C, H, W)` layout.

use std::fmt;

use crate::error::{invalid, Result};

/// Extents of a rank-4 tensor: batch, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Shape of a single scalar.
    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn from_dims(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// A dense tensor of 64-bit reals, row-major in `N, C, H, W` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(invalid(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full(Shape::scalar(), value)
    }

    /// A `(C, 1, 1, 1)` tensor holding a vector of per-channel values.
    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: Shape::new(values.len(), 1, 1, 1),
            data: values.to_vec(),
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.shape.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Value of a `(1,1,1,1)` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape != Shape::scalar() {
            return Err(invalid(format!("expected a scalar, got shape {}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn sum(&self) -> f64 {
        crate::kernels::compensated_sum(self.data.iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copy of channels `start..end`.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        let s = self.shape;
        if start > end || end > s.c {
            return Err(invalid(format!(
                "channel slice {start}..{end} out of range for {} channels",
                s.c
            )));
        }
        let plane = s.plane();
        let out_shape = Shape::new(s.n, end - start, s.h, s.w);
        let mut data = Vec::with_capacity(out_shape.len());
        for n in 0..s.n {
            let base = (n * s.c + start) * plane;
            data.extend_from_slice(&self.data[base..base + (end - start) * plane]);
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// Index of the maximum channel per pixel, first occurrence on ties.
    pub fn argmax_channels(&self) -> Vec<usize> {
        let s = self.shape;
        let mut out = Vec::with_capacity(s.n * s.plane());
        for n in 0..s.n {
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut best = 0;
                    let mut best_v = self.at(n, 0, y, x);
                    for c in 1..s.c {
                        let v = self.at(n, c, y, x);
                        if v > best_v {
                            best = c;
                            best_v = v;
                        }
                    }
                    out.push(best);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(Tensor::new(Shape::new(1, 2, 2, 2), vec![0.0; 7]).is_err());
    }

    #[test]
    fn layout_is_nchw_row_major() {
        let t = Tensor::from_fn(Shape::new(2, 3, 4, 5), |n, c, y, x| {
            (n * 1000 + c * 100 + y * 10 + x) as f64
        });
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.data()[t.shape().index(1, 2, 3, 4)], 1234.0);
        assert_eq!(t.data()[1], 1.0);
        assert_eq!(t.data()[5], 10.0);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let t = Tensor::new(Shape::new(1, 3, 1, 2), vec![1.0, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
        assert_eq!(t.argmax_channels(), vec![0, 1]);
    }

    #[test]
    fn slice_bounds_checked() {
        let t = Tensor::zeros(Shape::new(1, 2, 1, 1));
        assert!(t.slice_channels(1, 3).is_err());
        assert_eq!(t.slice_channels(1, 2).unwrap().shape(), Shape::new(1, 1, 1, 1));
    }
}
