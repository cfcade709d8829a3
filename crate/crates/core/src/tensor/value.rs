use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{contract, Result};

/// Dense row-major array of `f64` values.
///
/// A `Tensor` is an immutable value once handed to a [`Tape`](crate::Tape);
/// gradients live in [`Gradients`](crate::Gradients), keyed by tape node.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        contract!(
            shape.iter().all(|&d| d > 0),
            "tensor extents must be positive, got {shape:?}"
        );
        let n: usize = shape.iter().product();
        contract!(
            n == data.len(),
            "shape {shape:?} needs {n} elements, got {}",
            data.len()
        );
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for kernels that already guarantee consistency.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    /// Samples i.i.d. uniform values in `[lo, hi)`.
    pub fn uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Extent of a 4-d tensor as `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        contract!(self.shape.len() == 4, "expected 4-d NCHW tensor, got shape {:?}", self.shape);
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        contract!(self.shape.len() == 2, "expected 2-d tensor, got shape {:?}", self.shape);
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rows `[start, end)` of the leading axis.
    pub fn slice_outer(&self, start: usize, end: usize) -> Result<Self> {
        contract!(
            start < end && end <= self.shape[0],
            "slice [{start}, {end}) out of range for leading extent {}",
            self.shape[0]
        );
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor { shape, data: self.data[start * inner..end * inner].to_vec() })
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOW: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= SHOW {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " {:?}..", &self.data[..SHOW])
        }
    }
}

/// Geometry of a 2-d convolution (or transposed convolution).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1, "same" zero padding for odd kernels.
    pub fn same(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: kernel / 2,
            in_channels,
            out_channels,
        }
    }

    /// 2×2 kernel with stride 2: the doubling transposed convolution.
    pub fn up2(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec { kernel_h: 2, kernel_w: 2, stride: 2, padding: 0, in_channels, out_channels }
    }

    pub fn validate(&self) -> Result<()> {
        contract!(
            self.kernel_h >= 1
                && self.kernel_w >= 1
                && self.stride >= 1
                && self.in_channels >= 1
                && self.out_channels >= 1,
            "conv extents must be >= 1: {self:?}"
        );
        Ok(())
    }

    /// Output extent of a forward convolution along one axis.
    pub fn conv_out(&self, input: usize, kernel: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        contract!(
            padded >= kernel,
            "empty conv output: input {input} + 2*pad {} < kernel {kernel}",
            self.padding
        );
        Ok((padded - kernel) / self.stride + 1)
    }

    /// Output extent of a transposed convolution along one axis.
    pub fn conv_transpose_out(&self, input: usize, kernel: usize) -> Result<usize> {
        let full = (input - 1) * self.stride + kernel;
        contract!(
            full > 2 * self.padding,
            "empty transposed-conv output: {full} <= 2*pad {}",
            self.padding
        );
        Ok(full - 2 * self.padding)
    }
}
