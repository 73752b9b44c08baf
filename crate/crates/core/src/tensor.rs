//! Rank-4 activation container.
//!
//! A [`Tensor4`] has logical dimensions `height x width x channels x batch`.
//! Storage is sample-major: every sample occupies one contiguous block laid
//! out row-major over `(height, width, channel)`, so the channel index varies
//! fastest. This is also the flattening order used by fully connected layers.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::nn::NnError;

/// Dimensions of a [`Tensor4`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub n: usize,
}

impl Shape4 {
    pub const fn new(h: usize, w: usize, c: usize, n: usize) -> Self {
        Self { h, w, c, n }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample.
    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn with_batch(self, n: usize) -> Self {
        Self { n, ..self }
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.h, self.w, self.c, self.n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: Shape4) -> Result<Self, NnError> {
        if shape.is_empty() {
            return Err(NnError::EmptyTensor);
        }
        Ok(Self {
            shape,
            data: vec![0.0; shape.len()],
        })
    }

    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self, NnError> {
        if shape.is_empty() {
            return Err(NnError::EmptyTensor);
        }
        if data.len() != shape.len() {
            return Err(NnError::LengthMismatch {
                expected: shape.len(),
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Column vector `len x 1 x 1 x 1`.
    pub fn column(values: &[f64]) -> Result<Self, NnError> {
        Self::from_vec(Shape4::new(values.len(), 1, 1, 1), values.to_vec())
    }

    pub fn shape(&self) -> Shape4 {
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

    #[inline]
    pub fn offset(&self, h: usize, w: usize, c: usize, n: usize) -> usize {
        let s = self.shape;
        ((n * s.h + h) * s.w + w) * s.c + c
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, c: usize, n: usize) -> f64 {
        self.data[self.offset(h, w, c, n)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, c: usize, n: usize, value: f64) {
        let i = self.offset(h, w, c, n);
        self.data[i] = value;
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Gathers the listed samples into a new batch, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, NnError> {
        let len = self.shape.sample_len();
        let mut data = Vec::with_capacity(len * indices.len());
        for &i in indices {
            if i >= self.shape.n {
                return Err(NnError::IndexOutOfRange {
                    index: i,
                    len: self.shape.n,
                });
            }
            data.extend_from_slice(self.sample(i));
        }
        Self::from_vec(self.shape.with_batch(indices.len()), data)
    }

    /// Per-element mean over the batch dimension, shaped `h x w x c x 1`.
    pub fn batch_mean(&self) -> Tensor4 {
        let len = self.shape.sample_len();
        let mut acc = vec![0.0; len];
        for n in 0..self.shape.n {
            for (a, x) in acc.iter_mut().zip(self.sample(n)) {
                *a += x;
            }
        }
        let inv = 1.0 / self.shape.n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Tensor4 {
            shape: self.shape.with_batch(1),
            data: acc,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn reshape(self, shape: Shape4) -> Result<Self, NnError> {
        Self::from_vec(shape, self.data)
    }
}
