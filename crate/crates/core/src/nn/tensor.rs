use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-example shape: channels × height × width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape3 {
            channels,
            height,
            width,
        }
    }

    /// A flat feature vector, stored as `features × 1 × 1`.
    pub const fn flat(features: usize) -> Self {
        Shape3::new(features, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Batch of examples in NCHW order, `f32` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    batch: usize,
    shape: Shape3,
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn new(batch: usize, shape: Shape3, data: Vec<f32>) -> Result<Self> {
        if data.len() != batch * shape.len() {
            return Err(Error::Shape(format!(
                "tensor {batch}x{shape} needs {} entries, got {}",
                batch * shape.len(),
                data.len()
            )));
        }
        Ok(Tensor4 { batch, shape, data })
    }

    pub fn zeros(batch: usize, shape: Shape3) -> Self {
        Tensor4 {
            batch,
            shape,
            data: vec![0.0; batch * shape.len()],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
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

    pub fn example(&self, i: usize) -> &[f32] {
        let n = self.shape.len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn example_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.shape.len();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Same data viewed under a different per-example shape of equal size.
    pub fn reshaped(self, shape: Shape3) -> Result<Self> {
        if shape.len() != self.shape.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} to {shape}",
                self.shape
            )));
        }
        Ok(Tensor4 {
            batch: self.batch,
            shape,
            data: self.data,
        })
    }

    /// Gathers the examples at `indices` into a new batch.
    pub fn select(&self, indices: &[usize]) -> Tensor4 {
        let mut data = Vec::with_capacity(indices.len() * self.shape.len());
        for &i in indices {
            data.extend_from_slice(self.example(i));
        }
        Tensor4 {
            batch: indices.len(),
            shape: self.shape,
            data,
        }
    }

    /// Concatenates batches of the same per-example shape.
    pub fn concat(parts: &[&Tensor4]) -> Result<Tensor4> {
        let shape = parts
            .first()
            .map(|t| t.shape)
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        if parts.iter().any(|t| t.shape != shape) {
            return Err(Error::Shape(
                "concat of tensors with differing shapes".into(),
            ));
        }
        let mut data = Vec::new();
        for t in parts {
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor4 {
            batch: parts.iter().map(|t| t.batch).sum(),
            shape,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        if self.batch != other.batch || self.shape != other.shape {
            return Err(Error::Shape("add of tensors with differing shapes".into()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f32) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }
}
