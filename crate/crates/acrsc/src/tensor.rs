//! Dense real-valued tensors for images and measurements.
//!
//! `ImageTensor` is the common currency of every module: an image in the
//! reconstruction space, a measurement (sinogram, blurred image), or a flat
//! vector. Shape metadata travels with the flat `f64` buffer.

use crate::error::{Error, Result};

/// A dense tensor of doubles with explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ImageTensor {
    /// All-zero tensor with the given extents.
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        ImageTensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Constant-valued tensor.
    pub fn constant(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        ImageTensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Wrap a flat buffer, validating length and finiteness.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::invalid(format!(
                "data length {} does not match shape {:?} (product {})",
                data.len(),
                shape,
                n
            )));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::invalid(format!("zero extent in shape {:?}", shape)));
        }
        let t = ImageTensor {
            shape: shape.to_vec(),
            data,
        };
        t.check_finite("from_vec")?;
        Ok(t)
    }

    /// Internal constructor for values produced by trusted arithmetic.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        ImageTensor { shape, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Extent helpers for 2-D images stored row-major as `[rows, cols]`.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context))
        }
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.shape == other.shape
    }

    pub fn dot(&self, other: &ImageTensor) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn scale(&self, s: f64) -> ImageTensor {
        ImageTensor::from_parts(self.shape.clone(), self.data.iter().map(|v| v * s).collect())
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add(&self, other: &ImageTensor) -> ImageTensor {
        debug_assert!(self.same_shape(other));
        ImageTensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &ImageTensor) -> ImageTensor {
        debug_assert!(self.same_shape(other));
        ImageTensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &ImageTensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }

    /// Convex combination `alpha * self + (1 - alpha) * other`.
    pub fn lerp(&self, other: &ImageTensor, alpha: f64) -> ImageTensor {
        debug_assert!(self.same_shape(other));
        ImageTensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect(),
        )
    }

    pub fn clamp01(&self) -> ImageTensor {
        ImageTensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<ImageTensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", shape, &self.shape));
        }
        Ok(ImageTensor::from_parts(shape.to_vec(), self.data.clone()))
    }
}
