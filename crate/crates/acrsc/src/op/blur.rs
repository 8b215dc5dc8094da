//! Circular Gaussian blur.
//!
//! Periodic boundary keeps the operator normal and exactly invertible when
//! the kernel has no spectral zeros, which gives an invertible test path for
//! the source-condition penalty.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone)]
pub struct BlurKernel {
    shape: Vec<usize>,
    taps: Vec<f64>, // normalized 1-D kernel, odd length
}

impl BlurKernel {
    pub fn new(shape: &[usize], sigma: f64, width: usize) -> Result<Self> {
        if shape.len() != 2 {
            return Err(Error::invalid(format!(
                "blur operates on 2-D images, got shape {shape:?}"
            )));
        }
        if width % 2 == 0 || width == 0 {
            return Err(Error::invalid(format!("blur width must be odd, got {width}")));
        }
        if !(sigma > 0.0) {
            return Err(Error::invalid(format!("blur sigma must be positive, got {sigma}")));
        }
        if width > shape[0] || width > shape[1] {
            return Err(Error::invalid(format!(
                "blur width {width} exceeds image extents {shape:?}"
            )));
        }
        let half = (width / 2) as isize;
        let mut taps: Vec<f64> = (-half..=half)
            .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= sum;
        }
        Ok(BlurKernel {
            shape: shape.to_vec(),
            taps,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Separable circular convolution: rows then columns.
    pub fn forward(&self, x: &ImageTensor) -> ImageTensor {
        let rows = self.conv_rows(x, false);
        self.conv_cols(&rows, false)
    }

    /// Exact transpose: flipped-kernel columns then flipped-kernel rows.
    pub fn adjoint(&self, y: &ImageTensor) -> ImageTensor {
        let cols = self.conv_cols(y, true);
        self.conv_rows(&cols, true)
    }

    fn conv_rows(&self, x: &ImageTensor, flip: bool) -> ImageTensor {
        let (h, w) = (self.shape[0], self.shape[1]);
        let half = (self.taps.len() / 2) as isize;
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            let row = &x.data()[r * w..(r + 1) * w];
            let orow = &mut out[r * w..(r + 1) * w];
            for (ti, &t) in self.taps.iter().enumerate() {
                let d = if flip {
                    half - ti as isize
                } else {
                    ti as isize - half
                };
                for (c, o) in orow.iter_mut().enumerate() {
                    let src = (c as isize - d).rem_euclid(w as isize) as usize;
                    *o += t * row[src];
                }
            }
        }
        ImageTensor::from_parts(self.shape.clone(), out)
    }

    fn conv_cols(&self, x: &ImageTensor, flip: bool) -> ImageTensor {
        let (h, w) = (self.shape[0], self.shape[1]);
        let half = (self.taps.len() / 2) as isize;
        let mut out = vec![0.0; h * w];
        for (ti, &t) in self.taps.iter().enumerate() {
            let d = if flip {
                half - ti as isize
            } else {
                ti as isize - half
            };
            for r in 0..h {
                let src_r = (r as isize - d).rem_euclid(h as isize) as usize;
                let src = &x.data()[src_r * w..(src_r + 1) * w];
                let dst = &mut out[r * w..(r + 1) * w];
                for (o, s) in dst.iter_mut().zip(src.iter()) {
                    *o += t * s;
                }
            }
        }
        ImageTensor::from_parts(self.shape.clone(), out)
    }
}
