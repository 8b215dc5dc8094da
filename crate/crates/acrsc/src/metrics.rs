//! Image quality metrics: PSNR and SSIM.
//!
//! SSIM follows the standard Wang et al. configuration: 11x11 Gaussian
//! window with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.0, averaged
//! over valid window positions (no padding).

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in decibels.
///
/// Identical inputs return `f64::INFINITY` as the documented sentinel.
pub fn psnr(x: &ImageTensor, reference: &ImageTensor, peak: f64) -> Result<f64> {
    if !x.same_shape(reference) {
        return Err(Error::shape("psnr", reference.shape(), x.shape()));
    }
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("psnr peak must be positive, got {peak}")));
    }
    let n = x.len() as f64;
    let mse: f64 = x
        .data()
        .iter()
        .zip(reference.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *wi = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *wi;
    }
    for wi in &mut w {
        *wi /= sum;
    }
    w
}

/// Mean structural similarity over valid window positions of two 2-D images.
pub fn ssim(x: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    if !x.same_shape(reference) {
        return Err(Error::shape("ssim", reference.shape(), x.shape()));
    }
    if x.shape().len() != 2 {
        return Err(Error::invalid(format!(
            "ssim requires 2-D images, got shape {:?}",
            x.shape()
        )));
    }
    let (rows, cols) = (x.rows(), x.cols());
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "image {rows}x{cols} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }

    let w1d = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1; // peak fixed to 1.0
    let c2 = SSIM_K2 * SSIM_K2;

    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=(rows - SSIM_WINDOW) {
        for c0 in 0..=(cols - SSIM_WINDOW) {
            let mut mx = 0.0;
            let mut my = 0.0;
            let mut mxx = 0.0;
            let mut myy = 0.0;
            let mut mxy = 0.0;
            for (dr, &wr) in w1d.iter().enumerate() {
                for (dc, &wc) in w1d.iter().enumerate() {
                    let w = wr * wc;
                    let a = x.at2(r0 + dr, c0 + dc);
                    let b = reference.at2(r0 + dr, c0 + dc);
                    mx += w * a;
                    my += w * b;
                    mxx += w * a * a;
                    myy += w * b * b;
                    // grouped as w * (a*b) so the result is bitwise
                    // symmetric in the two images
                    mxy += w * (a * b);
                }
            }
            let vx = mxx - mx * mx;
            let vy = myy - my * my;
            let cov = mxy - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-image PSNR/SSIM values with batch mean and standard deviation.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub psnr_db: Vec<f64>,
    pub ssim: Vec<f64>,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl MetricsRecord {
    /// Evaluate a batch of (image, reference) pairs at the given peak.
    ///
    /// PSNR mean/std run over finite per-image values only, so identical
    /// pairs (infinite sentinel) do not poison the aggregate.
    pub fn from_pairs(xs: &[ImageTensor], refs: &[ImageTensor], peak: f64) -> Result<MetricsRecord> {
        if xs.len() != refs.len() {
            return Err(Error::invalid(format!(
                "batch length mismatch: {} images vs {} references",
                xs.len(),
                refs.len()
            )));
        }
        let mut psnrs = Vec::with_capacity(xs.len());
        let mut ssims = Vec::with_capacity(xs.len());
        for (x, r) in xs.iter().zip(refs.iter()) {
            psnrs.push(psnr(x, r, peak)?);
            ssims.push(ssim(x, r)?);
        }
        let (pm, ps) = mean_std(psnrs.iter().copied().filter(|v| v.is_finite()));
        let (sm, ss) = mean_std(ssims.iter().copied());
        Ok(MetricsRecord {
            psnr_db: psnrs,
            ssim: ssims,
            psnr_mean: pm,
            psnr_std: ps,
            ssim_mean: sm,
            ssim_std: ss,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_noise, RngStream};

    #[test]
    fn psnr_identity_is_infinite() {
        let x = ImageTensor::constant(&[8, 8], 0.3);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_uniform_offset_is_20db() {
        let x = ImageTensor::constant(&[16, 16], 0.5);
        let y = ImageTensor::constant(&[16, 16], 0.6);
        let p = psnr(&x, &y, 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-12, "psnr {p}");
    }

    #[test]
    fn psnr_symmetric_and_shape_checked() {
        let mut rng = RngStream::new(3);
        let x = gaussian_noise(&[12, 12], 1.0, &mut rng).unwrap();
        let y = gaussian_noise(&[12, 12], 1.0, &mut rng).unwrap();
        let a = psnr(&x, &y, 1.0).unwrap();
        let b = psnr(&y, &x, 1.0).unwrap();
        assert_eq!(a, b);
        let z = ImageTensor::zeros(&[12, 13]);
        assert!(psnr(&x, &z, 1.0).is_err());
    }

    #[test]
    fn ssim_identity_is_one() {
        let mut rng = RngStream::new(11);
        let x = gaussian_noise(&[14, 14], 0.5, &mut rng).unwrap();
        let s = ssim(&x, &x).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn ssim_constant_images_analytic() {
        // Variances vanish, so the contrast factor is exactly 1 and
        // ssim = (2*c1*c2 + C1) / (c1^2 + c2^2 + C1).
        let x = ImageTensor::constant(&[16, 16], 0.2);
        let y = ImageTensor::constant(&[16, 16], 0.4);
        let c1 = SSIM_K1 * SSIM_K1;
        let expected = (2.0 * 0.2 * 0.4 + c1) / (0.2f64.powi(2) + 0.4f64.powi(2) + c1);
        let s = ssim(&x, &y).unwrap();
        assert!((s - expected).abs() < 1e-12, "ssim {s} vs analytic {expected}");
        // The analytic value sits near 0.8 as the constant-image formula gives.
        assert!((s - 0.8).abs() < 0.001);
    }

    #[test]
    fn ssim_symmetric() {
        let mut rng = RngStream::new(19);
        let x = gaussian_noise(&[13, 17], 0.3, &mut rng).unwrap();
        let y = gaussian_noise(&[13, 17], 0.3, &mut rng).unwrap();
        assert_eq!(ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
    }

    #[test]
    fn ssim_rejects_small_images() {
        let x = ImageTensor::zeros(&[8, 8]);
        assert!(ssim(&x, &x).is_err());
    }

    #[test]
    fn batch_record_filters_infinite_psnr() {
        let a = ImageTensor::constant(&[12, 12], 0.5);
        let b = ImageTensor::constant(&[12, 12], 0.6);
        let rec = MetricsRecord::from_pairs(
            &[a.clone(), a.clone()],
            &[a.clone(), b.clone()],
            1.0,
        )
        .unwrap();
        assert_eq!(rec.psnr_db[0], f64::INFINITY);
        assert!((rec.psnr_mean - 20.0).abs() < 1e-12);
        assert_eq!(rec.ssim[0], 1.0);
    }
}
