//! Seeded random ellipse phantoms for the toy CT experiment.
//!
//! Each phantom is 2-5 ellipses with random centers, semi-axes, rotation,
//! and additive intensity inside the inscribed circle of the image, rendered
//! with 2x2 supersampling and clamped to [0, 1].

use crate::rng::RngStream;
use crate::tensor::ImageTensor;

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    cos_t: f64,
    sin_t: f64,
    intensity: f64,
}

impl Ellipse {
    fn seeded(side: f64, rng: &mut RngStream) -> Ellipse {
        let half = side / 2.0;
        let r = 0.50 * half * rng.uniform().sqrt();
        let phi = 2.0 * std::f64::consts::PI * rng.uniform();
        let theta = std::f64::consts::PI * rng.uniform();
        let (sin_t, cos_t) = theta.sin_cos();
        Ellipse {
            cx: r * phi.cos(),
            cy: r * phi.sin(),
            ax: half * (0.12 + 0.30 * rng.uniform()),
            ay: half * (0.12 + 0.30 * rng.uniform()),
            cos_t,
            sin_t,
            intensity: 0.25 + 0.65 * rng.uniform(),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = self.cos_t * dx + self.sin_t * dy;
        let v = -self.sin_t * dx + self.cos_t * dy;
        (u / self.ax).powi(2) + (v / self.ay).powi(2) <= 1.0
    }
}

/// One seeded phantom of the given side length.
pub fn render_phantom(side: usize, rng: &mut RngStream) -> ImageTensor {
    let sf = side as f64;
    let count = 2 + rng.below(4);
    let ellipses: Vec<Ellipse> = (0..count).map(|_| Ellipse::seeded(sf, rng)).collect();
    let center = (sf - 1.0) / 2.0;
    let mut img = ImageTensor::zeros(&[side, side]);
    let sub = 2;
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            for sr in 0..sub {
                for sc in 0..sub {
                    let y = r as f64 + (sr as f64 + 0.5) / sub as f64 - 0.5 - center;
                    let x = c as f64 + (sc as f64 + 0.5) / sub as f64 - 0.5 - center;
                    for e in &ellipses {
                        if e.contains(x, y) {
                            acc += e.intensity;
                        }
                    }
                }
            }
            img.set2(r, c, (acc / (sub * sub) as f64).clamp(0.0, 1.0));
        }
    }
    img
}

/// A seeded batch of phantoms.
pub fn phantom_batch(count: usize, side: usize, rng: &mut RngStream) -> Vec<ImageTensor> {
    (0..count).map(|_| render_phantom(side, rng)).collect()
}
