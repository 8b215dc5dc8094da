//! Seeded synthetic digit images.
//!
//! Renders 5x7 bitmap glyphs of the digits 0-9 with a random affine jitter
//! (rotation, anisotropic scale, subpixel shift), bilinear sampling, a light
//! blur, and per-digit intensity jitter. The result mimics handwritten-digit
//! morphology (bright strokes a couple of pixels wide, centered on a black
//! background) so metric statistics on noisy copies land near those of real
//! scanned digits. Fully deterministic for a fixed seed.

use crate::rng::RngStream;
use crate::tensor::ImageTensor;

const GLYPHS: [[u8; 7]; 10] = [
    // each row is a 5-bit mask, msb = leftmost column
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110], // 0
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110], // 1
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111], // 2
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110], // 3
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010], // 4
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110], // 5
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110], // 6
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000], // 7
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110], // 8
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100], // 9
];

fn glyph_sample(digit: usize, gx: f64, gy: f64) -> f64 {
    // bilinear sample of the 5x7 bitmap, zero outside
    let tap = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= 5 || y >= 7 {
            0.0
        } else {
            ((GLYPHS[digit][y as usize] >> (4 - x as usize)) & 1) as f64
        }
    };
    let x0 = gx.floor();
    let y0 = gy.floor();
    let fx = gx - x0;
    let fy = gy - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    tap(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + tap(x0 + 1, y0) * fx * (1.0 - fy)
        + tap(x0, y0 + 1) * (1.0 - fx) * fy
        + tap(x0 + 1, y0 + 1) * fx * fy
}

fn blur3(img: &ImageTensor, sigma: f64) -> ImageTensor {
    let taps = [
        (-1.0f64 / (2.0 * sigma * sigma)).exp(),
        1.0,
        (-1.0f64 / (2.0 * sigma * sigma)).exp(),
    ];
    let norm: f64 = taps.iter().sum();
    let (h, w) = (img.rows(), img.cols());
    let mut tmp = ImageTensor::zeros(&[h, w]);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                let cc = c as isize + i as isize - 1;
                if cc >= 0 && (cc as usize) < w {
                    acc += t * img.at2(r, cc as usize);
                }
            }
            tmp.set2(r, c, acc / norm);
        }
    }
    let mut out = ImageTensor::zeros(&[h, w]);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                let rr = r as isize + i as isize - 1;
                if rr >= 0 && (rr as usize) < h {
                    acc += t * tmp.at2(rr as usize, c);
                }
            }
            out.set2(r, c, acc / norm);
        }
    }
    out
}

/// Render one jittered digit glyph on a `side x side` black canvas.
pub fn render_digit(digit: usize, side: usize, rng: &mut RngStream) -> ImageTensor {
    assert!(digit < 10);
    let sf = side as f64;
    // target glyph height ~70% of the canvas, mild anisotropy and rotation
    let scale_y = 7.0 / (0.70 * sf * (0.9 + 0.2 * rng.uniform()));
    let scale_x = 5.0 / (0.52 * sf * (0.9 + 0.2 * rng.uniform()));
    let angle = 0.25 * (rng.uniform() - 0.5) * 2.0;
    let (sin_a, cos_a) = angle.sin_cos();
    let shift_x = 1.5 * (rng.uniform() - 0.5) * 2.0;
    let shift_y = 1.5 * (rng.uniform() - 0.5) * 2.0;
    let intensity = 0.85 + 0.15 * rng.uniform();

    let mut img = ImageTensor::zeros(&[side, side]);
    let center = (sf - 1.0) / 2.0;
    for r in 0..side {
        for c in 0..side {
            // inverse map: canvas -> glyph coordinates
            let x = c as f64 - center - shift_x;
            let y = r as f64 - center - shift_y;
            let xr = cos_a * x + sin_a * y;
            let yr = -sin_a * x + cos_a * y;
            let gx = xr * scale_x + 2.0; // glyph center at (2, 3)
            let gy = yr * scale_y + 3.0;
            let v = glyph_sample(digit, gx, gy);
            if v > 0.0 {
                img.set2(r, c, (v * intensity).min(1.0));
            }
        }
    }
    blur3(&img, 0.55)
}

/// A seeded batch of digit images (digits cycle 0-9 with jitter).
pub fn digit_batch(count: usize, side: usize, rng: &mut RngStream) -> Vec<ImageTensor> {
    (0..count)
        .map(|_| render_digit(rng.below(10), side, rng))
        .collect()
}
