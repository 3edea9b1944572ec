//! Procedural stand-ins for pristine photographs.
//!
//! Each image mixes a smooth color field, multi-octave value noise, oriented
//! gratings and hard-edged shapes, so blur, noise and compression all have
//! structure to degrade.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{resample, ImageBuffer, Interpolation};
use crate::error::Result;

/// Deterministic synthetic RGB reference of the given size.
pub fn synthetic_reference(width: usize, height: usize, seed: u64) -> Result<ImageBuffer<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = width * height;

    // Smooth color field from a 3x3 grid of random colors.
    let coarse = ImageBuffer::from_fn(3, 3, 3, |_, _, _| rng.random_range(0.15..0.85))?;
    let mut acc = resample(&coarse, width, height, Interpolation::Bicubic)?.into_samples();

    // Value noise octaves, shared across channels with a small per-channel tint.
    for (cell, amp) in [(48usize, 0.18), (12, 0.10), (3, 0.05)] {
        let gw = (width / cell).max(2);
        let gh = (height / cell).max(2);
        let grid = ImageBuffer::from_fn(gw, gh, 1, |_, _, _| rng.random::<f64>())?;
        let noise = resample(&grid, width, height, Interpolation::Bicubic)?;
        let tint: [f64; 3] = [rng.random_range(0.7..1.3), rng.random_range(0.7..1.3), rng.random_range(0.7..1.3)];
        for c in 0..3 {
            for (i, v) in noise.samples().iter().enumerate() {
                acc[c * n + i] += amp * tint[c] * (v - 0.5);
            }
        }
    }

    // Oriented gratings.
    for _ in 0..3 {
        let freq = rng.random_range(0.02..0.25);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let (fx, fy) = (freq * theta.cos(), freq * theta.sin());
        let amp = rng.random_range(0.02..0.07);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let tint: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        for y in 0..height {
            for x in 0..width {
                let v = amp * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + phase).sin();
                for c in 0..3 {
                    acc[c * n + y * width + x] += v * (0.5 + tint[c]);
                }
            }
        }
    }

    // Hard-edged shapes.
    let shapes = rng.random_range(8..16);
    for _ in 0..shapes {
        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let alpha = rng.random_range(0.4..0.9);
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let size = rng.random_range(0.03..0.2) * width.min(height) as f64;
        let round = rng.random_bool(0.5);
        let x0 = (cx - size).max(0.0) as usize;
        let x1 = ((cx + size).ceil() as usize).min(width);
        let y0 = (cy - size).max(0.0) as usize;
        let y1 = ((cy + size).ceil() as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if round {
                    dx * dx + dy * dy <= size * size
                } else {
                    dx.abs() <= size && dy.abs() <= size * 0.6
                };
                if inside {
                    for c in 0..3 {
                        let i = c * n + y * width + x;
                        acc[i] = (1.0 - alpha) * acc[i] + alpha * color[c];
                    }
                }
            }
        }
    }

    for v in &mut acc {
        *v = v.clamp(0.0, 1.0);
    }
    ImageBuffer::new(width, height, 3, acc)
}
