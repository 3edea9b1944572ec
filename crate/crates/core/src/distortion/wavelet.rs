//! Lossy wavelet coding in the manner of JPEG 2000's irreversible path:
//! YCbCr color transform, CDF 9/7 lifting DWT, dead-zone scalar quantization
//! and mid-point reconstruction. Entropy coding is lossless and therefore
//! omitted; the decoded image carries the same ringing and blurring.

use crate::error::Result;
use crate::imgcore::{from_color_space, to_color_space, ColorSpace};
use crate::Image;

const ALPHA: f64 = -1.586_134_342_059_924;
const BETA: f64 = -0.052_980_118_572_961;
const GAMMA: f64 = 0.882_911_075_530_934;
const DELTA: f64 = 0.443_506_852_043_971;
const K: f64 = 1.230_174_104_914_001;

/// Maximum number of decomposition levels.
const MAX_LEVELS: usize = 5;
/// Smallest subband side that is still decomposed further.
const MIN_SIDE: usize = 8;

/// 2-D CDF 9/7 wavelet transform, scaled so that both bands have unit gain at
/// DC and Nyquist respectively, which keeps the transform close to orthonormal.
pub struct Dwt97;

impl Dwt97 {
    /// In-place multi-level forward transform of a `w`×`h` plane. Returns the
    /// number of levels applied.
    pub fn forward(plane: &mut [f64], w: usize, h: usize) -> usize {
        let (mut cw, mut ch) = (w, h);
        let mut levels = 0;
        let mut buf = Vec::new();
        while levels < MAX_LEVELS && cw >= MIN_SIDE && ch >= MIN_SIDE {
            for y in 0..ch {
                buf.clear();
                buf.extend_from_slice(&plane[y * w..y * w + cw]);
                forward_1d(&mut buf);
                plane[y * w..y * w + cw].copy_from_slice(&buf);
            }
            for x in 0..cw {
                buf.clear();
                buf.extend((0..ch).map(|y| plane[y * w + x]));
                forward_1d(&mut buf);
                for (y, &v) in buf.iter().enumerate() {
                    plane[y * w + x] = v;
                }
            }
            cw = cw.div_ceil(2);
            ch = ch.div_ceil(2);
            levels += 1;
        }
        levels
    }

    /// Inverse of [`Dwt97::forward`] for the same `levels`.
    pub fn inverse(plane: &mut [f64], w: usize, h: usize, levels: usize) {
        let mut dims = Vec::with_capacity(levels);
        let (mut cw, mut ch) = (w, h);
        for _ in 0..levels {
            dims.push((cw, ch));
            cw = cw.div_ceil(2);
            ch = ch.div_ceil(2);
        }
        let mut buf = Vec::new();
        for &(cw, ch) in dims.iter().rev() {
            for x in 0..cw {
                buf.clear();
                buf.extend((0..ch).map(|y| plane[y * w + x]));
                inverse_1d(&mut buf);
                for (y, &v) in buf.iter().enumerate() {
                    plane[y * w + x] = v;
                }
            }
            for y in 0..ch {
                buf.clear();
                buf.extend_from_slice(&plane[y * w..y * w + cw]);
                inverse_1d(&mut buf);
                plane[y * w..y * w + cw].copy_from_slice(&buf);
            }
        }
    }
}

/// Whole-sample symmetric extension: `x[-1] = x[1]`, `x[n] = x[n-2]`.
#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
    j.clamp(0, n - 1) as usize
}

fn lift(x: &mut [f64], parity: usize, coef: f64) {
    let n = x.len();
    let mut i = parity;
    while i < n {
        let l = x[mirror(i as isize - 1, n)];
        let r = x[mirror(i as isize + 1, n)];
        x[i] += coef * (l + r);
        i += 2;
    }
}

/// One level: lifting in place, then deinterleave to `[low | high]`.
fn forward_1d(x: &mut Vec<f64>) {
    let n = x.len();
    if n < 2 {
        return;
    }
    lift(x, 1, ALPHA);
    lift(x, 0, BETA);
    lift(x, 1, GAMMA);
    lift(x, 0, DELTA);
    let low_scale = std::f64::consts::SQRT_2 / K;
    let high_scale = K / std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(n);
    out.extend(x.iter().step_by(2).map(|v| v * low_scale));
    out.extend(x.iter().skip(1).step_by(2).map(|v| v * high_scale));
    *x = out;
}

fn inverse_1d(x: &mut Vec<f64>) {
    let n = x.len();
    if n < 2 {
        return;
    }
    let nl = n.div_ceil(2);
    let low_scale = std::f64::consts::SQRT_2 / K;
    let high_scale = K / std::f64::consts::SQRT_2;
    let mut y = vec![0.0; n];
    for (i, v) in x[..nl].iter().enumerate() {
        y[2 * i] = v / low_scale;
    }
    for (i, v) in x[nl..].iter().enumerate() {
        y[2 * i + 1] = v / high_scale;
    }
    lift(&mut y, 0, -DELTA);
    lift(&mut y, 1, -GAMMA);
    lift(&mut y, 0, -BETA);
    lift(&mut y, 1, -ALPHA);
    *x = y;
}

/// Dead-zone quantizer with mid-point reconstruction.
#[inline]
fn quantize(c: f64, step: f64) -> f64 {
    let q = (c.abs() / step).floor();
    if q == 0.0 {
        0.0
    } else {
        c.signum() * (q + 0.5) * step
    }
}

/// Encodes and decodes `img` with quantizer step `step` (in units of the
/// `[0, 1]` sample range). `step <= 0` reconstructs the input.
pub fn wavelet_compress(img: &Image, step: f64) -> Result<Image> {
    let mut ycc = to_color_space(img, ColorSpace::YCbCr)?;
    let (w, h) = ycc.dims();
    for c in 0..3 {
        let plane = ycc.plane_mut(c);
        // Center chroma so the dead zone is symmetric around neutral.
        let offset = if c == 0 { 0.0 } else { 0.5 };
        for v in plane.iter_mut() {
            *v -= offset;
        }
        let levels = Dwt97::forward(plane, w, h);
        if step > 0.0 {
            for v in plane.iter_mut() {
                *v = quantize(*v, step);
            }
        }
        Dwt97::inverse(plane, w, h, levels);
        for v in plane.iter_mut() {
            *v += offset;
        }
    }
    from_color_space(&ycc, ColorSpace::YCbCr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::{mse, synth::synthetic_reference};

    #[test]
    fn perfect_reconstruction_odd_and_even_sizes() {
        for (w, h) in [(64, 48), (37, 29), (9, 8)] {
            let orig: Vec<f64> = (0..w * h).map(|i| ((i * 7919) % 251) as f64 / 250.0).collect();
            let mut p = orig.clone();
            let levels = Dwt97::forward(&mut p, w, h);
            assert!(levels >= 1);
            Dwt97::inverse(&mut p, w, h, levels);
            let worst = p.iter().zip(&orig).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-10, "{w}x{h}: {worst}");
        }
    }

    #[test]
    fn bands_have_unit_gain_scaling() {
        // A constant signal lands entirely in the low band with gain sqrt(2).
        let mut x = vec![1.0; 16];
        forward_1d(&mut x);
        for v in &x[..8] {
            assert!((v - std::f64::consts::SQRT_2).abs() < 1e-9);
        }
        for v in &x[8..] {
            assert!(v.abs() < 1e-12);
        }
        let mut alt: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        forward_1d(&mut alt);
        // Interior high-band samples see the full Nyquist gain.
        assert!((alt[12].abs() - std::f64::consts::SQRT_2).abs() < 1e-6);
        assert!(alt[3].abs() < 1e-9);
    }

    #[test]
    fn larger_step_loses_more() {
        let img = synthetic_reference(64, 64, 3).unwrap();
        let e: Vec<f64> = [0.0, 0.03, 0.12, 0.48]
            .iter()
            .map(|&s| mse(&img, &wavelet_compress(&img, s).unwrap()).unwrap())
            .collect();
        assert!(e[0] < 1e-20);
        assert!(e[1] < e[2] && e[2] < e[3]);
    }
}
