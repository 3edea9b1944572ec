use serde::{Deserialize, Serialize};

use super::ImageBuffer;
use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, Scalar};

/// How samples outside the image are synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Border {
    /// Repeat the edge sample.
    #[default]
    Replicate,
    /// Mirror including the edge sample (`cba|abc|cba`).
    Reflect,
}

impl Border {
    #[inline]
    pub fn index(self, i: isize, n: usize) -> usize {
        let n = n as isize;
        match self {
            Border::Replicate => i.clamp(0, n - 1) as usize,
            Border::Reflect => {
                let period = 2 * n;
                let m = i.rem_euclid(period);
                (if m < n { m } else { period - 1 - m }) as usize
            }
        }
    }
}

/// Dense 2-D kernel with odd dimensions, weights stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D<T> {
    width: usize,
    height: usize,
    weights: Vec<T>,
}

impl<T: Scalar> Kernel2D<T> {
    pub fn from_weights(width: usize, height: usize, weights: Vec<T>) -> Result<Self> {
        if width % 2 == 0 || height % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel dimensions must be odd, got {width}x{height}"
            )));
        }
        if weights.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for a {width}x{height} kernel",
                weights.len()
            )));
        }
        Ok(Self {
            width,
            height,
            weights,
        })
    }

    /// 1×1 identity kernel.
    pub fn delta() -> Self {
        Self::from_weights(1, 1, vec![T::one()]).unwrap()
    }

    /// Normalized `size`×`size` box filter.
    pub fn boxed(size: usize) -> Result<Self> {
        let n = size * size;
        Self::from_weights(size, size, vec![T::one() / from_usize(n); n])
    }

    /// Isotropic Gaussian truncated at radius `ceil(3σ)`, normalized to unit sum.
    pub fn gaussian(sigma: T) -> Result<Self> {
        let g = gaussian_1d(sigma)?;
        let n = g.len();
        let weights = g
            .iter()
            .flat_map(|&wy| g.iter().map(move |&wx| wx * wy))
            .collect();
        Ok(Self::from_weights(n, n, weights)?.normalized())
    }

    /// Circular (defocus) kernel of the given radius, edge pixels weighted by
    /// their sub-pixel coverage of the disk.
    pub fn disk(radius: T) -> Result<Self> {
        let r = radius.to_f64().unwrap_or(f64::NAN);
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid(format!("disk radius must be > 0, got {r}")));
        }
        let half = r.ceil() as isize;
        let size = (2 * half + 1) as usize;
        const SUB: usize = 8;
        let mut weights = Vec::with_capacity(size * size);
        for j in -half..=half {
            for i in -half..=half {
                let mut inside = 0usize;
                for sy in 0..SUB {
                    for sx in 0..SUB {
                        let x = i as f64 - 0.5 + (sx as f64 + 0.5) / SUB as f64;
                        let y = j as f64 - 0.5 + (sy as f64 + 0.5) / SUB as f64;
                        if x * x + y * y <= r * r {
                            inside += 1;
                        }
                    }
                }
                weights.push(lit(inside as f64 / (SUB * SUB) as f64));
            }
        }
        Ok(Self::from_weights(size, size, weights)?.normalized())
    }

    /// Linear motion kernel: a segment of `length` pixels through the center
    /// at `angle_deg` (counter-clockwise from the x axis), splatted bilinearly.
    pub fn line(length: T, angle_deg: T) -> Result<Self> {
        let len = length.to_f64().unwrap_or(f64::NAN);
        if !(len.is_finite() && len >= 1.0) {
            return Err(Error::invalid(format!("line length must be >= 1, got {len}")));
        }
        let theta = angle_deg.to_f64().unwrap().to_radians();
        let (dx, dy) = (theta.cos(), -theta.sin());
        let half = (len / 2.0).ceil() as isize;
        let size = (2 * half + 1) as usize;
        let mut acc = vec![0.0f64; size * size];
        let steps = (len * 16.0).ceil() as usize;
        for s in 0..=steps {
            let t = -len / 2.0 + len * s as f64 / steps as f64;
            let (x, y) = (half as f64 + t * dx, half as f64 + t * dy);
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            for (oy, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (ox, wx) in [(0, 1.0 - fx), (1, fx)] {
                    let (xi, yi) = (x0 as isize + ox, y0 as isize + oy);
                    if xi >= 0 && yi >= 0 && (xi as usize) < size && (yi as usize) < size {
                        acc[yi as usize * size + xi as usize] += wx * wy;
                    }
                }
            }
        }
        let weights = acc.into_iter().map(lit).collect();
        Ok(Self::from_weights(size, size, weights)?.normalized())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn sum(&self) -> T {
        self.weights.iter().copied().sum()
    }

    fn normalized(mut self) -> Self {
        let s = self.sum();
        for w in &mut self.weights {
            *w = *w / s;
        }
        self
    }
}

/// Normalized 1-D Gaussian taps over `[-ceil(3σ), ceil(3σ)]`.
pub fn gaussian_1d<T: Scalar>(sigma: T) -> Result<Vec<T>> {
    let s = sigma.to_f64().unwrap_or(f64::NAN);
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::invalid(format!("gaussian sigma must be > 0, got {s}")));
    }
    let radius = (3.0 * s).ceil() as isize;
    gaussian_taps(s, radius)
}

/// Normalized 1-D Gaussian taps over `[-radius, radius]`.
pub fn gaussian_taps<T: Scalar>(sigma: f64, radius: isize) -> Result<Vec<T>> {
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| lit(t / total)).collect())
}

/// Pads one plane by `(rx, ry)` on each side using `border`.
fn pad_plane<T: Scalar>(
    plane: &[T],
    w: usize,
    h: usize,
    rx: usize,
    ry: usize,
    border: Border,
) -> Vec<T> {
    let pw = w + 2 * rx;
    let ph = h + 2 * ry;
    let xmap: Vec<usize> = (0..pw)
        .map(|x| border.index(x as isize - rx as isize, w))
        .collect();
    let mut out = Vec::with_capacity(pw * ph);
    for y in 0..ph {
        let sy = border.index(y as isize - ry as isize, h);
        let row = &plane[sy * w..(sy + 1) * w];
        out.extend(xmap.iter().map(|&sx| row[sx]));
    }
    out
}

/// 2-D convolution of every channel with `kernel`; output has the input dims.
///
/// Zero weights are skipped, so sparse kernels (lines, disks) cost only their
/// support.
pub fn convolve<T: Scalar>(
    img: &ImageBuffer<T>,
    kernel: &Kernel2D<T>,
    border: Border,
) -> Result<ImageBuffer<T>> {
    if kernel.width % 2 == 0 || kernel.height % 2 == 0 {
        return Err(Error::invalid("kernel dimensions must be odd"));
    }
    let (w, h) = img.dims();
    let (rx, ry) = (kernel.width / 2, kernel.height / 2);
    let pw = w + 2 * rx;
    // out(x, y) = Σ k(i, j) · in(x + rx - i, y + ry - j): the kernel is flipped.
    let taps: Vec<(usize, T)> = kernel
        .weights
        .iter()
        .enumerate()
        .filter(|(_, &wt)| wt != T::zero())
        .map(|(idx, &wt)| {
            let (i, j) = (idx % kernel.width, idx / kernel.width);
            let ox = 2 * rx - i;
            let oy = 2 * ry - j;
            (oy * pw + ox, wt)
        })
        .collect();
    let mut samples = Vec::with_capacity(img.samples().len());
    for plane in img.planes() {
        let padded = pad_plane(plane, w, h, rx, ry, border);
        for y in 0..h {
            for x in 0..w {
                let base = y * pw + x;
                let mut acc = T::zero();
                for &(off, wt) in &taps {
                    acc += wt * padded[base + off];
                }
                samples.push(acc);
            }
        }
    }
    Ok(ImageBuffer::from_raw_unchecked(w, h, img.channels(), samples))
}

/// Separable convolution: rows with `kx`, then columns with `ky`.
pub fn convolve_separable<T: Scalar>(
    img: &ImageBuffer<T>,
    kx: &[T],
    ky: &[T],
    border: Border,
) -> Result<ImageBuffer<T>> {
    if kx.len() % 2 == 0 || ky.len() % 2 == 0 {
        return Err(Error::invalid("kernel dimensions must be odd"));
    }
    let (w, h) = img.dims();
    let mut samples = Vec::with_capacity(img.samples().len());
    for plane in img.planes() {
        let rows = filter_rows(plane, w, h, kx, border);
        samples.extend(filter_cols(&rows, w, h, ky, border));
    }
    Ok(ImageBuffer::from_raw_unchecked(w, h, img.channels(), samples))
}

pub(crate) fn filter_rows<T: Scalar>(
    plane: &[T],
    w: usize,
    h: usize,
    taps: &[T],
    border: Border,
) -> Vec<T> {
    let r = taps.len() / 2;
    let mut line = vec![T::zero(); w + 2 * r];
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for (k, v) in line.iter_mut().enumerate() {
            *v = row[border.index(k as isize - r as isize, w)];
        }
        for x in 0..w {
            let mut acc = T::zero();
            for (k, &t) in taps.iter().enumerate() {
                acc += t * line[x + 2 * r - k];
            }
            out.push(acc);
        }
    }
    out
}

pub(crate) fn filter_cols<T: Scalar>(
    plane: &[T],
    w: usize,
    h: usize,
    taps: &[T],
    border: Border,
) -> Vec<T> {
    let r = taps.len() / 2;
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (k, &t) in taps.iter().enumerate() {
            let sy = border.index(y as isize + r as isize - k as isize, h);
            let src = &plane[sy * w..(sy + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += t * s;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> ImageBuffer<f64> {
        ImageBuffer::from_fn(w, h, 1, |x, y, _| (x + w * y) as f64 / (w * h) as f64).unwrap()
    }

    /// Direct evaluation of the convolution sum with explicit border lookups.
    fn brute_force(img: &ImageBuffer<f64>, k: &Kernel2D<f64>, border: Border) -> Vec<f64> {
        let (w, h) = img.dims();
        let (rx, ry) = (k.width() as isize / 2, k.height() as isize / 2);
        let mut out = vec![];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for j in -ry..=ry {
                    for i in -rx..=rx {
                        let wt = k.weights()[((j + ry) * k.width() as isize + i + rx) as usize];
                        let sx = border.index(x - i, w);
                        let sy = border.index(y - j, h);
                        acc += wt * img.get(sx, sy, 0);
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn kernels_have_unit_sum() {
        for s in [0.5, 1.0, 1.5, 2.0, 4.0, 6.0, 8.0, 12.0] {
            assert!((Kernel2D::<f64>::gaussian(s).unwrap().sum() - 1.0).abs() < 1e-9);
        }
        for r in [0.7, 1.0, 2.0, 4.0, 6.0, 8.0] {
            assert!((Kernel2D::<f64>::disk(r).unwrap().sum() - 1.0).abs() < 1e-9);
        }
        for len in [1.0, 3.0, 5.0, 9.0, 15.0, 27.0] {
            for ang in [0.0, 17.0, 45.0, 90.0, 133.0] {
                assert!((Kernel2D::<f64>::line(len, ang).unwrap().sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gaussian_radius_is_ceil_three_sigma() {
        assert_eq!(Kernel2D::<f64>::gaussian(1.5).unwrap().width(), 11);
        assert_eq!(Kernel2D::<f64>::gaussian(2.0).unwrap().width(), 13);
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(Kernel2D::<f64>::from_weights(2, 3, vec![0.0; 6]).is_err());
    }

    #[test]
    fn constant_preserved_and_delta_is_identity() {
        let c = ImageBuffer::<f64>::filled(9, 7, 3, 0.37).unwrap();
        let k = Kernel2D::gaussian(2.0).unwrap();
        let out = convolve(&c, &k, Border::Replicate).unwrap();
        assert!(out.samples().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        let img = ramp(6, 5);
        assert_eq!(convolve(&img, &Kernel2D::delta(), Border::Reflect).unwrap(), img);
    }

    #[test]
    fn box_on_ramp_matches_brute_force() {
        let img = ramp(5, 5);
        let k = Kernel2D::<f64>::boxed(3).unwrap();
        for border in [Border::Replicate, Border::Reflect] {
            let got = convolve(&img, &k, border).unwrap();
            let want = brute_force(&img, &k, border);
            for (a, b) in got.samples().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // Interior pixel of a linear ramp under a symmetric box is the ramp itself.
        let got = convolve(&img, &k, Border::Replicate).unwrap();
        assert!((got.get(2, 2, 0) - img.get(2, 2, 0)).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_kernel_is_flipped() {
        let img = ramp(7, 6);
        let k = Kernel2D::from_weights(3, 3, vec![0.1, 0.0, 0.3, 0.0, 0.2, 0.0, 0.4, 0.0, 0.0])
            .unwrap();
        let got = convolve(&img, &k, Border::Reflect).unwrap();
        let want = brute_force(&img, &k, Border::Reflect);
        for (a, b) in got.samples().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn separable_matches_dense() {
        let img = ramp(12, 9).map(|v| (v * 13.0).sin().abs());
        let dense = Kernel2D::<f64>::gaussian(1.2).unwrap();
        let taps = gaussian_1d(1.2).unwrap();
        let a = convolve(&img, &dense, Border::Reflect).unwrap();
        let b = convolve_separable(&img, &taps, &taps, Border::Reflect).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn border_indexing() {
        assert_eq!(Border::Replicate.index(-3, 4), 0);
        assert_eq!(Border::Replicate.index(9, 4), 3);
        assert_eq!(Border::Reflect.index(-1, 4), 0);
        assert_eq!(Border::Reflect.index(-2, 4), 1);
        assert_eq!(Border::Reflect.index(4, 4), 3);
        assert_eq!(Border::Reflect.index(5, 4), 2);
    }
}
