use serde::{Deserialize, Serialize};

use super::ImageBuffer;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Bilinear,
    #[default]
    Bicubic,
}

impl Interpolation {
    fn support(self) -> f64 {
        match self {
            Interpolation::Nearest => 0.5,
            Interpolation::Bilinear => 1.0,
            Interpolation::Bicubic => 2.0,
        }
    }

    fn weight(self, t: f64) -> f64 {
        let t = t.abs();
        match self {
            Interpolation::Nearest => unreachable!("nearest uses direct indexing"),
            Interpolation::Bilinear => (1.0 - t).max(0.0),
            Interpolation::Bicubic => cubic(t),
        }
    }
}

/// Keys cubic convolution kernel with `a = -0.5`.
pub(crate) fn cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps `(index, weight)` for each destination coordinate along one axis.
///
/// Pixel centers are aligned: destination `d` samples source position
/// `(d + 0.5) · n/m − 0.5`. When shrinking, the filter is widened by the scale
/// factor so that downsizing is antialiased.
fn axis_taps(n: usize, m: usize, method: Interpolation) -> Vec<Vec<(usize, f64)>> {
    let scale = n as f64 / m as f64;
    (0..m)
        .map(|d| {
            if method == Interpolation::Nearest {
                let idx = (((d as f64 + 0.5) * scale).floor() as usize).min(n - 1);
                return vec![(idx, 1.0)];
            }
            let center = (d as f64 + 0.5) * scale - 0.5;
            let stretch = scale.max(1.0);
            let support = method.support() * stretch;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for i in lo..=hi {
                let wt = method.weight((i as f64 - center) / stretch);
                if wt != 0.0 {
                    let idx = i.clamp(0, n as isize - 1) as usize;
                    match taps.iter_mut().find(|(j, _)| *j == idx) {
                        Some(t) => t.1 += wt,
                        None => taps.push((idx, wt)),
                    }
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Resizes every channel to `new_width × new_height`; output clamped to `[0, 1]`.
pub fn resample<T: Scalar>(
    img: &ImageBuffer<T>,
    new_width: usize,
    new_height: usize,
    method: Interpolation,
) -> Result<ImageBuffer<T>> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::invalid(format!(
            "resample target must be positive, got {new_width}x{new_height}"
        )));
    }
    let (w, h) = img.dims();
    let xt = axis_taps(w, new_width, method);
    let yt = axis_taps(h, new_height, method);
    let to_t = |v: f64| T::from_f64(v).unwrap();
    let mut samples = Vec::with_capacity(new_width * new_height * img.channels());
    let mut rows = vec![T::zero(); new_width * h];
    for plane in img.planes() {
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            for (x, taps) in xt.iter().enumerate() {
                let mut acc = T::zero();
                for &(i, wt) in taps {
                    acc += to_t(wt) * src[i];
                }
                rows[y * new_width + x] = acc;
            }
        }
        for taps in &yt {
            for x in 0..new_width {
                let mut acc = T::zero();
                for &(j, wt) in taps {
                    acc += to_t(wt) * rows[j * new_width + x];
                }
                samples.push(acc.max(T::zero()).min(T::one()));
            }
        }
    }
    Ok(ImageBuffer::from_raw_unchecked(
        new_width,
        new_height,
        img.channels(),
        samples,
    ))
}

/// Scales with preserved aspect ratio so the image spans the target in both
/// dimensions, then center-crops the overflowing dimension. Bicubic.
pub fn resize_and_crop<T: Scalar>(
    img: &ImageBuffer<T>,
    target_width: usize,
    target_height: usize,
) -> Result<ImageBuffer<T>> {
    let (w, h) = img.dims();
    if target_width == 0 || target_height == 0 {
        return Err(Error::invalid("resize target must be positive"));
    }
    if (w, h) == (target_width, target_height) {
        return Ok(img.clone());
    }
    if w < target_width && h < target_height {
        return Err(Error::invalid(format!(
            "source {w}x{h} is smaller than target {target_width}x{target_height} in both dimensions"
        )));
    }
    let scale = (target_width as f64 / w as f64).max(target_height as f64 / h as f64);
    let nw = ((w as f64 * scale).round() as usize).max(target_width);
    let nh = ((h as f64 * scale).round() as usize).max(target_height);
    let scaled = if (nw, nh) == (w, h) {
        img.clone()
    } else {
        resample(img, nw, nh, Interpolation::Bicubic)?
    };
    scaled.crop(
        (nw - target_width) / 2,
        (nh - target_height) / 2,
        target_width,
        target_height,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize) -> ImageBuffer<f64> {
        ImageBuffer::from_fn(w, h, 3, |x, y, c| ((x * 7 + y * 13 + c * 5) % 17) as f64 / 16.0)
            .unwrap()
    }

    #[test]
    fn constant_stays_constant() {
        let img = ImageBuffer::<f64>::filled(37, 23, 3, 0.42).unwrap();
        for method in [
            Interpolation::Nearest,
            Interpolation::Bilinear,
            Interpolation::Bicubic,
        ] {
            for (nw, nh) in [(11, 5), (80, 61), (37, 23), (1, 1)] {
                let out = resample(&img, nw, nh, method).unwrap();
                assert_eq!(out.dims(), (nw, nh));
                assert!(out.samples().iter().all(|&v| (v - 0.42).abs() < 1e-14));
            }
        }
    }

    #[test]
    fn nearest_to_single_pixel_samples_center() {
        // floor(0.5 · n) picks the center pixel for each axis.
        let img = pattern(9, 6);
        let out = resample(&img, 1, 1, Interpolation::Nearest).unwrap();
        for c in 0..3 {
            assert_eq!(out.get(0, 0, c), img.get(4, 3, c));
        }
    }

    #[test]
    fn identity_resize_is_exact() {
        let img = pattern(10, 7);
        assert_eq!(resample(&img, 10, 7, Interpolation::Nearest).unwrap(), img);
        assert_eq!(resample(&img, 10, 7, Interpolation::Bicubic).unwrap(), img);
    }

    #[test]
    fn nearest_upscale_replicates_blocks() {
        let img = pattern(3, 2);
        let up = resample(&img, 6, 4, Interpolation::Nearest).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(up.get(x, y, 1), img.get(x / 2, y / 2, 1));
            }
        }
    }

    #[test]
    fn resize_and_crop_cases() {
        let a = resize_and_crop(&ImageBuffer::<f64>::filled(1024, 768, 3, 0.5).unwrap(), 512, 384)
            .unwrap();
        assert_eq!(a.dims(), (512, 384));
        let wide = ImageBuffer::<f64>::from_fn(1536, 768, 1, |x, _, _| x as f64 / 1535.0).unwrap();
        let b = resize_and_crop(&wide, 512, 384).unwrap();
        assert_eq!(b.dims(), (512, 384));
        // 1536x768 → 768x384 then 128 columns cropped from each side.
        let expect = resample(&wide, 768, 384, Interpolation::Bicubic)
            .unwrap()
            .crop(128, 0, 512, 384)
            .unwrap();
        assert_eq!(b, expect);
        let same = pattern(512, 384);
        assert_eq!(resize_and_crop(&same, 512, 384).unwrap(), same);
        assert!(resize_and_crop(&pattern(100, 80), 512, 384).is_err());
    }

    #[test]
    fn cubic_kernel_interpolates() {
        assert_eq!(cubic(0.0), 1.0);
        assert!(cubic(1.0).abs() < 1e-15 && cubic(2.0).abs() < 1e-15);
        // Partition of unity at any phase.
        for phase in [0.1, 0.25, 0.5, 0.9] {
            let s: f64 = (-2..=2).map(|k| cubic(k as f64 + phase)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
