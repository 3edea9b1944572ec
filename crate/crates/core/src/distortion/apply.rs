use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::quantize::{dither_to_palette, minimum_variance_palette, multilevel_otsu};
use super::wavelet::wavelet_compress;
use super::{DistortionKind, DistortionParamTable, DistortionSpec};
use crate::error::{Error, Result};
use crate::imgcore::kernel::gaussian_1d;
use crate::imgcore::{
    convolve, convolve_separable, from_color_space, luma, resample, to_color_space, Border,
    ColorSpace, Interpolation, Kernel2D,
};
use crate::Image;

/// Distorted image plus any non-fatal conditions met while producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub image: Image,
    pub warnings: Vec<String>,
}

/// Applies one degradation. Output has the input's dims and samples in `[0, 1]`.
///
/// All randomness comes from a generator seeded by `spec.seed()` alone, so the
/// result is a pure function of `(img, spec, table)`.
pub fn apply_distortion(img: &Image, spec: DistortionSpec, table: &DistortionParamTable) -> Result<Image> {
    apply_distortion_with_warnings(img, spec, table).map(|a| a.image)
}

pub fn apply_distortion_with_warnings(
    img: &Image,
    spec: DistortionSpec,
    table: &DistortionParamTable,
) -> Result<Applied> {
    if img.channels() != 3 {
        return Err(Error::UnsupportedChannels {
            operation: "distortion",
            channels: img.channels(),
        });
    }
    let p = table.value(spec.kind(), spec.level());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed());
    let mut warnings = Vec::new();
    use DistortionKind::*;
    let out = match spec.kind() {
        GaussianBlur => gaussian_blur(img, p)?,
        LensBlur => convolve(img, &Kernel2D::disk(p)?, Border::Replicate)?,
        MotionBlur => {
            let angle = rng.random_range(0.0..180.0);
            convolve(img, &Kernel2D::line(p, angle)?, Border::Replicate)?
        }
        ColorDiffusion => color_diffusion(img, p)?,
        ColorShift => color_shift(img, p, &mut rng)?,
        ColorQuantization => {
            let palette = minimum_variance_palette(img, p.round().max(1.0) as usize);
            dither_to_palette(img, &palette)
        }
        ColorSaturationHsv => {
            let mut hsv = to_color_space(img, ColorSpace::Hsv)?;
            for s in hsv.plane_mut(1) {
                *s = (*s * p).clamp(0.0, 1.0);
            }
            from_color_space(&hsv, ColorSpace::Hsv)?
        }
        ColorSaturationLab => {
            let mut lab = to_color_space(img, ColorSpace::Lab)?;
            for c in 1..3 {
                for v in lab.plane_mut(c) {
                    *v *= p;
                }
            }
            from_color_space(&lab, ColorSpace::Lab)?
        }
        Jpeg2000 => wavelet_compress(img, p)?,
        Jpeg => Image::decode(&img.encode_jpeg(p.round().clamp(1.0, 100.0) as u8)?)?,
        WhiteNoise => add_gaussian_noise(img, p, &mut rng)?,
        WhiteNoiseColor => {
            let ycc = to_color_space(img, ColorSpace::YCbCr)?;
            let noisy = add_noise_unclamped(&ycc, p, &mut rng)?;
            from_color_space(&noisy, ColorSpace::YCbCr)?
        }
        ImpulseNoise => impulse_noise(img, p, &mut rng),
        MultiplicativeNoise => {
            let a = (3.0 * p).sqrt();
            img.map(|v| v + v * rng.random_range(-a..=a)).clamp01()
        }
        Denoise => median3(&add_gaussian_noise(img, p, &mut rng)?),
        Brighten => adjust_lightness(img, p)?,
        Darken => adjust_lightness(img, -p)?,
        MeanShift => img.map(|v| v + p).clamp01(),
        Jitter => jitter(img, p, &mut rng),
        NonEccentricityPatch => patch_offsets(
            img,
            p.round() as usize,
            table.patch_size,
            table.patch_displacement,
            &mut rng,
        ),
        Pixelate => pixelate(img, p)?,
        Quantization => {
            if img.planes().all(|pl| pl.windows(2).all(|w| w[0] == w[1])) {
                warnings.push("otsu quantization of a constant image; returned unchanged".into());
                img.clone()
            } else {
                otsu_quantize(img, p.round().max(1.0) as usize)
            }
        }
        ColorBlock => color_blocks(img, p.round() as usize, table.color_block_size, &mut rng),
        HighSharpen => unsharp_mask(img, p, table.sharpen_sigma)?,
        ContrastChange => contrast_curve(img, p, spec.seed() % 2 == 0),
    };
    debug_assert_eq!(out.dims(), img.dims());
    Ok(Applied {
        image: out.clamp01(),
        warnings,
    })
}

fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    let taps = gaussian_1d(sigma)?;
    convolve_separable(img, &taps, &taps, Border::Replicate)
}

fn color_diffusion(img: &Image, sigma: f64) -> Result<Image> {
    let lab = to_color_space(img, ColorSpace::Lab)?;
    let taps = gaussian_1d(sigma)?;
    let (w, h) = lab.dims();
    let mut planes: Vec<Vec<f64>> = lab.planes().map(<[f64]>::to_vec).collect();
    for plane in planes.iter_mut().skip(1) {
        let single = Image::new(w, h, 1, std::mem::take(plane))?;
        *plane = convolve_separable(&single, &taps, &taps, Border::Replicate)?.into_samples();
    }
    from_color_space(&Image::from_planes(w, h, planes)?, ColorSpace::Lab)
}

/// Sobel gradient magnitude of the luma plane, replicate border.
fn gradient_magnitude(img: &Image) -> Vec<f64> {
    let y = luma(img);
    let (w, h) = y.dims();
    let at = |x: isize, yy: isize| {
        y.get(
            Border::Replicate.index(x, w),
            Border::Replicate.index(yy, h),
            0,
        )
    };
    let mut out = Vec::with_capacity(w * h);
    for yy in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, yy - 1) + 2.0 * at(x + 1, yy) + at(x + 1, yy + 1))
                - (at(x - 1, yy - 1) + 2.0 * at(x - 1, yy) + at(x - 1, yy + 1));
            let gy = (at(x - 1, yy + 1) + 2.0 * at(x, yy + 1) + at(x + 1, yy + 1))
                - (at(x - 1, yy - 1) + 2.0 * at(x, yy - 1) + at(x + 1, yy - 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Translates the green channel by a random offset of the given magnitude and
/// blends it in, weighted by the normalized gradient magnitude.
fn color_shift(img: &Image, offset: f64, rng: &mut ChaCha8Rng) -> Result<Image> {
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let dx = (offset * theta.cos()).round() as isize;
    let dy = (offset * theta.sin()).round() as isize;
    let mask = gradient_magnitude(img);
    let peak = mask.iter().copied().fold(0.0, f64::max);
    let mut out = img.clone();
    if peak == 0.0 {
        return Ok(out);
    }
    let (w, h) = img.dims();
    for y in 0..h {
        for x in 0..w {
            let sx = Border::Replicate.index(x as isize - dx, w);
            let sy = Border::Replicate.index(y as isize - dy, h);
            let m = mask[y * w + x] / peak;
            let g = img.get(x, y, 1);
            out.set(x, y, 1, (1.0 - m) * g + m * img.get(sx, sy, 1));
        }
    }
    Ok(out)
}

fn add_noise_unclamped(img: &Image, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Image> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = img.clone();
    for v in out.samples_mut() {
        *v += normal.sample(rng);
    }
    Ok(out)
}

fn add_gaussian_noise(img: &Image, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Image> {
    Ok(add_noise_unclamped(img, sigma, rng)?.clamp01())
}

fn impulse_noise(img: &Image, density: f64, rng: &mut ChaCha8Rng) -> Image {
    let mut out = img.clone();
    for v in out.samples_mut() {
        if rng.random::<f64>() < density {
            *v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        }
    }
    out
}

/// Per-channel 3×3 median, replicate border.
fn median3(img: &Image) -> Image {
    let (w, h) = img.dims();
    let mut out = img.clone();
    for c in 0..img.channels() {
        let plane = img.plane(c);
        let dst = out.plane_mut(c);
        let mut win = [0.0f64; 9];
        for y in 0..h {
            for x in 0..w {
                let mut k = 0;
                for dy in -1..=1isize {
                    let sy = Border::Replicate.index(y as isize + dy, h);
                    for dx in -1..=1isize {
                        let sx = Border::Replicate.index(x as isize + dx, w);
                        win[k] = plane[sy * w + sx];
                        k += 1;
                    }
                }
                win.sort_unstable_by(f64::total_cmp);
                dst[y * w + x] = win[4];
            }
        }
    }
    out
}

/// `v ± a·sin(πv)` on normalized Lab lightness: both endpoints stay fixed.
fn adjust_lightness(img: &Image, amount: f64) -> Result<Image> {
    let mut lab = to_color_space(img, ColorSpace::Lab)?;
    for l in lab.plane_mut(0) {
        let v = (*l / 100.0).clamp(0.0, 1.0);
        *l = 100.0 * (v + amount * (std::f64::consts::PI * v).sin());
    }
    from_color_space(&lab, ColorSpace::Lab)
}

fn bicubic_at(plane: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    use crate::imgcore::resample_cubic as cubic;
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let mut acc = 0.0;
    for j in -1..=2isize {
        let wy = cubic(j as f64 - fy);
        let sy = Border::Replicate.index(y0 as isize + j, h);
        for i in -1..=2isize {
            let sx = Border::Replicate.index(x0 as isize + i, w);
            acc += wy * cubic(i as f64 - fx) * plane[sy * w + sx];
        }
    }
    acc
}

/// Resamples every pixel at a uniformly random offset in `[-amp, amp]²`.
fn jitter(img: &Image, amplitude: f64, rng: &mut ChaCha8Rng) -> Image {
    let (w, h) = img.dims();
    let offsets: Vec<(f64, f64)> = (0..w * h)
        .map(|_| {
            (
                rng.random_range(-amplitude..=amplitude),
                rng.random_range(-amplitude..=amplitude),
            )
        })
        .collect();
    let mut out = img.clone();
    for c in 0..3 {
        let plane = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = offsets[y * w + x];
                dst[y * w + x] = bicubic_at(plane, w, h, x as f64 + dx, y as f64 + dy);
            }
        }
    }
    out
}

/// Copies `count` random `size`×`size` patches to positions displaced by up
/// to `displacement` pixels in each direction.
fn patch_offsets(
    img: &Image,
    count: usize,
    size: usize,
    displacement: usize,
    rng: &mut ChaCha8Rng,
) -> Image {
    let (w, h) = img.dims();
    let mut out = img.clone();
    if size > w || size > h {
        return out;
    }
    let d = displacement as i64;
    for _ in 0..count {
        let sx = rng.random_range(0..=w - size);
        let sy = rng.random_range(0..=h - size);
        let tx = (sx as i64 + rng.random_range(-d..=d)).clamp(0, (w - size) as i64) as usize;
        let ty = (sy as i64 + rng.random_range(-d..=d)).clamp(0, (h - size) as i64) as usize;
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    out.set(tx + x, ty + y, c, img.get(sx + x, sy + y, c));
                }
            }
        }
    }
    out
}

/// Nearest-neighbor downsize by `block`, then nearest upsize to the original dims.
fn pixelate(img: &Image, block: f64) -> Result<Image> {
    let (w, h) = img.dims();
    let sw = ((w as f64 / block).round() as usize).max(1);
    let sh = ((h as f64 / block).round() as usize).max(1);
    let small = resample(img, sw, sh, Interpolation::Nearest)?;
    resample(&small, w, h, Interpolation::Nearest)
}

/// Per-channel quantization into `thresholds + 1` classes found by multilevel
/// Otsu; each class is replaced by its mean value.
fn otsu_quantize(img: &Image, thresholds: usize) -> Image {
    let mut out = img.clone();
    for c in 0..3 {
        let plane = img.plane(c);
        let cuts = multilevel_otsu(plane, thresholds);
        let class_of = |v: f64| cuts.partition_point(|&t| t < v);
        let mut sums = vec![0.0; cuts.len() + 1];
        let mut counts = vec![0usize; cuts.len() + 1];
        for &v in plane {
            let k = class_of(v);
            sums[k] += v;
            counts[k] += 1;
        }
        let means: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
            .collect();
        for v in out.plane_mut(c) {
            *v = means[class_of(*v)];
        }
    }
    out
}

fn color_blocks(img: &Image, count: usize, size: usize, rng: &mut ChaCha8Rng) -> Image {
    let (w, h) = img.dims();
    let (bw, bh) = (size.min(w), size.min(h));
    let mut out = img.clone();
    for _ in 0..count {
        let x0 = rng.random_range(0..=w - bw);
        let y0 = rng.random_range(0..=h - bh);
        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        for (c, &value) in color.iter().enumerate() {
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    out.set(x, y, c, value);
                }
            }
        }
    }
    out
}

fn unsharp_mask(img: &Image, amount: f64, sigma: f64) -> Result<Image> {
    let blurred = gaussian_blur(img, sigma)?;
    let mut out = img.clone();
    for (v, b) in out.samples_mut().iter_mut().zip(blurred.samples()) {
        *v += amount * (*v - b);
    }
    Ok(out.clamp01())
}

/// Sigmoid tone curve renormalized to fix 0 and 1. `increase` selects the
/// curve itself; otherwise its inverse, which flattens contrast.
fn contrast_curve(img: &Image, gain: f64, increase: bool) -> Image {
    let s = |v: f64| 1.0 / (1.0 + (-gain * (v - 0.5)).exp());
    let (s0, s1) = (s(0.0), s(1.0));
    if increase {
        img.map(|v| (s(v) - s0) / (s1 - s0))
    } else {
        img.map(|u| {
            let t = s0 + u * (s1 - s0);
            0.5 - (1.0 / t - 1.0).ln() / gain
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::synth::synthetic_reference;

    fn spec(kind: DistortionKind, level: u8, seed: u64) -> DistortionSpec {
        DistortionSpec::new(kind, level, seed).unwrap()
    }

    #[test]
    fn mean_shift_on_constant() {
        let img = Image::filled(16, 12, 3, 0.5).unwrap();
        let table = DistortionParamTable::default();
        // Level 2 shifts by +0.1.
        assert_eq!(table.value(DistortionKind::MeanShift, 2), 0.1);
        let out = apply_distortion(&img, spec(DistortionKind::MeanShift, 2, 0), &table).unwrap();
        assert!(out.samples().iter().all(|&v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let img = Image::filled(40, 30, 3, 0.3).unwrap();
        let table = DistortionParamTable::default();
        for level in 1..=5 {
            for kind in [DistortionKind::GaussianBlur, DistortionKind::LensBlur, DistortionKind::MotionBlur] {
                let out = apply_distortion(&img, spec(kind, level, 9), &table).unwrap();
                assert!(out.samples().iter().all(|&v| (v - 0.3).abs() < 1e-12), "{kind}");
            }
        }
    }

    #[test]
    fn pixelate_whole_image_block_samples_center() {
        let img = synthetic_reference(32, 32, 5).unwrap();
        let table = DistortionParamTable {
            pixelate_block: [2.0, 4.0, 8.0, 16.0, 32.0],
            ..Default::default()
        };
        let out = apply_distortion(&img, spec(DistortionKind::Pixelate, 5, 0), &table).unwrap();
        // Downsize to 1x1 picks source pixel (16, 16); upsizing replicates it.
        for c in 0..3 {
            let v = img.get(16, 16, c);
            assert!(out.plane(c).iter().all(|&s| s == v));
        }
    }

    #[test]
    fn every_kind_preserves_dims_range_and_is_deterministic() {
        let img = synthetic_reference(48, 40, 1).unwrap();
        let table = DistortionParamTable::default();
        for kind in DistortionKind::ALL {
            for level in [1, 5] {
                let s = spec(kind, level, 1234);
                let a = apply_distortion(&img, s, &table).unwrap();
                let b = apply_distortion(&img, s, &table).unwrap();
                assert_eq!(a, b, "{kind} not deterministic");
                assert_eq!(a.dims(), img.dims());
                assert!(a.samples().iter().all(|&v| (0.0..=1.0).contains(&v)), "{kind}");
            }
        }
    }

    #[test]
    fn otsu_on_constant_warns_and_passes_through() {
        let img = Image::filled(10, 10, 3, 0.25).unwrap();
        let applied = apply_distortion_with_warnings(
            &img,
            spec(DistortionKind::Quantization, 3, 0),
            &DistortionParamTable::default(),
        )
        .unwrap();
        assert_eq!(applied.image, img);
        assert_eq!(applied.warnings.len(), 1);
    }

    #[test]
    fn brighten_and_darken_fix_extremes() {
        let img = Image::from_fn(3, 1, 3, |x, _, _| [0.0, 0.5, 1.0][x]).unwrap();
        let table = DistortionParamTable::default();
        let b = apply_distortion(&img, spec(DistortionKind::Brighten, 5, 0), &table).unwrap();
        let d = apply_distortion(&img, spec(DistortionKind::Darken, 5, 0), &table).unwrap();
        for c in 0..3 {
            assert!(b.get(0, 0, c) < 1e-6 && d.get(0, 0, c) < 1e-6);
            assert!((b.get(2, 0, c) - 1.0).abs() < 1e-6 && (d.get(2, 0, c) - 1.0).abs() < 1e-6);
            assert!(b.get(1, 0, c) > 0.5 && d.get(1, 0, c) < 0.5);
        }
    }

    #[test]
    fn contrast_directions_and_endpoints() {
        let img = Image::from_fn(5, 1, 3, |x, _, _| x as f64 / 4.0).unwrap();
        let up = contrast_curve(&img, 8.0, true);
        let down = contrast_curve(&img, 8.0, false);
        for out in [&up, &down] {
            assert!(out.get(0, 0, 0).abs() < 1e-12);
            assert!((out.get(4, 0, 0) - 1.0).abs() < 1e-12);
            assert!((out.get(2, 0, 0) - 0.5).abs() < 1e-12);
        }
        assert!(up.get(1, 0, 0) < 0.25 && down.get(1, 0, 0) > 0.25);
        // The decreasing curve inverts the increasing one.
        let back = contrast_curve(&up, 8.0, false);
        for (a, b) in back.samples().iter().zip(img.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn different_seeds_change_random_kinds() {
        let img = synthetic_reference(32, 24, 2).unwrap();
        let table = DistortionParamTable::default();
        for kind in [DistortionKind::WhiteNoise, DistortionKind::ImpulseNoise, DistortionKind::ColorBlock] {
            let a = apply_distortion(&img, spec(kind, 3, 1), &table).unwrap();
            let b = apply_distortion(&img, spec(kind, 3, 2), &table).unwrap();
            assert_ne!(a, b, "{kind}");
        }
    }

    #[test]
    fn gray_input_rejected() {
        let img = Image::filled(4, 4, 1, 0.5).unwrap();
        assert!(apply_distortion(&img, spec(DistortionKind::Jpeg, 1, 0), &DistortionParamTable::default()).is_err());
    }
}
