use serde::{Deserialize, Serialize};

use super::ImageBuffer;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Target color spaces.
///
/// Channel ranges after conversion from RGB in `[0, 1]`:
/// - `Hsv`: hue in `[0, 1)`, saturation and value in `[0, 1]`.
/// - `Lab`: CIE L*a*b* under D65 with sRGB linearization; L in `[0, 100]`,
///   a and b roughly in `[-128, 128]`.
/// - `YCbCr`: BT.601 full range; Y in `[0, 1]`, chroma offset by 0.5.
/// - `Luma`: single BT.601 weighted channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Hsv,
    Lab,
    YCbCr,
    Luma,
}

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

// sRGB primaries, D65.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

/// Converts an RGB image into `target`.
pub fn to_color_space<T: Scalar>(img: &ImageBuffer<T>, target: ColorSpace) -> Result<ImageBuffer<T>> {
    match (target, img.channels()) {
        (ColorSpace::Rgb, _) => Ok(img.clone()),
        (ColorSpace::Luma, 1) => Ok(img.clone()),
        (ColorSpace::Luma, 3) => Ok(luma(img)),
        (_, 3) => Ok(map_pixels(img, |p| match target {
            ColorSpace::Hsv => rgb_to_hsv(p),
            ColorSpace::Lab => rgb_to_lab(p),
            ColorSpace::YCbCr => rgb_to_ycbcr(p),
            ColorSpace::Rgb | ColorSpace::Luma => unreachable!(),
        })),
        (_, channels) => Err(Error::UnsupportedChannels {
            operation: "color conversion",
            channels,
        }),
    }
}

/// Converts an image in `source` space back to RGB, clamped to `[0, 1]`.
/// Luma images are replicated into three gray channels.
pub fn from_color_space<T: Scalar>(
    img: &ImageBuffer<T>,
    source: ColorSpace,
) -> Result<ImageBuffer<T>> {
    match (source, img.channels()) {
        (ColorSpace::Rgb, _) => Ok(img.clone()),
        (ColorSpace::Luma, 1) => {
            let plane = img.plane(0).to_vec();
            Ok(ImageBuffer::from_raw_unchecked(
                img.width(),
                img.height(),
                3,
                [plane.clone(), plane.clone(), plane].concat(),
            )
            .clamp01())
        }
        (ColorSpace::Luma, channels) => Err(Error::UnsupportedChannels {
            operation: "luma to RGB conversion",
            channels,
        }),
        (_, 3) => Ok(map_pixels(img, |p| match source {
            ColorSpace::Hsv => hsv_to_rgb(p),
            ColorSpace::Lab => lab_to_rgb(p),
            ColorSpace::YCbCr => ycbcr_to_rgb(p),
            ColorSpace::Rgb | ColorSpace::Luma => unreachable!(),
        })
        .clamp01()),
        (_, channels) => Err(Error::UnsupportedChannels {
            operation: "color conversion",
            channels,
        }),
    }
}

/// BT.601 luma plane of an RGB image; gray images are returned unchanged.
pub fn luma<T: Scalar>(img: &ImageBuffer<T>) -> ImageBuffer<T> {
    if img.channels() == 1 {
        return img.clone();
    }
    let (wr, wg, wb) = (
        T::from_f64(LUMA_R).unwrap(),
        T::from_f64(LUMA_G).unwrap(),
        T::from_f64(LUMA_B).unwrap(),
    );
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let samples = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| wr * r + wg * g + wb * b)
        .collect();
    ImageBuffer::from_raw_unchecked(img.width(), img.height(), 1, samples)
}

fn map_pixels<T: Scalar>(img: &ImageBuffer<T>, f: impl Fn([f64; 3]) -> [f64; 3]) -> ImageBuffer<T> {
    let n = img.pixel_count();
    let mut out = vec![T::zero(); 3 * n];
    let src = img.samples();
    for i in 0..n {
        let p = [
            src[i].to_f64().unwrap(),
            src[n + i].to_f64().unwrap(),
            src[2 * n + i].to_f64().unwrap(),
        ];
        let q = f(p);
        for c in 0..3 {
            out[c * n + i] = T::from_f64(q[c]).unwrap();
        }
    }
    ImageBuffer::from_raw_unchecked(img.width(), img.height(), 3, out)
}

pub(crate) fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, max]
}

pub(crate) fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn white_point() -> [f64; 3] {
    // Reference white is the image of RGB (1,1,1) so that white maps to a = b = 0.
    RGB_TO_XYZ.map(|row| row.iter().sum())
}

fn xyz_to_rgb_matrix() -> [[f64; 3]; 3] {
    invert3(&RGB_TO_XYZ)
}

pub(crate) fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            // Cofactor of (j, i) gives the adjugate.
            let (r0, r1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            *v = sign * minor * inv_det;
        }
    }
    out
}

const LAB_EPS: f64 = 216.0 / 24_389.0;
const LAB_KAPPA: f64 = 24_389.0 / 27.0;

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPS {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let t = f * f * f;
    if t > LAB_EPS {
        t
    } else {
        (116.0 * f - 16.0) / LAB_KAPPA
    }
}

pub(crate) fn rgb_to_lab(p: [f64; 3]) -> [f64; 3] {
    let lin = p.map(srgb_to_linear);
    let wp = white_point();
    let mut xyz = [0.0; 3];
    for (k, row) in RGB_TO_XYZ.iter().enumerate() {
        xyz[k] = (row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]) / wp[k];
    }
    let (fx, fy, fz) = (lab_f(xyz[0]), lab_f(xyz[1]), lab_f(xyz[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub(crate) fn lab_to_rgb([l, a, b]: [f64; 3]) -> [f64; 3] {
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let wp = white_point();
    let xyz = [
        lab_f_inv(fx) * wp[0],
        lab_f_inv(fy) * wp[1],
        lab_f_inv(fz) * wp[2],
    ];
    let inv = xyz_to_rgb_matrix();
    let mut rgb = [0.0; 3];
    for (k, row) in inv.iter().enumerate() {
        rgb[k] = linear_to_srgb((row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]).max(0.0));
    }
    rgb
}

pub(crate) fn rgb_to_ycbcr([r, g, b]: [f64; 3]) -> [f64; 3] {
    let y = LUMA_R * r + LUMA_G * g + LUMA_B * b;
    let cb = 0.5 + (b - y) / (2.0 * (1.0 - LUMA_B));
    let cr = 0.5 + (r - y) / (2.0 * (1.0 - LUMA_R));
    [y, cb, cr]
}

pub(crate) fn ycbcr_to_rgb([y, cb, cr]: [f64; 3]) -> [f64; 3] {
    let r = y + 2.0 * (1.0 - LUMA_R) * (cr - 0.5);
    let b = y + 2.0 * (1.0 - LUMA_B) * (cb - 0.5);
    let g = (y - LUMA_R * r - LUMA_B * b) / LUMA_G;
    [r, g, b]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pixels(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect()
    }

    fn max_err(a: [f64; 3], b: [f64; 3]) -> f64 {
        (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn white_is_unsaturated() {
        let img = ImageBuffer::<f64>::filled(2, 2, 3, 1.0).unwrap();
        let hsv = to_color_space(&img, ColorSpace::Hsv).unwrap();
        assert!(hsv.plane(1).iter().all(|&s| s == 0.0));
        assert!(hsv.plane(2).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn black_in_ycbcr() {
        // Y = 0, Cb = Cr = 0.5 under the offset-chroma convention.
        assert_eq!(rgb_to_ycbcr([0.0, 0.0, 0.0]), [0.0, 0.5, 0.5]);
        let w = rgb_to_ycbcr([1.0, 1.0, 1.0]);
        assert!(max_err(w, [1.0, 0.5, 0.5]) < 1e-15);
    }

    #[test]
    fn white_has_neutral_lab() {
        let lab = rgb_to_lab([1.0, 1.0, 1.0]);
        assert!((lab[0] - 100.0).abs() < 1e-9);
        assert!(lab[1].abs() < 1e-9 && lab[2].abs() < 1e-9);
    }

    #[test]
    fn round_trips_on_random_pixels() {
        for (fwd, inv) in [
            (rgb_to_lab as fn([f64; 3]) -> [f64; 3], lab_to_rgb as fn([f64; 3]) -> [f64; 3]),
            (rgb_to_hsv, hsv_to_rgb),
            (rgb_to_ycbcr, ycbcr_to_rgb),
        ] {
            let worst = random_pixels(1000, 11)
                .into_iter()
                .map(|p| max_err(inv(fwd(p)), p))
                .fold(0.0, f64::max);
            assert!(worst < 1e-4, "round trip error {worst}");
        }
    }

    #[test]
    fn image_level_round_trip() {
        let img = ImageBuffer::<f64>::from_fn(8, 4, 3, |x, y, c| {
            ((x * 31 + y * 17 + c * 7) % 64) as f64 / 63.0
        })
        .unwrap();
        for space in [ColorSpace::Hsv, ColorSpace::Lab, ColorSpace::YCbCr] {
            let back = from_color_space(&to_color_space(&img, space).unwrap(), space).unwrap();
            let worst = img
                .samples()
                .iter()
                .zip(back.samples())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-4, "{space:?}: {worst}");
        }
    }

    #[test]
    fn luma_requires_rgb_or_gray() {
        let gray = ImageBuffer::<f64>::filled(2, 2, 1, 0.3).unwrap();
        assert_eq!(to_color_space(&gray, ColorSpace::Luma).unwrap(), gray);
        assert!(matches!(
            to_color_space(&gray, ColorSpace::Lab),
            Err(Error::UnsupportedChannels { .. })
        ));
    }

    #[test]
    fn inverse_matrix_is_inverse() {
        let inv = invert3(&RGB_TO_XYZ);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| RGB_TO_XYZ[i][k] * inv[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12);
            }
        }
    }
}
