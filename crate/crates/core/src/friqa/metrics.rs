use crate::error::{Error, Result};
use crate::imgcore::{gaussian_taps, luma, Border, ImageBuffer};
use crate::scalar::{from_usize, lit, Scalar};

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_SIGMA: f64 = 1.5;
/// Side of the Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
/// Per-scale exponents, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const GMSD_C: f64 = 170.0;

fn check_dims<T: Scalar>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )))
    }
}

/// Peak signal-to-noise ratio in dB for samples in `[0, 1]`; `+inf` when
/// the images are identical.
pub fn psnr<T: Scalar>(reference: &ImageBuffer<T>, distorted: &ImageBuffer<T>) -> Result<T> {
    check_dims(reference, distorted)?;
    let n = from_usize::<T>(reference.samples().len());
    let mse = reference
        .samples()
        .iter()
        .zip(distorted.samples())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>()
        / n;
    if mse == T::zero() {
        return Ok(T::infinity());
    }
    Ok(lit::<T>(-10.0) * mse.log10())
}

/// A single-channel plane with its dimensions.
struct Plane<T> {
    w: usize,
    h: usize,
    v: Vec<T>,
}

impl<T: Scalar> Plane<T> {
    fn luma_of(img: &ImageBuffer<T>) -> Self {
        let y = luma(img);
        Plane {
            w: y.width(),
            h: y.height(),
            v: y.into_samples(),
        }
    }

    fn scaled(mut self, s: T) -> Self {
        for v in &mut self.v {
            *v = *v * s;
        }
        self
    }

    /// 2×2 block average, odd trailing row/column dropped.
    fn halve(&self) -> Self {
        let (w, h) = (self.w / 2, self.h / 2);
        let q = lit::<T>(0.25);
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            let r0 = &self.v[2 * y * self.w..];
            let r1 = &self.v[(2 * y + 1) * self.w..];
            for x in 0..w {
                v.push((r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * q);
            }
        }
        Plane { w, h, v }
    }

    fn product(&self, other: &Self) -> Vec<T> {
        self.v.iter().zip(&other.v).map(|(&a, &b)| a * b).collect()
    }
}

/// Separable filtering keeping only positions where the window fits.
fn filter_valid<T: Scalar>(v: &[T], w: usize, h: usize, taps: &[T]) -> Vec<T> {
    let k = taps.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = Vec::with_capacity(ow * h);
    for y in 0..h {
        let row = &v[y * w..(y + 1) * w];
        for x in 0..ow {
            rows.push(taps.iter().zip(&row[x..x + k]).map(|(&t, &s)| t * s).sum::<T>());
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        let dst = &mut out[y * ow..(y + 1) * ow];
        for (j, &t) in taps.iter().enumerate() {
            let src = &rows[(y + j) * ow..(y + j + 1) * ow];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += t * s;
            }
        }
    }
    out
}

/// Mean luminance-times-structure map and mean contrast-structure map over
/// the valid window positions.
fn ssim_terms<T: Scalar>(a: &Plane<T>, b: &Plane<T>) -> (T, T) {
    let taps: Vec<T> = gaussian_taps(SSIM_SIGMA, (SSIM_WINDOW / 2) as isize).expect("fixed sigma");
    let f = |v: &[T]| filter_valid(v, a.w, a.h, &taps);
    let mu_a = f(&a.v);
    let mu_b = f(&b.v);
    let aa = f(&a.product(a));
    let bb = f(&b.product(b));
    let ab = f(&a.product(b));
    let c1 = lit::<T>(SSIM_K1 * SSIM_K1);
    let c2 = lit::<T>(SSIM_K2 * SSIM_K2);
    let two = lit::<T>(2.0);
    let (mut ssim_sum, mut cs_sum) = (T::zero(), T::zero());
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = aa[i] - ma * ma;
        let var_b = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let l = (two * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let cs = (two * cov + c2) / (var_a + var_b + c2);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    let n = from_usize::<T>(mu_a.len());
    (ssim_sum / n, cs_sum / n)
}

fn require_size(op: &'static str, w: usize, h: usize, min: usize) -> Result<()> {
    if w < min || h < min {
        return Err(Error::ImageTooSmall {
            operation: op,
            width: w,
            height: h,
            min,
        });
    }
    Ok(())
}

/// Mean structural similarity on luma with an 11×11 Gaussian window
/// (σ = 1.5), valid positions only, for a unit dynamic range.
pub fn ssim<T: Scalar>(reference: &ImageBuffer<T>, distorted: &ImageBuffer<T>) -> Result<T> {
    check_dims(reference, distorted)?;
    require_size("SSIM", reference.width(), reference.height(), SSIM_WINDOW)?;
    let (a, b) = (Plane::luma_of(reference), Plane::luma_of(distorted));
    Ok(ssim_terms(&a, &b).0)
}

/// Smallest side accepted by [`ms_ssim`]: the window must still fit at the
/// coarsest of the five scales.
pub const MS_SSIM_MIN_SIDE: usize = SSIM_WINDOW << (MS_SSIM_WEIGHTS.len() - 1);

/// Five-scale SSIM: contrast-structure terms at the four finer scales and
/// the full SSIM at the coarsest, combined with the standard exponents.
/// Negative contrast-structure means are clamped to zero before
/// exponentiation.
pub fn ms_ssim<T: Scalar>(reference: &ImageBuffer<T>, distorted: &ImageBuffer<T>) -> Result<T> {
    check_dims(reference, distorted)?;
    require_size("MS-SSIM", reference.width(), reference.height(), MS_SSIM_MIN_SIDE)?;
    let mut a = Plane::luma_of(reference);
    let mut b = Plane::luma_of(distorted);
    let mut score = T::one();
    let last = MS_SSIM_WEIGHTS.len() - 1;
    for (scale, &weight) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (full, cs) = ssim_terms(&a, &b);
        let term = if scale == last { full } else { cs };
        score = score * term.max(T::zero()).powf(lit(weight));
        if scale < last {
            a = a.halve();
            b = b.halve();
        }
    }
    Ok(score)
}

/// Prewitt gradient magnitude with replicated borders.
fn prewitt_magnitude<T: Scalar>(p: &Plane<T>) -> Vec<T> {
    let (w, h) = (p.w, p.h);
    let at = |x: isize, y: isize| {
        p.v[Border::Replicate.index(y, h) * w + Border::Replicate.index(x, w)]
    };
    let third = lit::<T>(1.0 / 3.0);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut gx = T::zero();
            let mut gy = T::zero();
            for d in -1..=1 {
                gx += at(x + 1, y + d) - at(x - 1, y + d);
                gy += at(x + d, y + 1) - at(x + d, y - 1);
            }
            gx = gx * third;
            gy = gy * third;
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Gradient magnitude similarity deviation on luma scaled to `[0, 255]`,
/// after a 2×2 average and downsampling by two. Lower is better.
pub fn gmsd<T: Scalar>(reference: &ImageBuffer<T>, distorted: &ImageBuffer<T>) -> Result<T> {
    check_dims(reference, distorted)?;
    require_size("GMSD", reference.width(), reference.height(), 2)?;
    let scale = lit::<T>(255.0);
    let a = Plane::luma_of(reference).scaled(scale).halve();
    let b = Plane::luma_of(distorted).scaled(scale).halve();
    let (ga, gb) = (prewitt_magnitude(&a), prewitt_magnitude(&b));
    let c = lit::<T>(GMSD_C);
    let two = lit::<T>(2.0);
    let map: Vec<T> = ga
        .iter()
        .zip(&gb)
        .map(|(&m1, &m2)| (two * m1 * m2 + c) / (m1 * m1 + m2 * m2 + c))
        .collect();
    let n = map.len();
    if n < 2 {
        return Ok(T::zero());
    }
    let mean = map.iter().copied().sum::<T>() / from_usize(n);
    let ss = map.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
    Ok((ss / from_usize(n - 1)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::synth::synthetic_reference;
    use crate::Image;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noisy(img: &Image, sigma: f64, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sigma).unwrap();
        img.map(|v| (v + n.sample(&mut rng)).clamp(0.0, 1.0))
    }

    #[test]
    fn psnr_cases() {
        let a = Image::filled(8, 8, 3, 0.0).unwrap();
        let b = Image::filled(8, 8, 3, 1.0).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b).unwrap().abs() < 1e-12);
        let c = Image::filled(8, 8, 3, 0.1).unwrap();
        assert!((psnr(&a, &c).unwrap() - 20.0).abs() < 1e-9);
        let small = Image::filled(4, 8, 3, 0.0).unwrap();
        assert!(matches!(psnr(&a, &small), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn ssim_identity_and_constant_closed_form() {
        let x = synthetic_reference(40, 32, 1).unwrap();
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let a = Image::filled(20, 20, 1, 0.4).unwrap();
        let b = Image::filled(20, 20, 1, 0.6).unwrap();
        let c1 = 0.01f64 * 0.01;
        let expected = (2.0 * 0.4 * 0.6 + c1) / (0.16 + 0.36 + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
        // Closed form is 0.92309...
        assert!((expected - 0.92309).abs() < 1e-5);
    }

    #[test]
    fn ssim_symmetric() {
        let x = synthetic_reference(32, 32, 2).unwrap();
        let y = noisy(&x, 0.1, 3);
        let d = ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_per_window_brute_force() {
        let x = luma(&synthetic_reference(16, 16, 4).unwrap());
        let y = luma(&noisy(&synthetic_reference(16, 16, 4).unwrap(), 0.05, 5));
        let g: Vec<f64> = (-5..=5).map(|i: i32| (-(i * i) as f64 / 4.5).exp()).collect();
        let total: f64 = g.iter().sum::<f64>().powi(2);
        let (c1, c2) = (1e-4, 9e-4);
        let mut acc = 0.0;
        let mut count = 0.0;
        for oy in 0..6 {
            for ox in 0..6 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let wgt = g[i] * g[j] / total;
                        ma += wgt * x.get(ox + i, oy + j, 0);
                        mb += wgt * y.get(ox + i, oy + j, 0);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let wgt = g[i] * g[j] / total;
                        let da = x.get(ox + i, oy + j, 0) - ma;
                        let db = y.get(ox + i, oy + j, 0) - mb;
                        va += wgt * da * da;
                        vb += wgt * db * db;
                        cov += wgt * da * db;
                    }
                }
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        assert!((ssim(&x, &y).unwrap() - acc / count).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let a = Image::filled(10, 30, 1, 0.5).unwrap();
        assert!(matches!(ssim(&a, &a), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn ms_ssim_identity_constants_and_monotone_noise() {
        let x = synthetic_reference(192, 176, 6).unwrap();
        assert!((ms_ssim(&x, &x).unwrap() - 1.0).abs() < 1e-10);
        let a = Image::filled(176, 176, 1, 0.4).unwrap();
        let b = Image::filled(176, 176, 1, 0.6).unwrap();
        let c1 = 1e-4;
        let l: f64 = (2.0 * 0.24 + c1) / (0.52 + c1);
        assert!((ms_ssim(&a, &b).unwrap() - l.powf(MS_SSIM_WEIGHTS[4])).abs() < 1e-12);
        let scores: Vec<f64> = [0.02, 0.06, 0.10]
            .iter()
            .map(|&s| ms_ssim(&x, &noisy(&x, s, 7)).unwrap())
            .collect();
        assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
        let small = Image::filled(175, 200, 1, 0.5).unwrap();
        assert!(ms_ssim(&small, &small).is_err());
    }

    #[test]
    fn gmsd_cases() {
        let x = synthetic_reference(48, 40, 8).unwrap();
        assert!(gmsd(&x, &x).unwrap().abs() < 1e-12);
        let a = Image::filled(16, 16, 3, 0.2).unwrap();
        let b = Image::filled(16, 16, 3, 0.9).unwrap();
        assert!(gmsd(&a, &b).unwrap().abs() < 1e-12);
        assert!(gmsd(&x, &noisy(&x, 0.05, 9)).unwrap() > 0.0);
    }

    #[test]
    fn single_precision_agrees() {
        let x = synthetic_reference(32, 32, 10).unwrap();
        let y = noisy(&x, 0.05, 11);
        let (xf, yf) = (x.cast::<f32>(), y.cast::<f32>());
        assert!((ssim(&xf, &yf).unwrap() as f64 - ssim(&x, &y).unwrap()).abs() < 1e-4);
        assert!((gmsd(&xf, &yf).unwrap() as f64 - gmsd(&x, &y).unwrap()).abs() < 1e-4);
    }
}
