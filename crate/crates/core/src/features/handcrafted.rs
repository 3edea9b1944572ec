//! Stand-in for CNN activations: a small multi-scale filter bank whose
//! response maps are treated as activation blocks, one block per scale.

use std::path::Path;

use rayon::prelude::*;

use super::{mlsp_concat, ActivationBlock, FeatureStore};
use crate::distortion::DatasetManifest;
use crate::error::{Error, Result};
use crate::imgcore::{convolve_separable, gaussian_taps, luma, Border, ImageBuffer};
use crate::scalar::{lit, Scalar};

pub const HANDCRAFTED_SCALES: usize = 4;
const MAPS_PER_SCALE: usize = 12;
const MIN_SIDE: usize = 16;

fn halve<T: Scalar>(img: &ImageBuffer<T>) -> ImageBuffer<T> {
    let (w, h) = (img.width() / 2, img.height() / 2);
    let quarter = lit::<T>(0.25);
    let planes = img
        .planes()
        .map(|p| {
            let sw = img.width();
            (0..h)
                .flat_map(|y| {
                    (0..w).map(move |x| {
                        let i = 2 * y * sw + 2 * x;
                        (p[i] + p[i + 1] + p[i + sw] + p[i + sw + 1]) * quarter
                    })
                })
                .collect()
        })
        .collect();
    ImageBuffer::from_planes(w, h, planes).expect("halved planes are consistent")
}

fn scale_maps<T: Scalar>(img: &ImageBuffer<T>, taps: &[T]) -> Result<ActivationBlock<T>> {
    let (w, h) = img.dims();
    let y = luma(img);
    let blur = convolve_separable(&y, taps, taps, Border::Replicate)?;
    let y2 = y.map(|v| v * v);
    let blur2 = convolve_separable(&y2, taps, taps, Border::Replicate)?;
    let (yp, bp, b2p) = (y.plane(0), blur.plane(0), blur2.plane(0));
    let half = lit::<T>(0.5);
    let four = lit::<T>(4.0);
    let hw = w * h;
    let mut data = vec![T::zero(); MAPS_PER_SCALE * hw];
    for row in 0..h {
        let line = |r: usize| &yp[r * w..(r + 1) * w];
        let (up, cur, down) = (line(row.saturating_sub(1)), line(row), line((row + 1).min(h - 1)));
        for col in 0..w {
            let i = row * w + col;
            let (left, right) = (cur[col.saturating_sub(1)], cur[(col + 1).min(w - 1)]);
            let v = cur[col];
            let gx = (right - left) * half;
            let gy = (down[col] - up[col]) * half;
            let lap = right + left + down[col] + up[col] - four * v;
            let detail = v - bp[i];
            let chroma = if img.channels() >= 3 {
                let (r, g, b) = (img.plane(0)[i], img.plane(1)[i], img.plane(2)[i]);
                r.max(g).max(b) - r.min(g).min(b)
            } else {
                T::zero()
            };
            let grad2 = gx * gx + gy * gy;
            let maps = [
                v,
                v * v,
                gx.abs(),
                gy.abs(),
                grad2,
                grad2.sqrt(),
                lap.abs(),
                lap * lap,
                detail.abs(),
                detail * detail,
                (b2p[i] - bp[i] * bp[i]).max(T::zero()),
                chroma,
            ];
            for (c, m) in maps.into_iter().enumerate() {
                data[c * hw + i] = m;
            }
        }
    }
    ActivationBlock::new(MAPS_PER_SCALE, h, w, data)
}

/// Filter-bank response maps at `HANDCRAFTED_SCALES` dyadic scales.
pub fn handcrafted_blocks<T: Scalar>(img: &ImageBuffer<T>) -> Result<Vec<ActivationBlock<T>>> {
    let min = MIN_SIDE << (HANDCRAFTED_SCALES - 1);
    if img.width() < min || img.height() < min {
        return Err(Error::ImageTooSmall {
            operation: "handcrafted features",
            width: img.width(),
            height: img.height(),
            min,
        });
    }
    let taps = gaussian_taps::<T>(1.0, 3)?;
    let mut level = img.clone();
    let mut blocks = Vec::with_capacity(HANDCRAFTED_SCALES);
    for s in 0..HANDCRAFTED_SCALES {
        if s > 0 {
            level = halve(&level);
        }
        blocks.push(scale_maps(&level, &taps)?);
    }
    Ok(blocks)
}

/// Pooled multi-scale feature vector of one image.
pub fn handcrafted_features<T: Scalar>(img: &ImageBuffer<T>) -> Result<Vec<T>> {
    mlsp_concat(&handcrafted_blocks(img)?)
}

/// Handcrafted features for every distorted image of a manifest, keyed by
/// image id in manifest order.
pub fn extract_dataset(manifest: &DatasetManifest, dist_dir: &Path, workers: usize) -> Result<FeatureStore> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let rows: Vec<Result<Vec<f32>>> = pool.install(|| {
        manifest
            .records
            .par_iter()
            .map(|r| {
                let path = dist_dir.join(&r.dist_path);
                let img = ImageBuffer::<f64>::load(&path)?;
                let f = handcrafted_features(&img).map_err(|e| e.context(r.image_id.clone()))?;
                Ok(f.into_iter().map(|v| v as f32).collect())
            })
            .collect()
    });
    let mut store = FeatureStore::new(HANDCRAFTED_SCALES * MAPS_PER_SCALE)?;
    for (r, row) in manifest.records.iter().zip(rows) {
        store.insert(r.image_id.clone(), row?)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::synth::synthetic_reference;

    #[test]
    fn dims_and_flat_image() {
        let flat = ImageBuffer::<f64>::filled(128, 128, 3, 0.25).unwrap();
        let f = handcrafted_features(&flat).unwrap();
        assert_eq!(f.len(), HANDCRAFTED_SCALES * MAPS_PER_SCALE);
        // Mean and mean square of luma, everything else zero.
        for (s, chunk) in f.chunks(MAPS_PER_SCALE).enumerate() {
            assert!((chunk[0] - 0.25).abs() < 1e-12, "scale {s}");
            assert!((chunk[1] - 0.0625).abs() < 1e-12);
            assert!(chunk[2..].iter().all(|v| v.abs() < 1e-12), "{chunk:?}");
        }
        assert!(handcrafted_features(&ImageBuffer::<f64>::filled(100, 64, 1, 0.0).unwrap()).is_err());
    }

    #[test]
    fn noise_raises_detail_energy() {
        let clean = synthetic_reference(128, 128, 1).unwrap();
        let mut k = 0u64;
        let noisy = clean
            .map(|v| {
                k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                v + ((k >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 0.2
            })
            .clamp01();
        let a = handcrafted_features(&clean).unwrap();
        let b = handcrafted_features(&noisy).unwrap();
        assert!(b[9] > a[9] * 2.0, "{} vs {}", b[9], a[9]);
    }
}
