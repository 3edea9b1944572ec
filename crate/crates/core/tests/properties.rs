use proptest::prelude::*;

use iqa_core::distortion::{apply_distortion, DistortionKind, DistortionParamTable, DistortionSpec};
use iqa_core::evalstat::{plcc_mapped, split_by_content, srocc};
use iqa_core::features::{gap_pool, mlsp_concat, ActivationBlock, FeatureStore};
use iqa_core::friqa::{gmsd, ms_ssim, ssim};
use iqa_core::imgcore::synth::synthetic_reference;
use iqa_core::imgcore::{convolve, from_color_space, to_color_space, Border, ColorSpace, ImageBuffer, Kernel2D};
use iqa_core::neuro::{mse_loss, mtl_loss, plcc, plcc_loss, LossKind};
use iqa_core::scorepipe::{apply_he, fit_he, zscore};

fn image(width: usize, height: usize, samples: Vec<f64>) -> ImageBuffer<f64> {
    ImageBuffer::new(width, height, 3, samples).unwrap()
}

fn pixels(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n)
}

/// Distinct values (so rank statistics see no ties), in random order.
fn distinct(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(-100_000i64..100_000, len)
        .prop_map(|s| s.into_iter().map(|v| v as f64 / 100.0).collect::<Vec<_>>())
        .prop_shuffle()
}

fn varied(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len).prop_filter("needs spread", |v| {
        let (lo, hi) = v.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        hi - lo > 1e-3
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn color_spaces_round_trip(samples in pixels(3 * 6 * 5)) {
        let img = image(6, 5, samples);
        for space in [ColorSpace::Hsv, ColorSpace::Lab, ColorSpace::YCbCr] {
            let back = from_color_space(&to_color_space(&img, space).unwrap(), space).unwrap();
            let err = img.samples().iter().zip(back.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-4, "{space:?}: {err}");
        }
    }

    #[test]
    fn kernels_are_normalized(sigma in 0.3f64..10.0, radius in 0.5f64..20.0, length in 1.0f64..50.0, angle in 0.0f64..180.0) {
        for k in [Kernel2D::gaussian(sigma).unwrap(), Kernel2D::disk(radius).unwrap(), Kernel2D::line(length, angle).unwrap()] {
            prop_assert!((k.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn replicate_convolution_keeps_constants(v in 0.0f64..=1.0, sigma in 0.5f64..4.0) {
        let img = ImageBuffer::filled(13, 9, 3, v).unwrap();
        let out = convolve(&img, &Kernel2D::gaussian(sigma).unwrap(), Border::Replicate).unwrap();
        prop_assert!(out.samples().iter().all(|&s| (s - v).abs() < 1e-12));
    }

    #[test]
    fn ssim_and_gmsd_bounds(a in pixels(3 * 24 * 24), b in pixels(3 * 24 * 24)) {
        let (x, y) = (image(24, 24, a), image(24, 24, b));
        let s = ssim(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let g = gmsd(&x, &y).unwrap();
        prop_assert!(g >= 0.0);
        prop_assert_eq!(gmsd(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn he_is_monotone_and_bounded(train in varied(2..80), probe in prop::collection::vec(-1e6f64..1e6, 1..40)) {
        let t = fit_he(&train, 256).unwrap();
        let mut sorted = probe.clone();
        sorted.sort_by(f64::total_cmp);
        let mapped = apply_he(&t, &sorted);
        prop_assert!(mapped.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(mapped.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn he_preserves_ranks_without_ties(train in distinct(3..120)) {
        let t = fit_he(&train, 256).unwrap();
        prop_assert_eq!(srocc(&train, &t.apply(&train)).unwrap(), 1.0);
    }

    #[test]
    fn zscore_affine_invariance(x in varied(2..60), a in prop_oneof![-20.0f64..-0.1, 0.1f64..20.0], b in -100.0f64..100.0) {
        let z = zscore(&x).unwrap();
        let za = zscore(&x.iter().map(|v| a * v + b).collect::<Vec<_>>()).unwrap();
        for (p, q) in z.iter().zip(&za) {
            prop_assert!((a.signum() * p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn plcc_loss_ignores_scale_and_shift(pred in varied(2..50), seed in 0u64..1000, a in 0.01f64..100.0, b in -100.0f64..100.0) {
        let target: Vec<f64> = pred.iter().enumerate().map(|(i, p)| p.sin() + ((i as u64 * 7 + seed) % 11) as f64).collect();
        prop_assume!(target.iter().any(|&t| (t - target[0]).abs() > 1e-6));
        let (l0, _) = plcc_loss(&pred, &target).unwrap();
        let (l1, _) = plcc_loss(&pred.iter().map(|p| a * p + b).collect::<Vec<_>>(), &target).unwrap();
        prop_assert!((l0 - l1).abs() < 1e-10);
    }

    #[test]
    fn identical_tasks_match_single_task(pred in varied(2..30), target in varied(2..30), k in 1usize..6) {
        let n = pred.len().min(target.len());
        let (p, t) = (&pred[..n], &target[..n]);
        prop_assume!(t.iter().any(|&v| (v - t[0]).abs() > 1e-6));
        for kind in [LossKind::Mse, LossKind::Mae, LossKind::Plcc] {
            let single = mtl_loss(&[(p, t)], None, kind, None).unwrap().0;
            let tasks = vec![(p, t); k];
            prop_assert_eq!(mtl_loss(&tasks, None, kind, None).unwrap().0, single);
        }
        prop_assert_eq!(mtl_loss(&[(p, t)], None, LossKind::Mse, None).unwrap().0, mse_loss(p, t).unwrap().0);
    }

    #[test]
    fn gap_pool_is_linear(
        dims in (1usize..5, 1usize..5, 1usize..5),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let (c, h, w) = dims;
        let n = c * h * w;
        let gen = |s: u64| (0..n).map(|i| ((s.wrapping_mul(31).wrapping_add(i as u64 * 17)) % 97) as f64 / 9.0).collect::<Vec<_>>();
        let (x, y) = (gen(seed), gen(seed ^ 0xabc));
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let px = gap_pool(&ActivationBlock::new(c, h, w, x).unwrap());
        let py = gap_pool(&ActivationBlock::new(c, h, w, y).unwrap());
        let pm = gap_pool(&ActivationBlock::new(c, h, w, mix).unwrap());
        for i in 0..c {
            prop_assert!((pm[i] - (a * px[i] + b * py[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn mlsp_concat_follows_block_order(channels in prop::collection::vec(1usize..6, 1..6)) {
        let blocks: Vec<ActivationBlock<f64>> = channels
            .iter()
            .enumerate()
            .map(|(k, &c)| ActivationBlock::new(c, 2, 2, (0..c * 4).map(|i| (k * 100 + i / 4) as f64).collect()).unwrap())
            .collect();
        let v = mlsp_concat(&blocks).unwrap();
        prop_assert_eq!(v.len(), channels.iter().sum::<usize>());
        let mut rev = blocks.clone();
        rev.reverse();
        let r = mlsp_concat(&rev).unwrap();
        let first = channels[0];
        prop_assert_eq!(&r[r.len() - first..], &v[..first]);
    }

    #[test]
    fn feature_store_round_trip(
        dim in 1usize..16,
        rows in prop::collection::vec((any::<u32>(), prop::collection::vec(any::<f32>(), 16)), 0..10),
    ) {
        let mut store = FeatureStore::new(dim).unwrap();
        for (i, (tag, values)) in rows.iter().enumerate() {
            store.insert(format!("img{i}_{tag}"), values[..dim].to_vec()).unwrap();
        }
        let back = FeatureStore::from_bytes(&store.to_bytes()).unwrap();
        prop_assert_eq!(back.len(), store.len());
        for (id, v) in store.iter() {
            let w = back.get(id).unwrap();
            prop_assert!(v.iter().zip(w).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn srocc_invariant_under_monotone_maps(x in distinct(3..60), y in distinct(3..60)) {
        let n = x.len().min(y.len());
        let (x, y) = (&x[..n], &y[..n]);
        let base = srocc(x, y).unwrap();
        let cubed: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
        let squashed: Vec<f64> = y.iter().map(|v| v / 50.0 + (v / 50.0).tanh()).collect();
        prop_assert_eq!(srocc(&cubed, &squashed).unwrap(), base);
        let t = fit_he(x, 256).unwrap();
        prop_assert_eq!(srocc(&t.apply(x), y).unwrap(), base);
    }

    #[test]
    fn logistic_mapping_never_loses_linear_fit(o in distinct(8..60), noise in prop::collection::vec(-0.05f64..0.05, 60), slope in 0.2f64..3.0) {
        let s: Vec<f64> = o.iter().zip(&noise).map(|(v, e)| (slope * v / 100.0).tanh() + e).collect();
        prop_assume!(s.iter().any(|&v| (v - s[0]).abs() > 1e-6));
        let raw = plcc(&o, &s).unwrap().abs();
        prop_assert!(plcc_mapped(&o, &s).unwrap() >= raw - 1e-9);
    }

    #[test]
    fn content_split_keeps_references_together(refs in 3usize..40, per_ref in 1usize..6, seed in any::<u64>()) {
        let ids: Vec<String> = (0..refs).map(|r| format!("R{r}")).collect();
        let a = split_by_content(&ids, [0.6, 0.2, 0.2], seed).unwrap();
        let items: Vec<String> = (0..refs * per_ref).map(|i| format!("R{}", i / per_ref)).collect();
        let parts = a.partition(items.iter().map(String::as_str)).unwrap();
        for (s, rows) in parts.iter().enumerate() {
            for &i in rows {
                prop_assert_eq!(a.split_of(&items[i]).map(|x| x as usize), Some(s));
            }
        }
        prop_assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), items.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 4, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn distortions_preserve_dims_range_and_determinism(img_seed in 0u64..1000, level in 1u8..=5, seed in any::<u64>()) {
        let img = synthetic_reference(64, 48, img_seed).unwrap();
        let table = DistortionParamTable::default();
        for kind in DistortionKind::ALL {
            let spec = DistortionSpec::new(kind, level, seed).unwrap();
            let out = apply_distortion(&img, spec, &table).unwrap();
            prop_assert!(out.same_dims(&img), "{kind:?}");
            prop_assert!(out.samples().iter().all(|v| (0.0..=1.0).contains(v)), "{kind:?}");
            prop_assert_eq!(&apply_distortion(&img, spec, &table).unwrap(), &out);
        }
    }

    #[test]
    fn ms_ssim_bounded(seed in 0u64..1000, sigma in 0.01f64..0.3) {
        let x = synthetic_reference(176, 176, seed).unwrap();
        let y = x.map(|v| (v + sigma * ((v * 1e4).sin())).clamp(0.0, 1.0));
        let m = ms_ssim(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&m));
        prop_assert!((ms_ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }
}
