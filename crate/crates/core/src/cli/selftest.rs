//! Fast internal consistency checks with known answers.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Ctx, SelftestArgs};
use crate::error::{Error, Result};
use crate::evalstat::srocc;
use crate::friqa::{gmsd, ssim};
use crate::imgcore::synth::synthetic_reference;
use crate::imgcore::ImageBuffer;
use crate::neuro::{build_mtl_head, build_regressor, gradient_check, verify_plcc_mse_equivalence, LossKind, TrainingData};
use crate::scorepipe::fit_he;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, outcome: Result<(bool, String)>) -> CheckResult {
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        name: name.into(),
        passed,
        detail,
    }
}

fn plcc_mse_identity(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..64);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        worst = worst.max(verify_plcc_mse_equivalence(&x, &y)?);
    }
    Ok((worst < 1e-10, format!("max residual {worst:.3e} over 1000 pairs")))
}

fn gradients(rng: &mut ChaCha8Rng, seed: u64) -> Result<(bool, String)> {
    let (n, dim, tasks) = (12, 8, 3);
    let x = Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0));
    let y = Array2::from_shape_fn((n, tasks), |_| rng.random_range(0.0..1.0));
    let y1 = y.column(0).to_owned().insert_axis(ndarray::Axis(1));
    let mtl = build_mtl_head::<f64>(dim, tasks, seed)?;
    let reg = build_regressor::<f64>(dim, seed)?;
    let mtl_data = TrainingData::new(x.view(), y.view())?;
    let reg_data = TrainingData::new(x.view(), y1.view())?;
    let mut worst = 0.0f64;
    for loss in [LossKind::Mse, LossKind::Mae, LossKind::Plcc] {
        worst = worst.max(gradient_check(&mtl, &mtl_data, loss, 20, seed)?);
        worst = worst.max(gradient_check(&reg, &reg_data, loss, 20, seed)?);
    }
    Ok((worst < 1e-5, format!("max relative error {worst:.3e}")))
}

fn metric_closed_forms(seed: u64) -> Result<(bool, String)> {
    let x = synthetic_reference(48, 40, seed)?;
    let s = ssim(&x, &x)?;
    let g = gmsd(&x, &x)?;
    let a = ImageBuffer::filled(20, 20, 1, 0.4f64)?;
    let b = ImageBuffer::filled(20, 20, 1, 0.6)?;
    let c1 = 1e-4f64;
    let expected = (2.0 * 0.4 * 0.6 + c1) / (0.16 + 0.36 + c1);
    let constant = ssim(&a, &b)?;
    let ok = (s - 1.0).abs() < 1e-12 && g.abs() < 1e-12 && (constant - expected).abs() < 1e-9;
    Ok((ok, format!("ssim(x,x)={s}, gmsd(x,x)={g}, constant ssim={constant:.12}")))
}

fn he_contract(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let (n, bins) = (20_000usize, 256usize);
    let mut values: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random::<f64>()).powi(3)).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let t = fit_he(&values, bins)?;
    let mapped = t.apply(&values);
    let counts = t.histogram(&values);
    let (lo, hi) = (values.len() / bins, values.len().div_ceil(bins));
    let flat = counts.iter().all(|&c| c >= lo && c <= hi);
    let rank = srocc(&values, &mapped)?;
    Ok((
        flat && (rank - 1.0).abs() < 1e-12,
        format!("bin counts in [{}, {}], srocc {rank}", counts.iter().min().unwrap(), counts.iter().max().unwrap()),
    ))
}

fn srocc_closed_form(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(3..40usize);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), rng);
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y: Vec<f64> = perm.iter().map(|&p| p as f64).collect();
        let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        let nf = n as f64;
        let closed = 1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0));
        worst = worst.max((srocc(&x, &y)? - closed).abs());
    }
    let hand: f64 = srocc(&[1.0, 2.0, 3.0], &[10.0, 20.0, 15.0])?;
    Ok((
        worst < 1e-12 && (hand - 0.5).abs() < 1e-12,
        format!("max deviation {worst:.3e}, hand case {hand}"),
    ))
}

/// Runs every check; none of them touches the file system.
pub fn run_checks(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        check("plcc-mse identity", plcc_mse_identity(&mut rng)),
        check("gradients", gradients(&mut rng, seed)),
        check("metric closed forms", metric_closed_forms(seed)),
        check("histogram equalization", he_contract(&mut rng)),
        check("srocc closed form", srocc_closed_form(&mut rng)),
    ]
}

pub fn selftest(ctx: &Ctx, flags: SelftestArgs) -> Result<()> {
    let a = ctx.resolve(&flags, "selftest")?;
    let seed = ctx.seed(a.seed);
    if ctx.dry_run {
        return ctx.print_plan("selftest", &a, &[], &[]);
    }
    let results = run_checks(seed);
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Error::Degenerate(format!("{failed} of {} self-checks failed", results.len())));
    }
    Ok(())
}
