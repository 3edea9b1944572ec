use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, Scalar};
use crate::scorepipe::zscore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Mae,
    Plcc,
}

impl LossKind {
    pub fn evaluate<T: Scalar>(self, pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
        match self {
            LossKind::Mse => mse_loss(pred, target),
            LossKind::Mae => mae_loss(pred, target),
            LossKind::Plcc => plcc_loss(pred, target),
        }
    }
}

fn check_pair<T>(pred: &[T], target: &[T], min: usize) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.len() < min {
        return Err(Error::invalid(format!("need at least {min} samples, got {}", pred.len())));
    }
    Ok(())
}

/// Centered values and their sum of squares.
fn centered<T: Scalar>(x: &[T]) -> (Vec<T>, T) {
    let mean = x.iter().copied().sum::<T>() / from_usize(x.len());
    let d: Vec<T> = x.iter().map(|&v| v - mean).collect();
    let ss = d.iter().map(|&v| v * v).sum();
    (d, ss)
}

/// Pearson correlation with sample normalization.
pub fn plcc<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    check_pair(x, y, 2)?;
    let (dx, sxx) = centered(x);
    let (dy, syy) = centered(y);
    if !(sxx > T::zero() && syy > T::zero()) {
        return Err(Error::Degenerate("correlation of a constant vector".into()));
    }
    let sxy: T = dx.iter().zip(&dy).map(|(&a, &b)| a * b).sum();
    Ok((sxy / (sxx * syy).sqrt()).max(-T::one()).min(T::one()))
}

pub fn mse_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    check_pair(pred, target, 1)?;
    let n = from_usize::<T>(pred.len());
    let two = lit::<T>(2.0);
    let resid: Vec<T> = pred.iter().zip(target).map(|(&p, &t)| p - t).collect();
    let loss = resid.iter().map(|&r| r * r).sum::<T>() / n;
    Ok((loss, resid.into_iter().map(|r| two * r / n).collect()))
}

/// Mean absolute error; the subgradient at a zero residual is 0.
pub fn mae_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    check_pair(pred, target, 1)?;
    let n = from_usize::<T>(pred.len());
    let resid: Vec<T> = pred.iter().zip(target).map(|(&p, &t)| p - t).collect();
    let loss = resid.iter().map(|r| r.abs()).sum::<T>() / n;
    let grad = resid
        .into_iter()
        .map(|r| {
            if r > T::zero() {
                T::one() / n
            } else if r < T::zero() {
                -T::one() / n
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((loss, grad))
}

/// `(1 - PLCC) / 2` over the batch, with its gradient in `pred`.
///
/// A constant target batch is an error. Constant predictions (a network
/// that has collapsed) give loss 0.5 and a gradient pointing along the
/// centered targets so that optimization can leave the flat point.
pub fn plcc_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    check_pair(pred, target, 2)?;
    let (dy, syy) = centered(target);
    if !(syy > T::zero()) {
        return Err(Error::Degenerate(
            "target batch is constant; PLCC loss needs varied targets (use larger or shuffled batches)".into(),
        ));
    }
    let (dx, sxx) = centered(pred);
    let half = lit::<T>(0.5);
    if !(sxx > T::zero()) {
        let n1 = from_usize::<T>(pred.len() - 1);
        let scale = half / (n1 * syy).sqrt();
        return Ok((half, dy.iter().map(|&v| -scale * v).collect()));
    }
    let norm = (sxx * syy).sqrt();
    let sxy: T = dx.iter().zip(&dy).map(|(&a, &b)| a * b).sum();
    let r = sxy / norm;
    let loss = (T::one() - r) * half;
    let grad = dx
        .iter()
        .zip(&dy)
        .map(|(&a, &b)| -half * (b / norm - r * a / sxx))
        .collect();
    Ok((loss, grad))
}

/// Weighted sum of per-task losses; weights default to `1/K`. Returns the
/// total and each task's weighted gradient. The default total is a running
/// mean, so `K` identical tasks reproduce the single-task loss bit for bit.
pub fn mtl_loss<T: Scalar>(
    tasks: &[(&[T], &[T])],
    weights: Option<&[T]>,
    kind: LossKind,
    names: Option<&[String]>,
) -> Result<(T, Vec<Vec<T>>)> {
    if tasks.is_empty() {
        return Err(Error::invalid("multi-task loss needs at least one task"));
    }
    let k = tasks.len();
    let uniform = vec![T::one() / from_usize(k); k];
    let weights = weights.unwrap_or(&uniform);
    if weights.len() != k {
        return Err(Error::DimensionMismatch(format!("{} task weights for {k} tasks", weights.len())));
    }
    let running_mean = weights.as_ptr() == uniform.as_ptr();
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(k);
    for (i, ((pred, target), &w)) in tasks.iter().zip(weights).enumerate() {
        let (loss, grad) = kind.evaluate(pred, target).map_err(|e| {
            let name = names.and_then(|n| n.get(i)).cloned().unwrap_or_else(|| format!("#{i}"));
            e.context(format!("task {name}"))
        })?;
        if running_mean {
            total += (loss - total) / from_usize(i + 1);
        } else {
            total += w * loss;
        }
        grads.push(grad.into_iter().map(|g| g * w).collect());
    }
    Ok((total, grads))
}

/// `|L_PLCC(x, y) − N/(4(N−1)) · L_MSE(z(x), z(y))|`, which vanishes
/// identically: PLCC loss is a scaled MSE between z-scores.
pub fn verify_plcc_mse_equivalence<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    check_pair(x, y, 2)?;
    let (zx, zy) = (zscore(x)?, zscore(y)?);
    let r = plcc(x, y)?;
    let plcc_loss = (T::one() - r) * lit(0.5);
    let (mse, _) = mse_loss(&zx, &zy)?;
    let n = from_usize::<T>(x.len());
    let scaled = lit::<T>(0.25) * n / (n - T::one()) * mse;
    Ok((plcc_loss - scaled).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plcc_cases() {
        assert!((plcc::<f64>(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((plcc::<f64>(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((plcc::<f64>(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
        assert!(plcc(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn plcc_loss_cases() {
        let y = [0.3f64, -1.0, 2.0, 0.5];
        assert!(plcc_loss(&y, &y).unwrap().0.abs() < 1e-15);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((plcc_loss(&neg, &y).unwrap().0 - 1.0).abs() < 1e-15);
        let (l, _) = plcc_loss::<f64>(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((l - 0.1).abs() < 1e-15);
        let err = plcc_loss(&[1.0, 2.0], &[3.0, 3.0]).unwrap_err();
        assert!(err.to_string().contains("larger or shuffled"));
    }

    #[test]
    fn collapsed_predictions_still_get_a_gradient() {
        let (l, g) = plcc_loss(&[0.0, 0.0, 0.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(l, 0.5);
        assert!(g[0] > 0.0 && g[2] < 0.0);
    }

    #[test]
    fn mse_mae_cases() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        assert_eq!(mse_loss(&[2.0, 3.0], &[1.0, 2.0]).unwrap().0, 1.0);
        assert_eq!(mae_loss(&[2.0, 3.0], &[1.0, 2.0]).unwrap().0, 1.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 3.0]).unwrap().0, 5.0);
        assert_eq!(mae_loss(&[0.0, 0.0], &[1.0, 3.0]).unwrap().0, 2.0);
        assert_eq!(mae_loss(&[1.0, 0.0], &[1.0, 3.0]).unwrap().1, vec![0.0, -0.5]);
    }

    #[test]
    fn mtl_weighting() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 3.0, 2.0, 4.0];
        let (single, _) = plcc_loss(&a, &b).unwrap();
        let tasks = [(&a[..], &b[..]); 3];
        let (multi, grads) = mtl_loss(&tasks, None, LossKind::Plcc, None).unwrap();
        assert_eq!(multi, single);
        assert_eq!(grads.len(), 3);
        // Losses 0.2 and 0.4 average to 0.3.
        let t1 = ([0.2f64, 0.2], [0.0, 0.0]);
        let t2 = ([0.4, 0.4], [0.0, 0.0]);
        let (l, _) = mtl_loss(&[(&t1.0[..], &t1.1[..]), (&t2.0[..], &t2.1[..])], None, LossKind::Mae, None).unwrap();
        assert!((l - 0.3).abs() < 1e-15);
        let names = vec!["SSIM".to_owned(), "GMSD".to_owned()];
        let flat = [2.0, 2.0];
        let bad = [(&a[..2], &b[..2]), (&a[..2], &flat[..])];
        let err = mtl_loss(&bad, None, LossKind::Plcc, Some(&names)).unwrap_err();
        assert!(err.to_string().contains("GMSD"), "{err}");
    }

    #[test]
    fn equivalence_hand_case() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 4.0];
        let zx = zscore(&x).unwrap();
        let zy = zscore(&y).unwrap();
        assert!((mse_loss(&zx, &zy).unwrap().0 - 0.3).abs() < 1e-14);
        assert!(verify_plcc_mse_equivalence(&x, &y).unwrap() < 1e-15);
        assert_eq!(verify_plcc_mse_equivalence(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let pred = [0.3f64, -1.2, 0.8, 2.1, -0.4];
        let target = [0.1, -0.7, 1.5, 1.9, 0.2];
        for kind in [LossKind::Mse, LossKind::Mae, LossKind::Plcc] {
            let (_, g) = kind.evaluate(&pred, &target).unwrap();
            for i in 0..pred.len() {
                let h = 1e-6;
                let mut p = pred;
                p[i] += h;
                let up = kind.evaluate(&p, &target).unwrap().0;
                p[i] -= 2.0 * h;
                let down = kind.evaluate(&p, &target).unwrap().0;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7, "{kind:?} {i}: {fd} vs {}", g[i]);
            }
        }
    }
}
