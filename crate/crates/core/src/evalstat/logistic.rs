use serde::{Deserialize, Serialize};

use super::srocc;
use crate::error::{Error, Result};
use crate::neuro::plcc;
use crate::scalar::Scalar;

const MAX_ITERATIONS: usize = 2000;
const TOLERANCE: f64 = 1e-10;

/// `s ≈ β1·(½ − 1/(1 + exp(β2·(o − β3)))) + β4·o + β5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit<T> {
    pub beta: [T; 5],
    /// Sum of squared residuals at the fitted parameters.
    pub residual: T,
}

fn sigmoid_part(b2: f64, b3: f64, o: f64) -> f64 {
    let z = b2 * (o - b3);
    // Written to stay finite for large |z|.
    if z >= 0.0 {
        0.5 - (-z).exp() / (1.0 + (-z).exp())
    } else {
        0.5 - 1.0 / (1.0 + z.exp())
    }
}

fn eval(b: &[f64; 5], o: f64) -> f64 {
    b[0] * sigmoid_part(b[1], b[2], o) + b[3] * o + b[4]
}

fn sse(b: &[f64; 5], o: &[f64], s: &[f64]) -> f64 {
    let v: f64 = o.iter().zip(s).map(|(&o, &s)| (eval(b, o) - s).powi(2)).sum();
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

impl<T: Scalar> LogisticFit<T> {
    pub fn map(&self, o: T) -> T {
        let b = self.beta.map(|v| v.to_f64().unwrap());
        T::from_f64(eval(&b, o.to_f64().unwrap())).unwrap()
    }

    pub fn map_all(&self, o: &[T]) -> Vec<T> {
        o.iter().map(|&v| self.map(v)).collect()
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn nelder_mead(f: impl Fn(&[f64; 5]) -> f64, start: [f64; 5], steps: [f64; 5]) -> [f64; 5] {
    let mut simplex: Vec<([f64; 5], f64)> = vec![(start, f(&start))];
    for i in 0..5 {
        let mut p = start;
        p[i] += steps[i];
        simplex.push((p, f(&p)));
    }
    for _ in 0..MAX_ITERATIONS {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex[1..]
            .iter()
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < TOLERANCE {
            break;
        }
        let mut centroid = [0.0; 5];
        for (p, _) in &simplex[..5] {
            for k in 0..5 {
                centroid[k] += p[k] / 5.0;
            }
        }
        let worst = simplex[5];
        let along = |t: f64| -> [f64; 5] { std::array::from_fn(|k| centroid[k] + t * (worst.0[k] - centroid[k])) };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            simplex[5] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[4].1 {
            simplex[5] = (reflected, fr);
        } else {
            let contracted = if fr < worst.1 { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            if fc < worst.1.min(fr) {
                simplex[5] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    let p: [f64; 5] = std::array::from_fn(|k| best[k] + 0.5 * (entry.0[k] - best[k]));
                    *entry = (p, f(&p));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0].0
}

/// Least-squares solution of the small system `a·x = b` given as normal
/// equations; `None` when singular.
fn solve_normal(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Best linear coefficients `(β1, β4, β5)` for fixed `(β2, β3)`; falls back
/// to a plain affine fit when the sigmoid column is collinear.
fn linear_polish(b: [f64; 5], o: &[f64], s: &[f64]) -> [f64; 5] {
    let g: Vec<f64> = o.iter().map(|&v| sigmoid_part(b[1], b[2], v)).collect();
    let cols: [&dyn Fn(usize) -> f64; 3] = [&|i| g[i], &|i| o[i], &|_| 1.0];
    let normal = |use_cols: &[usize]| {
        let a: Vec<Vec<f64>> = use_cols
            .iter()
            .map(|&p| use_cols.iter().map(|&q| (0..o.len()).map(|i| cols[p](i) * cols[q](i)).sum()).collect())
            .collect();
        let rhs: Vec<f64> = use_cols.iter().map(|&p| (0..o.len()).map(|i| cols[p](i) * s[i]).sum()).collect();
        solve_normal(a, rhs)
    };
    if let Some(x) = normal(&[0, 1, 2]) {
        return [x[0], b[1], b[2], x[1], x[2]];
    }
    match normal(&[1, 2]) {
        Some(x) => [0.0, b[1], b[2], x[0], x[1]],
        None => b,
    }
}

/// Fits the five-parameter logistic mapping from objective scores to
/// subjective scores by Nelder–Mead on the squared residual, followed by
/// an exact least-squares solve of the three linear coefficients.
pub fn fit_logistic5<T: Scalar>(objective: &[T], subjective: &[T]) -> Result<LogisticFit<T>> {
    if objective.len() != subjective.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} objective vs {} subjective scores",
            objective.len(),
            subjective.len()
        )));
    }
    if objective.len() < 5 {
        return Err(Error::invalid("logistic fit needs at least 5 points"));
    }
    let o: Vec<f64> = objective.iter().map(|v| v.to_f64().unwrap()).collect();
    let s: Vec<f64> = subjective.iter().map(|v| v.to_f64().unwrap()).collect();
    if o.iter().chain(&s).any(|v| !v.is_finite()) {
        return Err(Error::invalid("logistic fit needs finite scores"));
    }
    let mo = mean(&o);
    let std_o = (o.iter().map(|v| (v - mo).powi(2)).sum::<f64>() / (o.len() - 1) as f64).sqrt();
    if std_o == 0.0 {
        return Err(Error::Degenerate("objective scores are constant".into()));
    }
    let s_min = s.iter().copied().fold(f64::INFINITY, f64::min);
    let s_max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let orientation = match srocc(&o, &s) {
        Ok(r) if r < 0.0 => -1.0,
        _ => 1.0,
    };
    let start = [s_max - s_min, orientation / std_o, mo, 0.0, mean(&s)];
    let span = (s_max - s_min).max(1e-3);
    let steps = [0.1 * span, 0.1 * start[1].abs(), 0.1 * std_o, 0.1 * span / std_o, 0.1 * span];
    let objective_fn = |b: &[f64; 5]| sse(b, &o, &s);
    let simplex_best = nelder_mead(objective_fn, start, steps);
    let polished = linear_polish(simplex_best, &o, &s);
    let best = if sse(&polished, &o, &s) <= sse(&simplex_best, &o, &s) {
        polished
    } else {
        simplex_best
    };
    Ok(LogisticFit {
        beta: best.map(|v| T::from_f64(v).unwrap()),
        residual: T::from_f64(sse(&best, &o, &s)).unwrap(),
    })
}

/// Pearson correlation after logistic mapping of `objective`.
pub fn plcc_mapped<T: Scalar>(objective: &[T], subjective: &[T]) -> Result<T> {
    let fit = fit_logistic5(objective, subjective)?;
    plcc(&fit.map_all(objective), subjective)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Uniform};

    #[test]
    fn affine_data_is_fitted_exactly() {
        let o: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.1).collect();
        let s: Vec<f64> = o.iter().map(|v| 2.5 * v - 1.0).collect();
        assert!((plcc_mapped(&o, &s).unwrap() - 1.0).abs() < 1e-9);
        assert!((plcc_mapped(&o, &o).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_logistic_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = [4.0, 1.5, 0.3, 0.2, 3.0];
        let u = Uniform::new(-3.0, 3.0).unwrap();
        let noise = Normal::new(0.0, 0.01).unwrap();
        let o: Vec<f64> = (0..200).map(|_| u.sample(&mut rng)).collect();
        let s: Vec<f64> = o.iter().map(|&v| eval(&truth, v) + noise.sample(&mut rng)).collect();
        assert!(plcc_mapped(&o, &s).unwrap() >= 0.999);
    }

    #[test]
    fn squashed_and_reversed_data() {
        let o: Vec<f64> = (0..60).map(|i| i as f64 / 10.0 - 3.0).collect();
        let s: Vec<f64> = o.iter().map(|v| 1.0 / (1.0 + (-3.0 * v).exp())).collect();
        let raw = plcc(&o, &s).unwrap();
        let mapped = plcc_mapped(&o, &s).unwrap();
        assert!(mapped >= raw - 1e-9 && mapped > 0.999, "{raw} {mapped}");
        let rev: Vec<f64> = s.iter().map(|v| -v).collect();
        let mapped_rev = plcc_mapped(&o, &rev).unwrap();
        assert!((mapped_rev - mapped).abs() < 1e-6, "{mapped_rev} {mapped}");
    }

    #[test]
    fn refit_does_not_increase_residual() {
        let o: Vec<f64> = (0..30).map(|i| (i as f64).sqrt()).collect();
        let s: Vec<f64> = o.iter().enumerate().map(|(i, v)| v * v * 0.3 + (i % 3) as f64 * 0.1).collect();
        let fit = fit_logistic5(&o, &s).unwrap();
        let mapped = fit.map_all(&o);
        let refit = fit_logistic5(&o, &mapped).unwrap();
        assert!(refit.residual <= fit.residual + 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(fit_logistic5(&[1.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).is_err());
        assert!(fit_logistic5(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }
}
