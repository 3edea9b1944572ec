//! Score normalization: z-scoring and histogram equalization by empirical
//! CDF, fitted on one split and applied to any other.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::friqa::ScoreTable;
use crate::scalar::{from_usize, lit, Scalar};

/// Default number of bins in the equalization grid.
pub const DEFAULT_BINS: usize = 256;

fn mean_and_std<T: Scalar>(x: &[T]) -> Result<(T, T)> {
    if x.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 values, got {}", x.len())));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite value {v:?}")));
    }
    let n = from_usize::<T>(x.len());
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (n - T::one());
    if !(var > T::zero()) {
        return Err(Error::Degenerate("all values are equal (zero variance)".into()));
    }
    Ok((mean, var.sqrt()))
}

/// Standardizes to zero mean and unit sample standard deviation.
pub fn zscore<T: Scalar>(x: &[T]) -> Result<Vec<T>> {
    let (mean, std) = mean_and_std(x)?;
    Ok(x.iter().map(|&v| (v - mean) / std).collect())
}

/// Monotone map from a metric's training distribution to `[0, 1]`.
///
/// Knots are the distinct training values; each maps to its midrank divided
/// by the sample count, so the fitted data come out uniformly spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct HeTransform<T> {
    bins: usize,
    count: usize,
    knots: Vec<T>,
    quantiles: Vec<T>,
}

/// Fits an equalization transform on `train`; `bins` sets the grid reported
/// by [`HeTransform::histogram`].
pub fn fit_he<T: Scalar>(train: &[T], bins: usize) -> Result<HeTransform<T>> {
    if bins == 0 {
        return Err(Error::invalid("bin count must be positive"));
    }
    if let Some(v) = train.iter().find(|v| v.is_nan()) {
        return Err(Error::invalid(format!("cannot equalize {v:?}")));
    }
    let mut sorted = train.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let n = sorted.len();
    let mut knots = Vec::new();
    let mut quantiles = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        // 1-based ranks i+1..=j share the midrank (i+1+j)/2.
        let midrank = from_usize::<T>(i + 1 + j) / lit(2.0);
        knots.push(sorted[i]);
        quantiles.push(midrank / from_usize(n));
        i = j;
    }
    if knots.len() < 2 {
        return Err(Error::Degenerate(
            "equalization needs at least 2 distinct training values".into(),
        ));
    }
    Ok(HeTransform {
        bins,
        count: n,
        knots,
        quantiles,
    })
}

impl<T: Scalar> HeTransform<T> {
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Number of training samples the transform was fitted on.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn range(&self) -> (T, T) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    pub fn apply_one(&self, x: T) -> T {
        let k = &self.knots;
        if x.is_nan() {
            return x;
        }
        if x < k[0] {
            return T::zero();
        }
        if x > k[k.len() - 1] {
            return T::one();
        }
        // First knot >= x.
        let hi = k.partition_point(|&v| v < x);
        if k[hi] == x {
            return self.quantiles[hi];
        }
        let lo = hi - 1;
        let t = (x - k[lo]) / (k[hi] - k[lo]);
        self.quantiles[lo] + t * (self.quantiles[hi] - self.quantiles[lo])
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter().map(|&v| self.apply_one(v)).collect()
    }

    /// Counts of equalized `x` over `bins` equal-width bins of `[0, 1]`.
    pub fn histogram(&self, x: &[T]) -> Vec<usize> {
        let mut counts = vec![0; self.bins];
        let b = from_usize::<T>(self.bins);
        for v in self.apply(x) {
            let idx = (v * b).floor().to_usize().unwrap_or(0).min(self.bins - 1);
            counts[idx] += 1;
        }
        counts
    }
}

/// Convenience wrapper for [`HeTransform::apply`].
pub fn apply_he<T: Scalar>(t: &HeTransform<T>, x: &[T]) -> Vec<T> {
    t.apply(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMethod {
    He,
    Zscore,
}

/// Fitted per-column transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ColumnTransform {
    He(HeTransform<f64>),
    Zscore { mean: f64, std: f64 },
}

impl ColumnTransform {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ColumnTransform::He(t) => t.apply(x),
            ColumnTransform::Zscore { mean, std } => x.iter().map(|v| (v - mean) / std).collect(),
        }
    }
}

/// Per-metric transforms for a score table, in column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub method: NormalizeMethod,
    /// Number of rows the transforms were fitted on.
    pub fitted_rows: usize,
    pub columns: IndexMap<String, ColumnTransform>,
}

impl Normalizer {
    /// Fits one transform per column on the rows listed in `fit_ids`
    /// (all rows when `None`).
    pub fn fit(
        table: &ScoreTable,
        fit_ids: Option<&[String]>,
        method: NormalizeMethod,
        bins: usize,
    ) -> Result<Self> {
        let fit_table = match fit_ids {
            Some(ids) => table.select_rows(ids)?,
            None => table.clone(),
        };
        let mut columns = IndexMap::new();
        for (c, name) in fit_table.metrics().iter().enumerate() {
            let col = fit_table.column_at(c);
            let t = match method {
                NormalizeMethod::He => fit_he(col, bins).map(ColumnTransform::He),
                NormalizeMethod::Zscore => {
                    mean_and_std(col).map(|(mean, std)| ColumnTransform::Zscore { mean, std })
                }
            }
            .map_err(|e| e.context(format!("column {name:?}")))?;
            columns.insert(name.clone(), t);
        }
        Ok(Self {
            method,
            fitted_rows: fit_table.rows(),
            columns,
        })
    }

    /// Transforms every column of `table` that has a fitted transform;
    /// a column without one is an error.
    pub fn apply(&self, table: &ScoreTable) -> Result<ScoreTable> {
        let mut out = ScoreTable::new(table.image_ids().to_vec())?;
        for (c, name) in table.metrics().iter().enumerate() {
            let t = self
                .columns
                .get(name)
                .ok_or_else(|| Error::invalid(format!("no fitted transform for column {name:?}")))?;
            out.push_column(name, table.polarity(name).unwrap(), t.apply(table.column_at(c)))?;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::friqa::Polarity;

    #[test]
    fn zscore_cases() {
        assert_eq!(zscore(&[1.0, 2.0, 3.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
        let z = zscore(&[3.0f64, 9.0, 4.0, -2.0, 7.5]).unwrap();
        let again = zscore(&z).unwrap();
        for (a, b) in z.iter().zip(&again) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(zscore(&[5.0, 5.0, 5.0]), Err(Error::Degenerate(_))));
        assert!(zscore(&[1.0]).is_err());
    }

    #[test]
    fn he_rank_over_n() {
        let t = fit_he(&[10.0, 20.0, 30.0, 40.0], 256).unwrap();
        assert_eq!(t.apply(&[10.0, 20.0, 30.0, 40.0]), vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(t.apply(&[5.0, 45.0]), vec![0.0, 1.0]);
        assert_eq!(t.apply_one(25.0), 0.625);
    }

    #[test]
    fn he_ties_get_midrank() {
        let t = fit_he(&[1.0, 2.0, 2.0, 3.0], 4).unwrap();
        assert_eq!(t.apply(&[1.0, 2.0, 3.0]), vec![0.25, 0.625, 1.0]);
        assert!(fit_he(&[2.0, 2.0], 4).is_err());
    }

    #[test]
    fn he_json_round_trip() {
        let t = fit_he(&[0.3f32, 0.1, 0.7, 0.2], 8).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        let back: HeTransform<f32> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn normalizer_fits_on_subset() {
        let mut table = ScoreTable::new((0..6).map(|i| format!("i{i}")).collect()).unwrap();
        table
            .push_column("SSIM", Polarity::Higher, vec![0.1, 0.2, 0.3, 0.4, 0.9, 0.05])
            .unwrap();
        let train: Vec<String> = (0..4).map(|i| format!("i{i}")).collect();
        let norm = Normalizer::fit(&table, Some(&train), NormalizeMethod::He, 256).unwrap();
        assert_eq!(norm.fitted_rows, 4);
        let out = norm.apply(&table).unwrap();
        assert_eq!(out.column("SSIM").unwrap(), &[0.25, 0.5, 0.75, 1.0, 1.0, 0.0]);
        let z = Normalizer::fit(&table, None, NormalizeMethod::Zscore, 0).unwrap();
        let col = z.apply(&table).unwrap().column("SSIM").unwrap().to_vec();
        assert!(col.iter().sum::<f64>().abs() < 1e-12);
    }
}
