//! Evaluation statistics: rank and mapped linear correlation, content-wise
//! splits, the repeated train/test protocol, and rater reliability.

mod logistic;
mod reliability;
mod split;

pub use logistic::{fit_logistic5, plcc_mapped, LogisticFit};
pub use reliability::{dmos, icc, intergroup_bootstrap, BootstrapSummary, RatingsTable};
pub use split::{median, repeat_eval, split_by_content, RepeatSummary, RunRecord, RunScores, Split, SplitAssignment};

use crate::error::Result;
use crate::neuro::plcc;
use crate::scalar::{from_usize, lit, Scalar};

/// 1-based ranks with ties sharing their average rank.
pub fn midranks<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![T::zero(); x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = from_usize::<T>(i + 1 + j) / lit(2.0);
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman rank-order correlation: Pearson correlation of midranks.
pub fn srocc<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    plcc(&midranks(x), &midranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srocc_cases() {
        assert_eq!(srocc(&[1.0, 2.0, 3.0], &[4.0, 5.0, 9.0]).unwrap(), 1.0);
        assert_eq!(srocc(&[1.0, 2.0, 3.0], &[9.0, 5.0, 4.0]).unwrap(), -1.0);
        assert!((srocc::<f64>(&[1.0, 2.0, 3.0], &[10.0, 20.0, 15.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(srocc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn ties_get_midranks() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
