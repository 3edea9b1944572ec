use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

/// Reference id to split, in the shuffled order the split was drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub assignment: IndexMap<String, Split>,
}

impl SplitAssignment {
    pub fn split_of(&self, reference_id: &str) -> Option<Split> {
        self.assignment.get(reference_id).copied()
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// `[train, val, test]` reference counts.
    pub fn counts(&self) -> [usize; 3] {
        Split::ALL.map(|s| self.assignment.values().filter(|&&v| v == s).count())
    }

    /// Row indices of `items` per split, given each item's reference id.
    /// Items with an unknown reference are an error.
    pub fn partition<'a>(&self, item_refs: impl IntoIterator<Item = &'a str>) -> Result<[Vec<usize>; 3]> {
        let mut out: [Vec<usize>; 3] = Default::default();
        for (i, r) in item_refs.into_iter().enumerate() {
            let s = self
                .split_of(r)
                .ok_or_else(|| Error::invalid(format!("reference {r:?} is not in the split assignment")))?;
            out[s as usize].push(i);
        }
        Ok(out)
    }
}

/// Shuffles the distinct reference ids with `seed` and cuts them into
/// train/val/test shares. Each share is floored and the leftover ids go to
/// train, then val, then test; a split with a positive ratio is never left
/// empty.
pub fn split_by_content(reference_ids: &[String], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must be non-negative with a positive sum")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must sum to 1")));
    }
    let mut ids: Vec<String> = reference_ids.to_vec();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 distinct references to split, got {n}")));
    }
    let mut counts = ratios.map(|r| (n as f64 * r / total + 1e-9).floor() as usize);
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut k = 0;
    while leftover > 0 {
        if ratios[k % 3] > 0.0 {
            counts[k % 3] += 1;
            leftover -= 1;
        }
        k += 1;
    }
    for s in 1..3 {
        if ratios[s] > 0.0 && counts[s] == 0 {
            let donor = (0..3).max_by_key(|&d| counts[d]).unwrap();
            counts[donor] -= 1;
            counts[s] += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut assignment = IndexMap::with_capacity(n);
    let mut it = ids.into_iter();
    for (s, &c) in Split::ALL.iter().zip(&counts) {
        for id in it.by_ref().take(c) {
            assignment.insert(id, *s);
        }
    }
    Ok(SplitAssignment { seed, assignment })
}

/// Correlations reported by one train/test run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub srocc: f64,
    pub plcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub srocc: f64,
    pub plcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub repetitions: usize,
    pub base_seed: u64,
    pub median_srocc: f64,
    pub median_plcc: f64,
    pub runs: Vec<RunRecord>,
}

/// Median of the finite values; the mean of the two middle ones for even
/// counts.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Runs `run` with seeds `base_seed..base_seed + repetitions` (in parallel,
/// results kept in seed order) and reports per-run scores and their medians.
pub fn repeat_eval<F>(repetitions: usize, base_seed: u64, run: F) -> Result<RepeatSummary>
where
    F: Fn(u64) -> Result<RunScores> + Sync,
{
    if repetitions == 0 {
        return Err(Error::invalid("repetitions must be positive"));
    }
    let runs: Vec<RunRecord> = (0..repetitions)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed + i as u64;
            let s = run(seed).map_err(|e| e.context(format!("run {i} (seed {seed})")))?;
            Ok(RunRecord {
                run: i,
                seed,
                srocc: s.srocc,
                plcc: s.plcc,
            })
        })
        .collect::<Result<_>>()?;
    let col = |f: fn(&RunRecord) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    let median_srocc = median(&col(|r| r.srocc)).ok_or_else(|| Error::Degenerate("no finite SROCC values".into()))?;
    let median_plcc = median(&col(|r| r.plcc)).ok_or_else(|| Error::Degenerate("no finite PLCC values".into()))?;
    Ok(RepeatSummary {
        repetitions,
        base_seed,
        median_srocc,
        median_plcc,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn refs(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("I{i:02}")).collect()
    }

    #[test]
    fn kadid_sized_split() {
        let ids = refs(81);
        for seed in 0..20 {
            let a = split_by_content(&ids, [0.6, 0.2, 0.2], seed).unwrap();
            assert_eq!(a.counts(), [49, 16, 16]);
            let all: HashSet<&str> = Split::ALL.iter().flat_map(|&s| a.ids(s)).collect();
            assert_eq!(all.len(), 81);
        }
    }

    #[test]
    fn deterministic_and_order_independent() {
        let ids = refs(30);
        let mut rev = ids.clone();
        rev.reverse();
        assert_eq!(split_by_content(&ids, [0.6, 0.2, 0.2], 5).unwrap(), split_by_content(&rev, [0.6, 0.2, 0.2], 5).unwrap());
        assert_ne!(split_by_content(&ids, [0.6, 0.2, 0.2], 5).unwrap(), split_by_content(&ids, [0.6, 0.2, 0.2], 6).unwrap());
    }

    #[test]
    fn small_and_invalid_inputs() {
        assert_eq!(split_by_content(&refs(3), [0.6, 0.2, 0.2], 0).unwrap().counts(), [1, 1, 1]);
        assert_eq!(split_by_content(&refs(10), [0.6, 0.2, 0.2], 0).unwrap().counts(), [6, 2, 2]);
        assert!(split_by_content(&refs(2), [0.6, 0.2, 0.2], 0).is_err());
        assert!(split_by_content(&refs(5), [-1.0, 0.2, 0.2], 0).is_err());
        assert!(split_by_content(&refs(5), [0.6, 0.2, 0.4], 0).is_err());
    }

    #[test]
    fn partition_by_reference() {
        let a = split_by_content(&refs(5), [0.6, 0.2, 0.2], 1).unwrap();
        let items = ["I00", "I01", "I00", "I04"];
        let p = a.partition(items).unwrap();
        assert_eq!(p.iter().map(Vec::len).sum::<usize>(), 4);
        assert!(a.partition(["nope"]).is_err());
    }

    #[test]
    fn repeat_eval_orders_runs_and_takes_medians() {
        let s = repeat_eval(4, 10, |seed| {
            Ok(RunScores {
                srocc: seed as f64,
                plcc: -(seed as f64),
            })
        })
        .unwrap();
        assert_eq!(s.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![10, 11, 12, 13]);
        assert_eq!(s.median_srocc, 11.5);
        assert_eq!(s.median_plcc, -11.5);
        assert!(repeat_eval(2, 0, |_| Err(Error::invalid("boom"))).is_err());
        assert_eq!(median(&[3.0, f64::NAN, 1.0, 2.0]), Some(2.0));
    }
}
