use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::srocc;
use crate::error::{Error, Result};

/// Per-image absolute category ratings on the 1..=5 scale, in file order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatingsTable {
    pub ratings: IndexMap<String, Vec<u8>>,
}

#[derive(Deserialize)]
struct RatingRow {
    image_id: String,
    rating: f64,
}

fn check_rating(v: f64) -> Option<u8> {
    (v.fract() == 0.0 && (1.0..=5.0).contains(&v)).then_some(v as u8)
}

impl RatingsTable {
    pub fn push(&mut self, image_id: impl Into<String>, rating: u8) -> Result<()> {
        if !(1..=5).contains(&rating) {
            return Err(Error::invalid(format!("rating {rating} outside 1..=5")));
        }
        self.ratings.entry(image_id.into()).or_default().push(rating);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn total_ratings(&self) -> usize {
        self.ratings.values().map(Vec::len).sum()
    }

    /// Reads `image_id,rating` rows; a rating that is not an integer in
    /// 1..=5 is reported with its line number.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
        let mut table = Self::default();
        for (i, row) in reader.deserialize::<RatingRow>().enumerate() {
            let row = row.map_err(|e| Error::data(path, e.to_string()))?;
            let r = check_rating(row.rating).ok_or_else(|| {
                Error::data(path, format!("line {}: rating {} outside 1..=5", i + 2, row.rating))
            })?;
            table.ratings.entry(row.image_id).or_default().push(r);
        }
        if table.is_empty() {
            return Err(Error::data(path, "no ratings"));
        }
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
        w.write_record(["image_id", "rating"])?;
        for (id, rs) in &self.ratings {
            for r in rs {
                w.write_record([id.as_str(), &r.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Mean opinion score per image.
    pub fn dmos_all(&self) -> Result<IndexMap<String, f64>> {
        self.ratings
            .iter()
            .map(|(id, rs)| Ok((id.clone(), dmos(rs).map_err(|e| e.context(id.clone()))?)))
            .collect()
    }

    /// Ratings per image as floats, for [`icc`].
    pub fn as_items(&self) -> Vec<Vec<f64>> {
        self.ratings.values().map(|rs| rs.iter().map(|&r| r as f64).collect()).collect()
    }
}

/// Mean of an image's ratings.
pub fn dmos(ratings: &[u8]) -> Result<f64> {
    if ratings.is_empty() {
        return Err(Error::invalid("no ratings"));
    }
    if let Some(bad) = ratings.iter().find(|r| !(1..=5).contains(*r)) {
        return Err(Error::invalid(format!("rating {bad} outside 1..=5")));
    }
    Ok(ratings.iter().map(|&r| r as f64).sum::<f64>() / ratings.len() as f64)
}

/// One-way random-effects ICC(1,1). Each item lists the ratings it
/// received, so missing cells of an items × raters matrix are simply
/// absent; unequal counts use the adjusted group size
/// `k0 = (N − Σ nᵢ²/N) / (a − 1)`.
pub fn icc(items: &[Vec<f64>]) -> Result<f64> {
    let items: Vec<&Vec<f64>> = items.iter().filter(|v| !v.is_empty()).collect();
    let a = items.len();
    let n_total: usize = items.iter().map(|v| v.len()).sum();
    let repeated = items.iter().filter(|v| v.len() >= 2).count();
    if repeated < 2 {
        return Err(Error::invalid(format!(
            "ICC needs at least 2 items with 2 or more ratings, got {repeated}"
        )));
    }
    if items.iter().flat_map(|v| v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::invalid("ratings must be finite"));
    }
    let n = n_total as f64;
    let grand = items.iter().flat_map(|v| v.iter()).sum::<f64>() / n;
    let (mut ssb, mut ssw) = (0.0, 0.0);
    for v in &items {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        ssb += v.len() as f64 * (m - grand).powi(2);
        ssw += v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let bms = ssb / (a - 1) as f64;
    let wms = ssw / (n - a as f64);
    let sum_sq: f64 = items.iter().map(|v| (v.len() as f64).powi(2)).sum();
    let k0 = (n - sum_sq / n) / (a - 1) as f64;
    let denom = bms + (k0 - 1.0) * wms;
    if denom <= 0.0 {
        return Err(Error::Degenerate("all ratings are identical".into()));
    }
    Ok((bms - wms) / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub resamples: usize,
    pub seed: u64,
    pub images: usize,
    pub srocc: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// Agreement between two disjoint rater groups: each resample splits every
/// image's ratings into two random halves, computes both mean scores and
/// compares them; the metrics are averaged over resamples.
pub fn intergroup_bootstrap(table: &RatingsTable, resamples: usize, seed: u64) -> Result<BootstrapSummary> {
    if resamples == 0 {
        return Err(Error::invalid("resamples must be positive"));
    }
    if let Some((id, _)) = table.ratings.iter().find(|(_, r)| r.len() < 2) {
        return Err(Error::invalid(format!("image {id:?} has fewer than 2 ratings and cannot be split")));
    }
    let usable: Vec<&Vec<u8>> = table.ratings.values().collect();
    if usable.len() < 3 {
        return Err(Error::invalid(format!("need at least 3 rated images, got {}", usable.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum_srocc, mut sum_mae, mut sum_rmse) = (0.0, 0.0, 0.0);
    let mut valid = 0usize;
    let mut a = Vec::with_capacity(usable.len());
    let mut b = Vec::with_capacity(usable.len());
    let mut scratch = Vec::new();
    for _ in 0..resamples {
        a.clear();
        b.clear();
        for rs in &usable {
            scratch.clear();
            scratch.extend_from_slice(rs);
            scratch.shuffle(&mut rng);
            let half = scratch.len() / 2;
            a.push(dmos(&scratch[..half])?);
            b.push(dmos(&scratch[half..])?);
        }
        let n = a.len() as f64;
        sum_mae += a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
        sum_rmse += (a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt();
        // A resample where one half is constant has no defined rank
        // correlation; it still counts toward the error metrics.
        if let Ok(r) = srocc(&a, &b) {
            sum_srocc += r;
            valid += 1;
        }
    }
    if valid == 0 {
        return Err(Error::Degenerate("every resample had constant group means".into()));
    }
    Ok(BootstrapSummary {
        resamples,
        seed,
        images: usable.len(),
        srocc: sum_srocc / valid as f64,
        mae: sum_mae / resamples as f64,
        rmse: sum_rmse / resamples as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn dmos_is_mean_and_validates() {
        assert_eq!(dmos(&[1, 2, 3, 4]).unwrap(), 2.5);
        assert!(dmos(&[]).is_err());
        assert!(dmos(&[0, 3]).is_err());
        assert!(dmos(&[6]).is_err());
    }

    #[test]
    fn icc_known_table() {
        // Balanced table checked by hand: BMS = 3, WMS = 1, k = 3.
        let items = vec![vec![1.0, 2.0, 3.0], vec![3.0, 4.0, 5.0], vec![2.0, 3.0, 4.0]];
        let expected = (3.0 - 1.0) / (3.0 + 2.0 * 1.0);
        assert!((icc(&items).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn icc_recovers_variance_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let between = Normal::new(0.0, 1.0).unwrap();
        let within = Normal::new(0.0, 0.5f64.sqrt()).unwrap();
        let items: Vec<Vec<f64>> = (0..400)
            .map(|_| {
                let mu = between.sample(&mut rng);
                let n = rng.random_range(20..40);
                (0..n).map(|_| mu + within.sample(&mut rng)).collect()
            })
            .collect();
        let v = icc(&items).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn icc_perfect_agreement_and_missing_cells() {
        assert_eq!(icc(&[vec![2.0; 4], vec![5.0; 3], vec![1.0; 2]]).unwrap(), 1.0);
        assert!(icc(&[vec![1.0, 2.0], vec![4.0, 4.0], vec![3.0]]).is_ok());
    }

    #[test]
    fn icc_degenerate() {
        assert!(icc(&[vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
        assert!(icc(&[vec![1.0, 2.0]]).is_err());
        assert!(icc(&[vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn csv_round_trip_and_bad_rating() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut t = RatingsTable::default();
        for (id, r) in [("a", 1), ("b", 5), ("a", 3)] {
            t.push(id, r).unwrap();
        }
        t.write_csv(&path).unwrap();
        let back = RatingsTable::read_csv(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.dmos_all().unwrap()["a"], 2.0);
        std::fs::write(&path, "image_id,rating\na,3\nb,7\n").unwrap();
        let err = RatingsTable::read_csv(&path).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn bootstrap_exact_agreement_and_single_rating() {
        let mut t = RatingsTable::default();
        for (i, q) in [1u8, 3, 4, 2, 5].into_iter().enumerate() {
            for _ in 0..6 {
                t.push(format!("img{i}"), q).unwrap();
            }
        }
        let s = intergroup_bootstrap(&t, 10, 0).unwrap();
        assert_eq!((s.srocc, s.mae, s.rmse), (1.0, 0.0, 0.0));
        t.push("lonely", 3).unwrap();
        assert!(intergroup_bootstrap(&t, 10, 0).unwrap_err().to_string().contains("lonely"));
    }

    #[test]
    fn bootstrap_consistent_raters_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut t = RatingsTable::default();
        for i in 0..50 {
            let q = 1 + (i % 5) as u8;
            for _ in 0..20 {
                let r = if rng.random::<f64>() < 0.9 { q } else { q.saturating_sub(1).max(1) };
                t.push(format!("img{i}"), r).unwrap();
            }
        }
        let s = intergroup_bootstrap(&t, 20, 1).unwrap();
        assert!(s.srocc > 0.9 && s.mae < 0.3, "{s:?}");
        assert_eq!(s, intergroup_bootstrap(&t, 20, 1).unwrap());
    }
}
