use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{gmsd, ms_ssim, psnr, ssim};
use crate::distortion::DatasetManifest;
use crate::error::{Error, Result};
use crate::imgcore::resize_and_crop;
use crate::Image;

/// Whether larger metric values mean better quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Higher,
    Lower,
}

/// A score column: one of the built-in metrics or an externally computed one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MetricId {
    Psnr,
    Ssim,
    MsSsim,
    Gmsd,
    External(String),
}

impl MetricId {
    pub const BUILT_IN: [MetricId; 4] = [MetricId::Psnr, MetricId::Ssim, MetricId::MsSsim, MetricId::Gmsd];

    pub fn name(&self) -> &str {
        match self {
            MetricId::Psnr => "PSNR",
            MetricId::Ssim => "SSIM",
            MetricId::MsSsim => "MSSSIM",
            MetricId::Gmsd => "GMSD",
            MetricId::External(name) => name,
        }
    }

    pub fn polarity(&self) -> Polarity {
        match self {
            MetricId::Gmsd => Polarity::Lower,
            _ => Polarity::Higher,
        }
    }

    /// Computes a built-in metric; external metrics cannot be computed here.
    pub fn compute(&self, reference: &Image, distorted: &Image) -> Result<f64> {
        match self {
            MetricId::Psnr => psnr(reference, distorted),
            MetricId::Ssim => ssim(reference, distorted),
            MetricId::MsSsim => ms_ssim(reference, distorted),
            MetricId::Gmsd => gmsd(reference, distorted),
            MetricId::External(name) => Err(Error::invalid(format!(
                "metric {name:?} is not built in; ingest it from a CSV instead"
            ))),
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    /// Built-in names are matched case-insensitively (`ms-ssim` and
    /// `ms_ssim` also work); anything else becomes an external column.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::invalid("empty metric name"));
        }
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        Ok(match key.to_ascii_uppercase().as_str() {
            "PSNR" => MetricId::Psnr,
            "SSIM" => MetricId::Ssim,
            "MSSSIM" => MetricId::MsSsim,
            "GMSD" => MetricId::Gmsd,
            _ => MetricId::External(s.to_owned()),
        })
    }
}

/// Dense image × metric score matrix, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    image_ids: Vec<String>,
    metrics: Vec<String>,
    polarity: Vec<Polarity>,
    columns: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn new(image_ids: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for id in &image_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate image_id {id:?}")));
            }
        }
        Ok(Self {
            image_ids,
            metrics: Vec::new(),
            polarity: Vec::new(),
            columns: Vec::new(),
        })
    }

    pub fn push_column(&mut self, name: &str, polarity: Polarity, values: Vec<f64>) -> Result<()> {
        if name.is_empty() || name == "image_id" {
            return Err(Error::invalid(format!("invalid metric column name {name:?}")));
        }
        if self.metrics.iter().any(|m| m == name) {
            return Err(Error::invalid(format!("metric column {name:?} already present")));
        }
        if values.len() != self.image_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "column {name:?} has {} values for {} images",
                values.len(),
                self.image_ids.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::invalid(format!(
                "column {name:?} has a NaN for {:?}",
                self.image_ids[i]
            )));
        }
        self.metrics.push(name.to_owned());
        self.polarity.push(polarity);
        self.columns.push(values);
        Ok(())
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn metrics(&self) -> &[String] {
        &self.metrics
    }

    pub fn rows(&self) -> usize {
        self.image_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.metrics.len()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let i = self.metrics.iter().position(|m| m == name)?;
        Some(&self.columns[i])
    }

    pub fn column_at(&self, index: usize) -> &[f64] {
        &self.columns[index]
    }

    pub fn polarity(&self, name: &str) -> Option<Polarity> {
        let i = self.metrics.iter().position(|m| m == name)?;
        Some(self.polarity[i])
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn row_index(&self) -> HashMap<&str, usize> {
        self.image_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Keeps only `names`, in that order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let mut out = Self::new(self.image_ids.clone())?;
        for name in names {
            let col = self
                .column(name)
                .ok_or_else(|| Error::invalid(format!("score table has no column {name:?}")))?;
            out.push_column(name, self.polarity(name).unwrap(), col.to_vec())?;
        }
        Ok(out)
    }

    /// Keeps the rows whose ids are listed, in the listed order.
    pub fn select_rows(&self, ids: &[String]) -> Result<Self> {
        let index = self.row_index();
        let rows: Vec<usize> = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("score table has no row {id:?}")))
            })
            .collect::<Result<_>>()?;
        let mut out = Self::new(ids.to_vec())?;
        for (c, name) in self.metrics.iter().enumerate() {
            out.push_column(name, self.polarity[c], rows.iter().map(|&r| self.columns[c][r]).collect())?;
        }
        Ok(out)
    }

    /// `{metric: "higher"|"lower"}` in column order.
    pub fn polarity_map(&self) -> IndexMap<String, Polarity> {
        self.metrics.iter().cloned().zip(self.polarity.iter().copied()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["image_id".to_owned()];
        header.extend(self.metrics.iter().cloned());
        out.write_record(&header)?;
        for (r, id) in self.image_ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.columns.iter().map(|c| format_score(c[r])));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("<scores>", e))?;
        Ok(())
    }

    /// Parses a score CSV; every column defaults to higher-is-better.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let (ids, names, columns) = parse_score_csv(r)?;
        let mut table = Self::new(ids)?;
        for (name, col) in names.iter().zip(columns) {
            let polarity = name.parse::<MetricId>()?.polarity();
            table.push_column(name, polarity, col)?;
        }
        Ok(table)
    }

    /// Writes the CSV and its polarity sidecar (see [`polarity_path`]).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let side = polarity_path(path);
        let json = serde_json::to_string_pretty(&self.polarity_map())?;
        std::fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
    }

    /// Reads the CSV and, when present, its polarity sidecar.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = Self::read_csv(std::io::BufReader::new(f)).map_err(|e| e.context(path.display().to_string()))?;
        let side = polarity_path(path);
        if side.exists() {
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let map: IndexMap<String, Polarity> = serde_json::from_str(&text)?;
            for (name, p) in map {
                if let Some(i) = table.metrics.iter().position(|m| *m == name) {
                    table.polarity[i] = p;
                }
            }
        }
        Ok(table)
    }
}

/// Sidecar path for a score CSV: `scores.csv` → `scores.polarity.json`.
pub fn polarity_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("polarity.json")
}

/// Shortest round-trip formatting; infinities become `inf` / `-inf`.
pub fn format_score(v: f64) -> String {
    format!("{v}")
}

type ParsedCsv = (Vec<String>, Vec<String>, Vec<Vec<f64>>);

fn parse_score_csv<R: Read>(r: R) -> Result<ParsedCsv> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_owned()).collect();
    let id_col = header
        .iter()
        .position(|h| h == "image_id")
        .ok_or_else(|| Error::invalid("score CSV has no image_id column"))?;
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != id_col)
        .map(|(_, h)| h.clone())
        .collect();
    let mut ids = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        ids.push(row.get(id_col).unwrap_or("").trim().to_owned());
        let mut c = 0;
        for (i, cell) in row.iter().enumerate() {
            if i == id_col {
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::invalid(format!(
                    "line {line}, column {:?}: {cell:?} is not a number",
                    names[c]
                ))
            })?;
            if v.is_nan() {
                return Err(Error::invalid(format!("line {line}, column {:?}: NaN", names[c])));
            }
            columns[c].push(v);
            c += 1;
        }
    }
    if ids.is_empty() {
        return Err(Error::invalid("no data rows"));
    }
    Ok((ids, names, columns))
}

/// Outcome of joining an external score CSV onto a table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct JoinReport {
    /// Table ids absent from the CSV (dropped from the merged table).
    pub missing_in_csv: Vec<String>,
    /// CSV ids absent from the table (ignored).
    pub unknown_in_csv: Vec<String>,
}

/// Inner-joins the metric columns of `csv_path` onto `table`. Any id that
/// fails to match is an error unless `allow_partial` is set, in which case
/// the merge keeps the common rows in table order.
pub fn ingest_external_scores(
    csv_path: &Path,
    table: &ScoreTable,
    allow_partial: bool,
) -> Result<(ScoreTable, JoinReport)> {
    let f = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let ctx = |e: Error| e.context(csv_path.display().to_string());
    let (ids, names, columns) = parse_score_csv(std::io::BufReader::new(f)).map_err(ctx)?;
    let mut csv_index = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if csv_index.insert(id.as_str(), i).is_some() {
            return Err(ctx(Error::invalid(format!("duplicate image_id {id:?}"))));
        }
    }
    let table_index = table.row_index();
    let report = JoinReport {
        missing_in_csv: table
            .image_ids
            .iter()
            .filter(|id| !csv_index.contains_key(id.as_str()))
            .cloned()
            .collect(),
        unknown_in_csv: ids
            .iter()
            .filter(|id| !table_index.contains_key(id.as_str()))
            .cloned()
            .collect(),
    };
    if !allow_partial && !(report.missing_in_csv.is_empty() && report.unknown_in_csv.is_empty()) {
        let sample = |v: &[String]| v.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
        return Err(ctx(Error::invalid(format!(
            "id join failed: {} table ids missing from the CSV [{}], {} CSV ids not in the table [{}]; \
             pass --allow-partial to keep the intersection",
            report.missing_in_csv.len(),
            sample(&report.missing_in_csv),
            report.unknown_in_csv.len(),
            sample(&report.unknown_in_csv)
        ))));
    }
    let keep: Vec<String> = table
        .image_ids
        .iter()
        .filter(|id| csv_index.contains_key(id.as_str()))
        .cloned()
        .collect();
    if keep.is_empty() {
        return Err(ctx(Error::invalid("no image ids in common with the score table")));
    }
    let mut merged = table.select_rows(&keep)?;
    for (name, col) in names.iter().zip(&columns) {
        let values = keep.iter().map(|id| col[csv_index[id.as_str()]]).collect();
        let polarity = name.parse::<MetricId>()?.polarity();
        merged.push_column(name, polarity, values).map_err(ctx)?;
    }
    Ok((merged, report))
}

/// Scores every manifest record with `metrics`. References are decoded once
/// and, when their size differs from the distorted image, resized and
/// center-cropped to match. Unreadable records are reported and left out.
pub fn score_dataset(
    manifest: &DatasetManifest,
    ref_dir: &Path,
    dist_dir: &Path,
    metrics: &[MetricId],
    workers: usize,
) -> Result<(ScoreTable, Vec<(String, String)>)> {
    if metrics.is_empty() {
        return Err(Error::invalid("no metrics requested"));
    }
    let mut names = HashSet::new();
    for m in metrics {
        if let MetricId::External(name) = m {
            return Err(Error::invalid(format!("metric {name:?} is not built in")));
        }
        if !names.insert(m.name()) {
            return Err(Error::invalid(format!("metric {m} requested twice")));
        }
    }
    let mut groups: IndexMap<&str, Vec<usize>> = IndexMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        groups.entry(r.ref_path.as_str()).or_default().push(i);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let groups: Vec<(&str, Vec<usize>)> = groups.into_iter().collect();
    let scored: Vec<Vec<(usize, Result<Vec<f64>, String>)>> = pool.install(|| {
        groups
            .par_iter()
            .map(|(ref_path, indices)| {
                let reference = Image::load(ref_dir.join(ref_path));
                indices
                    .iter()
                    .map(|&i| {
                        let record = &manifest.records[i];
                        let row = match &reference {
                            Ok(reference) => score_pair(reference, &dist_dir.join(&record.dist_path), metrics),
                            Err(e) => Err(Error::invalid(format!("reference {ref_path}: {e}"))),
                        };
                        (i, row.map_err(|e| e.to_string()))
                    })
                    .collect()
            })
            .collect()
    });
    let mut rows: Vec<(usize, Result<Vec<f64>, String>)> = scored.into_iter().flatten().collect();
    rows.sort_by_key(|(i, _)| *i);
    let mut ids = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); metrics.len()];
    let mut failures = Vec::new();
    for (i, row) in rows {
        let id = manifest.records[i].image_id.clone();
        match row {
            Ok(v) => {
                ids.push(id);
                for (col, x) in values.iter_mut().zip(v) {
                    col.push(x);
                }
            }
            Err(msg) => {
                log::warn!("skipping {id}: {msg}");
                failures.push((id, msg));
            }
        }
    }
    let mut table = ScoreTable::new(ids)?;
    for (m, col) in metrics.iter().zip(values) {
        table.push_column(m.name(), m.polarity(), col)?;
    }
    Ok((table, failures))
}

fn score_pair(reference: &Image, dist_path: &Path, metrics: &[MetricId]) -> Result<Vec<f64>> {
    let distorted = Image::load(dist_path)?;
    let aligned;
    let reference = if reference.same_dims(&distorted) {
        reference
    } else {
        aligned = resize_and_crop(reference, distorted.width(), distorted.height())?;
        &aligned
    };
    metrics.iter().map(|m| m.compute(reference, &distorted)).collect()
}
