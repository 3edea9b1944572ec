use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_distortion_with_warnings, DistortionKind, DistortionParamTable, DistortionSpec, LEVELS};
use crate::error::{Error, Result};
use crate::imgcore::{resize_and_crop, TARGET_HEIGHT, TARGET_WIDTH};
use crate::Image;

/// Distorted versions generated per reference by the random plan.
pub const KADIS_VERSIONS_PER_REFERENCE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PlanKind {
    /// Every kind at every level for each reference.
    Kadid,
    /// Five randomly drawn (kind, level) pairs per reference.
    Kadis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_id: String,
    /// Reference file, relative to the reference directory.
    pub ref_path: String,
    /// Output file, relative to the output directory.
    pub dist_path: String,
    pub kind: DistortionKind,
    pub level: u8,
    pub seed: u64,
}

impl ManifestRecord {
    pub fn spec(&self) -> Result<DistortionSpec> {
        DistortionSpec::new(self.kind, self.level, self.seed)
    }

    /// Stem of the reference file, used as its content identifier.
    pub fn reference_id(&self) -> String {
        reference_stem(&self.ref_path)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

const MANIFEST_HEADER: [&str; 6] = ["image_id", "ref_path", "dist_path", "kind", "level", "seed"];

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks id uniqueness, level range and, when given, that every
    /// `ref_path` belongs to `refs`.
    pub fn validate(&self, refs: Option<&[String]>) -> Result<()> {
        let mut seen = HashSet::new();
        let known: Option<HashSet<&str>> = refs.map(|r| r.iter().map(String::as_str).collect());
        for r in &self.records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::invalid(format!("duplicate image_id {:?}", r.image_id)));
            }
            r.spec()?;
            if let Some(known) = &known {
                if !known.contains(r.ref_path.as_str()) {
                    return Err(Error::invalid(format!(
                        "record {:?} references unknown reference {:?}",
                        r.image_id, r.ref_path
                    )));
                }
            }
        }
        Ok(())
    }

    /// Distinct reference ids in first-appearance order.
    pub fn reference_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .map(ManifestRecord::reference_id)
            .filter(|id| seen.insert(id.clone()))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(MANIFEST_HEADER)?;
        for r in &self.records {
            out.write_record([
                r.image_id.clone(),
                r.ref_path.clone(),
                r.dist_path.clone(),
                r.kind.ordinal().to_string(),
                r.level.to_string(),
                r.seed.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<manifest>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header != MANIFEST_HEADER {
            return Err(Error::invalid(format!(
                "manifest header must be {}, got {}",
                MANIFEST_HEADER.join(","),
                header.join(",")
            )));
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let field = |i: usize| row.get(i).unwrap_or("");
            let parse_err = |what: &str| Error::invalid(format!("manifest line {line}: bad {what}"));
            let kind: DistortionKind = field(3).parse().map_err(|_| parse_err("kind"))?;
            records.push(ManifestRecord {
                image_id: field(0).to_owned(),
                ref_path: field(1).to_owned(),
                dist_path: field(2).to_owned(),
                kind,
                level: field(4).parse().map_err(|_| parse_err("level"))?,
                seed: field(5).parse().map_err(|_| parse_err("seed"))?,
            });
        }
        let m = Self { records };
        m.validate(None)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f)).map_err(|e| e.context(path.display().to_string()))
    }
}

/// Reference id encoded in a plan image id: `ref3_07_02` and `ref3_v1_07_02`
/// both give `ref3`. Ids without the plan suffix are their own reference.
pub fn reference_of(image_id: &str) -> &str {
    fn strip_numeric(s: &str, prefix: &str) -> Option<usize> {
        let cut = s.rfind('_')?;
        let tail = s[cut + 1..].strip_prefix(prefix)?;
        (!tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit())).then_some(cut)
    }
    let Some(a) = strip_numeric(image_id, "") else {
        return image_id;
    };
    let Some(b) = strip_numeric(&image_id[..a], "") else {
        return image_id;
    };
    let stem = &image_id[..b];
    let stem = match strip_numeric(stem, "v") {
        Some(c) => &stem[..c],
        None => stem,
    };
    if stem.is_empty() {
        image_id
    } else {
        stem
    }
}

fn reference_stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_owned())
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit record seed from (reference id, kind, level).
pub fn derive_seed(reference_id: &str, kind: DistortionKind, level: u8) -> u64 {
    let tag = (u64::from(kind.ordinal()) << 8) | u64::from(level);
    splitmix64(fnv1a64(reference_id.as_bytes()) ^ splitmix64(tag))
}

fn check_refs(refs: &[String]) -> Result<Vec<String>> {
    if refs.is_empty() {
        return Err(Error::invalid("reference list is empty"));
    }
    let stems: Vec<String> = refs.iter().map(|r| reference_stem(r)).collect();
    let mut seen = HashSet::new();
    for s in &stems {
        if !seen.insert(s) {
            return Err(Error::invalid(format!("two references share the id {s:?}")));
        }
    }
    Ok(stems)
}

/// All 25 kinds × 5 levels for every reference, in reference order.
pub fn generate_kadid_plan(refs: &[String]) -> Result<DatasetManifest> {
    let stems = check_refs(refs)?;
    let mut records = Vec::with_capacity(refs.len() * 125);
    for (r, stem) in refs.iter().zip(&stems) {
        for kind in DistortionKind::ALL {
            for level in 1..=LEVELS {
                let image_id = format!("{stem}_{:02}_{:02}", kind.ordinal(), level);
                records.push(ManifestRecord {
                    dist_path: format!("{image_id}.png"),
                    image_id,
                    ref_path: r.clone(),
                    kind,
                    level,
                    seed: derive_seed(stem, kind, level),
                });
            }
        }
    }
    Ok(DatasetManifest { records })
}

/// Five versions per reference with kind and level drawn uniformly.
pub fn generate_kadis_plan(refs: &[String], rng_seed: u64) -> Result<DatasetManifest> {
    let stems = check_refs(refs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut records = Vec::with_capacity(refs.len() * KADIS_VERSIONS_PER_REFERENCE);
    for (r, stem) in refs.iter().zip(&stems) {
        for version in 0..KADIS_VERSIONS_PER_REFERENCE {
            let kind = DistortionKind::ALL[rng.random_range(0..DistortionKind::ALL.len())];
            let level = rng.random_range(1..=LEVELS);
            let image_id = format!("{stem}_v{version}_{:02}_{:02}", kind.ordinal(), level);
            records.push(ManifestRecord {
                dist_path: format!("{image_id}.png"),
                image_id,
                ref_path: r.clone(),
                kind,
                level,
                seed: derive_seed(&format!("{stem}#{version}"), kind, level),
            });
        }
    }
    Ok(DatasetManifest { records })
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workers: usize,
    pub skip_existing: bool,
    /// References are resized and center-cropped to this size first; `None`
    /// keeps their native size.
    pub target: Option<(usize, usize)>,
    pub table: DistortionParamTable,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            skip_existing: false,
            target: Some((TARGET_WIDTH, TARGET_HEIGHT)),
            table: DistortionParamTable::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub written: usize,
    pub skipped: usize,
    /// `(image_id, message)` for records that could not be produced.
    pub failures: Vec<(String, String)>,
    pub warnings: Vec<(String, String)>,
}

enum Outcome {
    Written(Vec<String>),
    Skipped,
    Failed(String),
}

/// Produces every manifest record as a PNG under `out_dir`. Per-record
/// failures are collected in the report and do not abort the batch.
pub fn run_manifest(
    manifest: &DatasetManifest,
    ref_dir: &Path,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<RunReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    // Group by reference so each is decoded once; groups keep manifest order.
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, r) in manifest.records.iter().enumerate() {
        match groups.iter_mut().find(|(p, _)| *p == r.ref_path) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((r.ref_path.clone(), vec![i])),
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let outcomes: Vec<Vec<(usize, Outcome)>> = pool.install(|| {
        groups
            .par_iter()
            .map(|(ref_path, indices)| run_group(manifest, ref_dir, out_dir, ref_path, indices, options))
            .collect()
    });
    let mut ordered: Vec<(usize, Outcome)> = outcomes.into_iter().flatten().collect();
    ordered.sort_by_key(|(i, _)| *i);
    let mut report = RunReport::default();
    for (i, outcome) in ordered {
        let id = manifest.records[i].image_id.clone();
        match outcome {
            Outcome::Written(warnings) => {
                report.written += 1;
                report
                    .warnings
                    .extend(warnings.into_iter().map(|w| (id.clone(), w)));
            }
            Outcome::Skipped => report.skipped += 1,
            Outcome::Failed(msg) => {
                log::warn!("{id}: {msg}");
                report.failures.push((id, msg));
            }
        }
    }
    Ok(report)
}

fn load_reference(ref_dir: &Path, ref_path: &str, target: Option<(usize, usize)>) -> Result<Image> {
    let img = Image::load(ref_dir.join(ref_path))?;
    match target {
        Some((w, h)) => resize_and_crop(&img, w, h),
        None => Ok(img),
    }
}

fn run_group(
    manifest: &DatasetManifest,
    ref_dir: &Path,
    out_dir: &Path,
    ref_path: &str,
    indices: &[usize],
    options: &RunOptions,
) -> Vec<(usize, Outcome)> {
    let out_path = |i: usize| -> PathBuf { out_dir.join(&manifest.records[i].dist_path) };
    let pending: Vec<usize> = indices
        .iter()
        .copied()
        .filter(|&i| !(options.skip_existing && out_path(i).exists()))
        .collect();
    let mut outcomes: Vec<(usize, Outcome)> = indices
        .iter()
        .filter(|i| !pending.contains(i))
        .map(|&i| (i, Outcome::Skipped))
        .collect();
    if pending.is_empty() {
        return outcomes;
    }
    let reference = match load_reference(ref_dir, ref_path, options.target) {
        Ok(img) => img,
        Err(e) => {
            let msg = format!("reference {ref_path}: {e}");
            outcomes.extend(pending.into_iter().map(|i| (i, Outcome::Failed(msg.clone()))));
            return outcomes;
        }
    };
    for i in pending {
        let record = &manifest.records[i];
        let result = record
            .spec()
            .and_then(|spec| apply_distortion_with_warnings(&reference, spec, &options.table))
            .and_then(|applied| {
                applied.image.save_png(out_path(i))?;
                Ok(applied.warnings)
            });
        outcomes.push((
            i,
            match result {
                Ok(w) => Outcome::Written(w),
                Err(e) => Outcome::Failed(e.to_string()),
            },
        ));
    }
    outcomes
}
