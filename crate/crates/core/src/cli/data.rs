//! Data-producing subcommands: references, distortions, scores,
//! normalization and feature stores.

use std::path::{Path, PathBuf};

use super::config::{write_json, write_provenance, Provenance};
use super::{ensure_parent, ratios_or_default, require, require_input, Ctx};
use super::{DistortArgs, FeaturesGapArgs, FeaturesHandcraftedArgs, NormalizeArgs, ScoreArgs, SynthRefsArgs};
use crate::distortion::{
    generate_kadid_plan, generate_kadis_plan, run_manifest, DatasetManifest, DistortionParamTable, PlanKind,
    RunOptions,
};
use crate::error::{Error, Result};
use crate::evalstat::{split_by_content, Split};
use crate::features::{extract_dataset, ingest_activation_dir, write_store, SHAPES_FILE};
use crate::friqa::{ingest_external_scores, score_dataset, MetricId, ScoreTable};
use crate::imgcore::synth::synthetic_reference;
use crate::imgcore::{TARGET_HEIGHT, TARGET_WIDTH};
use crate::scorepipe::{NormalizeMethod, Normalizer, DEFAULT_BINS};

pub const MANIFEST_FILE: &str = "manifest.csv";
const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "tif"];

/// Image file names in `dir`, sorted.
fn list_references(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter(|e| {
            e.path()
                .extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::invalid(format!("no reference images in {}", dir.display())));
    }
    Ok(names)
}

pub fn synth_refs(ctx: &Ctx, flags: SynthRefsArgs) -> Result<()> {
    let mut a = ctx.resolve(&flags, "synth_refs")?;
    let out = require(a.out.clone(), "out", "synth_refs")?;
    let count = *a.count.get_or_insert(10);
    let width = *a.width.get_or_insert(TARGET_WIDTH);
    let height = *a.height.get_or_insert(TARGET_HEIGHT);
    let seed = ctx.seed(a.seed);
    a.seed = Some(seed);
    if count == 0 {
        return Err(Error::invalid("--count must be positive"));
    }
    let names: Vec<String> = (0..count).map(|i| format!("ref{i:03}.png")).collect();
    let outputs: Vec<PathBuf> = names.iter().map(|n| out.join(n)).collect();
    if ctx.dry_run {
        return ctx.print_plan("synth-refs", &a, &[], &outputs);
    }
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for (i, path) in outputs.iter().enumerate() {
        let img_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
        synthetic_reference(width, height, img_seed)?.save_png(path)?;
    }
    write_provenance(&out.join("references"), &Provenance::new("synth-refs", seed, &a)?)?;
    log::info!("wrote {count} references to {}", out.display());
    Ok(())
}

pub fn distort(ctx: &Ctx, flags: DistortArgs) -> Result<()> {
    let mut a = ctx.resolve(&flags, "distort")?;
    let refs_dir = require(a.refs.clone(), "refs", "distort")?;
    let out = require(a.out.clone(), "out", "distort")?;
    let plan_kind = *a.plan.get_or_insert(PlanKind::Kadid);
    let seed = ctx.seed(a.seed);
    a.seed = Some(seed);
    require_input(&refs_dir, "reference directory")?;
    let table = match &a.params {
        Some(p) => DistortionParamTable::from_json_file(p)?,
        None => DistortionParamTable::default(),
    };
    table.validate()?;
    let refs = list_references(&refs_dir)?;
    let manifest = match plan_kind {
        PlanKind::Kadid => generate_kadid_plan(&refs)?,
        PlanKind::Kadis => generate_kadis_plan(&refs, seed)?,
    };
    let manifest_path = out.join(MANIFEST_FILE);
    if ctx.dry_run {
        log::info!("{} references → {} images", refs.len(), manifest.len());
        return ctx.print_plan("distort", &a, &[&refs_dir], &[manifest_path, out.clone()]);
    }
    let options = RunOptions {
        workers: ctx.workers,
        skip_existing: a.skip_existing.unwrap_or(false),
        target: if a.native_size.unwrap_or(false) {
            None
        } else {
            Some((TARGET_WIDTH, TARGET_HEIGHT))
        },
        table,
    };
    let report = run_manifest(&manifest, &refs_dir, &out, &options)?;
    manifest.save(&manifest_path)?;
    let mut prov = Provenance::new("distort", seed, &a)?.to_value();
    prov["report"] = serde_json::to_value(&report)?;
    write_json(&super::provenance_path(&manifest_path), &prov)?;
    log::info!(
        "{} written, {} skipped, {} failed ({} warnings)",
        report.written,
        report.skipped,
        report.failures.len(),
        report.warnings.len()
    );
    if let Some((id, msg)) = report.failures.first() {
        return Err(Error::Task {
            context: format!("{} of {} images failed, first {id}", report.failures.len(), manifest.len()),
            source: Box::new(Error::Degenerate(msg.clone())),
        });
    }
    Ok(())
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

pub fn score(ctx: &Ctx, flags: ScoreArgs) -> Result<()> {
    let a = ctx.resolve(&flags, "score")?;
    let manifest_path = require(a.manifest.clone(), "manifest", "score")?;
    let refs_dir = require(a.refs.clone(), "refs", "score")?;
    let out = require(a.out.clone(), "out", "score")?;
    let dist_dir = a.dist.clone().unwrap_or_else(|| manifest_dir(&manifest_path));
    require_input(&manifest_path, "manifest")?;
    require_input(&refs_dir, "reference directory")?;
    let metrics: Vec<MetricId> = match &a.metrics {
        Some(names) => names.iter().map(|n| n.parse()).collect::<Result<_>>()?,
        None => MetricId::BUILT_IN.to_vec(),
    };
    if let Some(ext) = &a.external {
        require_input(ext, "external score CSV")?;
    }
    let manifest = DatasetManifest::load(&manifest_path)?;
    if ctx.dry_run {
        let mut inputs = vec![manifest_path.as_path(), refs_dir.as_path(), dist_dir.as_path()];
        inputs.extend(a.external.as_deref());
        return ctx.print_plan("score", &a, &inputs, &[out]);
    }
    let (mut table, failures) = score_dataset(&manifest, &refs_dir, &dist_dir, &metrics, ctx.workers)?;
    for (id, msg) in &failures {
        log::warn!("{id}: {msg}");
    }
    let mut join = None;
    if let Some(ext) = &a.external {
        let (merged, report) = ingest_external_scores(ext, &table, a.allow_partial.unwrap_or(false))?;
        table = merged;
        join = Some(report);
    }
    ensure_parent(&out)?;
    table.save(&out)?;
    let mut prov = Provenance::new("score", ctx.seed(None), &a)?.to_value();
    prov["failures"] = serde_json::to_value(&failures)?;
    prov["join"] = serde_json::to_value(&join)?;
    write_json(&super::provenance_path(&out), &prov)?;
    log::info!("scored {} images with {} metrics", table.rows(), table.cols());
    if !failures.is_empty() {
        return Err(Error::Task {
            context: format!("{} images could not be scored", failures.len()),
            source: Box::new(Error::Degenerate(failures[0].1.clone())),
        });
    }
    Ok(())
}

/// Image ids whose reference falls in the training split.
fn training_ids(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<Vec<String>> {
    let split = split_by_content(&manifest.reference_ids(), ratios, seed)?;
    Ok(manifest
        .records
        .iter()
        .filter(|r| split.split_of(&r.reference_id()) == Some(Split::Train))
        .map(|r| r.image_id.clone())
        .collect())
}

pub fn normalize(ctx: &Ctx, flags: NormalizeArgs) -> Result<()> {
    let mut a = ctx.resolve(&flags, "normalize")?;
    let scores = require(a.scores.clone(), "scores", "normalize")?;
    let out = require(a.out.clone(), "out", "normalize")?;
    let method = *a.method.get_or_insert(NormalizeMethod::He);
    let bins = *a.bins.get_or_insert(DEFAULT_BINS);
    let transform_path = a.transform.clone().unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".transform.json");
        PathBuf::from(s)
    });
    a.transform = Some(transform_path.clone());
    let seed = ctx.seed(a.seed);
    a.seed = Some(seed);
    require_input(&scores, "score table")?;
    let table = ScoreTable::load(&scores)?;
    let fit_ids = match &a.manifest {
        Some(m) => {
            require_input(m, "manifest")?;
            let split_seed = *a.split_seed.get_or_insert(seed);
            let ratios = ratios_or_default(a.ratios.clone())?;
            Some(training_ids(&DatasetManifest::load(m)?, ratios, split_seed)?)
        }
        None => None,
    };
    if ctx.dry_run {
        return ctx.print_plan("normalize", &a, &[&scores], &[out, transform_path]);
    }
    let normalizer = Normalizer::fit(&table, fit_ids.as_deref(), method, bins)?;
    let normalized = normalizer.apply(&table)?;
    ensure_parent(&out)?;
    normalized.save(&out)?;
    normalizer.save(&transform_path)?;
    let prov = Provenance::new("normalize", seed, &a)?;
    write_provenance(&out, &prov)?;
    write_provenance(&transform_path, &prov)?;
    log::info!("normalized {} columns fitted on {} rows", normalizer.columns.len(), normalizer.fitted_rows);
    Ok(())
}

pub fn features_gap(ctx: &Ctx, flags: FeaturesGapArgs) -> Result<()> {
    let a = ctx.resolve(&flags, "features_gap")?;
    let dir = require(a.activations.clone(), "activations", "features_gap")?;
    let out = require(a.out.clone(), "out", "features_gap")?;
    require_input(&dir.join(SHAPES_FILE), "shape sidecar")?;
    if ctx.dry_run {
        return ctx.print_plan("features gap", &a, &[&dir], &[out]);
    }
    let store = ingest_activation_dir(&dir)?;
    ensure_parent(&out)?;
    write_store(&store, &out)?;
    write_provenance(&out, &Provenance::new("features gap", ctx.seed(None), &a)?)?;
    log::info!("pooled {} records of dimension {}", store.len(), store.dim());
    Ok(())
}

pub fn features_handcrafted(ctx: &Ctx, flags: FeaturesHandcraftedArgs) -> Result<()> {
    let a = ctx.resolve(&flags, "features_handcrafted")?;
    let manifest_path = require(a.manifest.clone(), "manifest", "features_handcrafted")?;
    let out = require(a.out.clone(), "out", "features_handcrafted")?;
    let dist_dir = a.dist.clone().unwrap_or_else(|| manifest_dir(&manifest_path));
    require_input(&manifest_path, "manifest")?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    if ctx.dry_run {
        return ctx.print_plan("features handcrafted", &a, &[&manifest_path, &dist_dir], &[out]);
    }
    let store = extract_dataset(&manifest, &dist_dir, ctx.workers)?;
    ensure_parent(&out)?;
    write_store(&store, &out)?;
    write_provenance(&out, &Provenance::new("features handcrafted", ctx.seed(None), &a)?)?;
    log::info!("extracted {} records of dimension {}", store.len(), store.dim());
    Ok(())
}
