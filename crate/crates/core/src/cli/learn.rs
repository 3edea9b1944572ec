//! Training, evaluation and reliability subcommands.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{write_json, write_provenance, Provenance};
use super::{ensure_parent, ratios_or_default, require, require_input, Ctx};
use super::{EvaluateArgs, ReliabilityArgs, TrainMtlArgs, TrainRegressorArgs};
use crate::distortion::{reference_of, DatasetManifest};
use crate::error::{Error, Result};
use crate::evalstat::{
    icc, intergroup_bootstrap, plcc_mapped, repeat_eval, split_by_content, srocc, RatingsTable, RunScores,
    SplitAssignment,
};
use crate::features::read_store;
use crate::friqa::ScoreTable;
use crate::neuro::{
    build_mtl_head, build_regressor, learning_rate_sweep, load_model, save_model, train, write_history_csv,
    CheckpointMeta, FeatureScaling, LossKind, NetworkModel, TrainConfig, TrainOutcome, TrainingData,
};

const SWEEP_RATES: [f64; 5] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];

/// Features and label columns joined on image id.
struct LabeledData {
    ids: Vec<String>,
    refs: Vec<String>,
    x: Array2<f64>,
    y: Array2<f64>,
    names: Vec<String>,
}

impl LabeledData {
    fn load(features: &Path, labels: &Path, columns: Option<&[String]>, manifest: Option<&Path>) -> Result<Self> {
        let mut table = ScoreTable::load(labels)?;
        if let Some(cols) = columns {
            table = table.select_columns(cols)?;
        }
        let finite: Vec<String> = (0..table.rows())
            .filter(|&r| (0..table.cols()).all(|c| table.value(r, c).is_finite()))
            .map(|r| table.image_ids()[r].clone())
            .collect();
        if finite.len() < table.rows() {
            log::warn!("dropping {} rows with non-finite labels", table.rows() - finite.len());
            table = table.select_rows(&finite)?;
        }
        let store = read_store(features)?;
        let missing: Vec<&String> = table.image_ids().iter().filter(|id| store.get(id).is_none()).collect();
        if let Some(first) = missing.first() {
            return Err(Error::invalid(format!(
                "{} labelled images have no feature vector in {} (first: {first:?})",
                missing.len(),
                features.display()
            )));
        }
        let ids = table.image_ids().to_vec();
        let refs = match manifest {
            Some(m) => {
                let manifest = DatasetManifest::load(m)?;
                let map: HashMap<&str, String> =
                    manifest.records.iter().map(|r| (r.image_id.as_str(), r.reference_id())).collect();
                ids.iter()
                    .map(|id| {
                        map.get(id.as_str()).cloned().ok_or_else(|| {
                            Error::invalid(format!("image {id:?} is not listed in manifest {}", m.display()))
                        })
                    })
                    .collect::<Result<_>>()?
            }
            None => ids.iter().map(|id| reference_of(id).to_owned()).collect(),
        };
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let x = store.matrix(&id_refs)?;
        let mut y = Array2::zeros((ids.len(), table.cols()));
        for c in 0..table.cols() {
            for (r, v) in table.column_at(c).iter().enumerate() {
                y[[r, c]] = *v;
            }
        }
        Ok(Self {
            ids,
            refs,
            x,
            y,
            names: table.metrics().to_vec(),
        })
    }

    fn split(&self, ratios: [f64; 3], seed: u64) -> Result<(SplitAssignment, [Vec<usize>; 3])> {
        let mut distinct = self.refs.clone();
        distinct.sort();
        distinct.dedup();
        let assignment = split_by_content(&distinct, ratios, seed)?;
        let rows = assignment.partition(self.refs.iter().map(String::as_str))?;
        Ok((assignment, rows))
    }

    fn rows(&self, rows: &[usize]) -> (Array2<f64>, Array2<f64>) {
        (self.x.select(Axis(0), rows), self.y.select(Axis(0), rows))
    }
}

#[derive(Debug, Clone, Copy)]
enum Arch {
    Mtl,
    Regressor,
}

struct Fitted {
    outcome: TrainOutcome<f64>,
    scaling: Option<FeatureScaling>,
    learning_rate: f64,
    sweep: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Serialize)]
struct TaskScore {
    name: String,
    test_images: usize,
    srocc: Option<f64>,
    plcc: Option<f64>,
}

fn fit(
    arch: Arch,
    data: &LabeledData,
    rows: &[Vec<usize>; 3],
    config: &TrainConfig,
    standardize: bool,
    sweep: bool,
) -> Result<Fitted> {
    let (mut xt, yt) = data.rows(&rows[0]);
    if xt.nrows() == 0 {
        return Err(Error::invalid("the training split is empty"));
    }
    let (mut xv, yv) = data.rows(&rows[1]);
    let scaling = if standardize {
        let s = FeatureScaling::fit(xt.view())?;
        s.apply(&mut xt)?;
        s.apply(&mut xv)?;
        Some(s)
    } else {
        None
    };
    let train_set = TrainingData::new(xt.view(), yt.view())?;
    let val_set = TrainingData::new(xv.view(), yv.view())?;
    let val = (!val_set.is_empty()).then_some(&val_set);
    let dim = data.x.ncols();
    let tasks = data.y.ncols();
    let build = || -> Result<NetworkModel<f64>> {
        match arch {
            Arch::Mtl => build_mtl_head(dim, tasks, config.seed),
            Arch::Regressor => build_regressor(dim, config.seed),
        }
    };
    let names = Some(data.names.as_slice());
    if sweep {
        let (rate, outcome, table) = learning_rate_sweep(&SWEEP_RATES, build, &train_set, val, config, names)?;
        Ok(Fitted {
            outcome,
            scaling,
            learning_rate: rate,
            sweep: Some(table),
        })
    } else {
        Ok(Fitted {
            outcome: train(build()?, &train_set, val, config, names)?,
            scaling,
            learning_rate: config.learning_rate,
            sweep: None,
        })
    }
}

fn predict(model: &NetworkModel<f64>, scaling: Option<&FeatureScaling>, x: &Array2<f64>) -> Result<Array2<f64>> {
    let mut x = x.clone();
    if let Some(s) = scaling {
        s.apply(&mut x)?;
    }
    model.predict(x.view())
}

/// Held-out SROCC and logistic-mapped PLCC per output column; `None` where
/// the statistic is undefined (too few or constant values).
fn test_scores(preds: &Array2<f64>, targets: &Array2<f64>, names: &[String]) -> Vec<TaskScore> {
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let p = preds.column(k).to_vec();
            let t = targets.column(k).to_vec();
            TaskScore {
                name: name.clone(),
                test_images: p.len(),
                srocc: srocc(&p, &t).ok(),
                plcc: plcc_mapped(&p, &t).ok(),
            }
        })
        .collect()
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

struct TrainRequest<'a> {
    command: &'static str,
    arch: Arch,
    features: PathBuf,
    labels: PathBuf,
    columns: Option<Vec<String>>,
    manifest: Option<PathBuf>,
    split_seed: u64,
    ratios: [f64; 3],
    out: PathBuf,
    history: PathBuf,
    report: Option<PathBuf>,
    config: TrainConfig,
    standardize: bool,
    sweep: bool,
    resolved: &'a Value,
}

fn run_training(ctx: &Ctx, req: TrainRequest) -> Result<()> {
    require_input(&req.features, "feature store")?;
    require_input(&req.labels, "label table")?;
    if let Some(m) = &req.manifest {
        require_input(m, "manifest")?;
    }
    let data = LabeledData::load(&req.features, &req.labels, req.columns.as_deref(), req.manifest.as_deref())?;
    if matches!(req.arch, Arch::Regressor) && data.names.len() != 1 {
        return Err(Error::invalid(format!(
            "the regressor needs exactly one label column, found {:?}; pick one with --label-column",
            data.names
        )));
    }
    let (assignment, rows) = data.split(req.ratios, req.split_seed)?;
    let mut outputs = vec![req.out.clone(), req.history.clone()];
    outputs.extend(req.report.clone());
    if ctx.dry_run {
        log::info!(
            "{} images, {} features, tasks {:?}, split {:?}",
            data.ids.len(),
            data.x.ncols(),
            data.names,
            assignment.counts()
        );
        return ctx.print_plan(req.command, req.resolved, &[&req.features, &req.labels], &outputs);
    }
    let fitted = fit(req.arch, &data, &rows, &req.config, req.standardize, req.sweep)?;
    let (xs, ys) = data.rows(&rows[2]);
    let scores = if xs.nrows() > 0 {
        let preds = predict(&fitted.outcome.model, fitted.scaling.as_ref(), &xs)?;
        test_scores(&preds, &ys, &data.names)
    } else {
        Vec::new()
    };
    let provenance = json!({
        "provenance": Provenance::new(req.command, req.config.seed, req.resolved)?,
        "split_seed": req.split_seed,
        "ratios": req.ratios,
        "split_counts": assignment.counts(),
        "learning_rate": fitted.learning_rate,
        "learning_rate_sweep": fitted.sweep,
    });
    let model = &fitted.outcome.model;
    let meta = CheckpointMeta {
        format_version: 1,
        heads: data.names.clone(),
        layer_dims: model.layer_dims(),
        param_count: model.param_count(),
        config: TrainConfig {
            learning_rate: fitted.learning_rate,
            ..req.config.clone()
        },
        best_epoch: fitted.outcome.best_epoch,
        best_val_loss: fitted.outcome.best_val_loss.is_finite().then_some(fitted.outcome.best_val_loss),
        feature_scaling: fitted.scaling.clone(),
        provenance: provenance.clone(),
    };
    ensure_parent(&req.out)?;
    save_model(model, &meta, &req.out)?;
    ensure_parent(&req.history)?;
    let f = std::fs::File::create(&req.history).map_err(|e| Error::io(&req.history, e))?;
    write_history_csv(&fitted.outcome.history, std::io::BufWriter::new(f))?;
    write_provenance(&req.history, &Provenance::new(req.command, req.config.seed, req.resolved)?)?;
    for s in &scores {
        log::info!(
            "{}: test SROCC {} PLCC {}",
            s.name,
            s.srocc.map_or("n/a".into(), |v| format!("{v:.4}")),
            s.plcc.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
    }
    if let Some(path) = &req.report {
        ensure_parent(path)?;
        write_json(
            path,
            &json!({
                "provenance": provenance,
                "best_epoch": fitted.outcome.best_epoch,
                "best_val_loss": meta.best_val_loss,
                "test": scores,
            }),
        )?;
    }
    Ok(())
}

fn train_config(
    defaults: TrainConfig,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
    loss: Option<LossKind>,
    seed: u64,
    dropout: Option<bool>,
) -> TrainConfig {
    TrainConfig {
        epochs: epochs.unwrap_or(defaults.epochs),
        learning_rate: lr.unwrap_or(defaults.learning_rate),
        batch_size: batch.unwrap_or(defaults.batch_size),
        loss: loss.unwrap_or(defaults.loss),
        seed,
        dropout: dropout.unwrap_or(defaults.dropout),
        ..defaults
    }
}

pub fn train_mtl(ctx: &Ctx, flags: TrainMtlArgs) -> Result<()> {
    let mut a = ctx.resolve(&flags, "train_mtl")?;
    let seed = ctx.seed(a.seed);
    a.seed = Some(seed);
    let split_seed = *a.split_seed.get_or_insert(seed);
    let out = require(a.out.clone(), "out", "train_mtl")?;
    let history = a.history.clone().unwrap_or_else(|| sidecar(&out, ".history.csv"));
    a.history = Some(history.clone());
    let config = train_config(TrainConfig::mtl(), a.epochs, a.lr, a.batch_size, a.loss, seed, a.dropout);
    let resolved = serde_json::to_value(&a)?;
    run_training(
        ctx,
        TrainRequest {
            command: "train-mtl",
            arch: Arch::Mtl,
            features: require(a.features.clone(), "features", "train_mtl")?,
            labels: require(a.scores.clone(), "scores", "train_mtl")?,
            columns: a.metrics.clone(),
            manifest: a.manifest.clone(),
            split_seed,
            ratios: ratios_or_default(a.ratios.clone())?,
            out,
            history,
            report: a.report.clone(),
            config,
            standardize: a.standardize.unwrap_or(true),
            sweep: a.lr_sweep.unwrap_or(false),
            resolved: &resolved,
        },
    )
}

fn regressor_defaults() -> TrainConfig {
    TrainConfig {
        loss: LossKind::Mse,
        ..TrainConfig::regressor()
    }
}

pub fn train_regressor(ctx: &Ctx, flags: TrainRegressorArgs) -> Result<()> {
    let mut a = ctx.resolve(&flags, "train_regressor")?;
    let seed = ctx.seed(a.seed);
    a.seed = Some(seed);
    let split_seed = *a.split_seed.get_or_insert(seed);
    let out = require(a.out.clone(), "out", "train_regressor")?;
    let history = a.history.clone().unwrap_or_else(|| sidecar(&out, ".history.csv"));
    a.history = Some(history.clone());
    let config = train_config(regressor_defaults(), a.epochs, a.lr, a.batch_size, a.loss, seed, a.dropout);
    let resolved = serde_json::to_value(&a)?;
    run_training(
        ctx,
        TrainRequest {
            command: "train-regressor",
            arch: Arch::Regressor,
            features: require(a.features.clone(), "features", "train_regressor")?,
            labels: require(a.labels.clone(), "labels", "train_regressor")?,
            columns: a.label_column.clone().map(|c| vec![c]),
            manifest: a.manifest.clone(),
            split_seed,
            ratios: ratios_or_default(a.ratios.clone())?,
            out,
            history,
            report: a.report.clone(),
            config,
            standardize: a.standardize.unwrap_or(true),
            sweep: a.lr_sweep.unwrap_or(false),
            resolved: &resolved,
        },
    )
}

fn emit_report(out: Option<&Path>, report: &Value) -> Result<()> {
    match out {
        Some(path) => {
            ensure_parent(path)?;
            write_json(path, report)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(report)?);
            Ok(())
        }
    }
}

pub fn evaluate(ctx: &Ctx, flags: EvaluateArgs) -> Result<()> {
    let mut a = ctx.resolve(&flags, "evaluate")?;
    let seed = ctx.seed(a.seed);
    a.seed = Some(seed);
    let features = require(a.features.clone(), "features", "evaluate")?;
    let labels = require(a.labels.clone(), "labels", "evaluate")?;
    require_input(&features, "feature store")?;
    require_input(&labels, "label table")?;
    if let Some(m) = &a.manifest {
        require_input(m, "manifest")?;
    }
    match a.model.clone() {
        Some(model_path) => evaluate_model(ctx, a, &model_path, &features, &labels),
        None => evaluate_protocol(ctx, a, seed, &features, &labels),
    }
}

fn evaluate_model(ctx: &Ctx, mut a: EvaluateArgs, model_path: &Path, features: &Path, labels: &Path) -> Result<()> {
    require_input(model_path, "model checkpoint")?;
    let (model, meta) = load_model::<f64>(model_path)?;
    let meta = meta.ok_or_else(|| Error::invalid(format!("{} has no metadata sidecar", model_path.display())))?;
    let trained = &meta.provenance;
    let split_seed = a
        .split_seed
        .or_else(|| trained["split_seed"].as_u64())
        .unwrap_or(ctx.seed(a.seed));
    a.split_seed = Some(split_seed);
    let ratios = match a.ratios.clone() {
        Some(r) => ratios_or_default(Some(r))?,
        None => serde_json::from_value(trained["ratios"].clone()).unwrap_or([0.6, 0.2, 0.2]),
    };
    a.ratios = Some(ratios.to_vec());
    let data = LabeledData::load(features, labels, Some(&meta.heads), a.manifest.as_deref())?;
    let (assignment, rows) = data.split(ratios, split_seed)?;
    if ctx.dry_run {
        let outputs: Vec<PathBuf> = a.out.iter().cloned().collect();
        return ctx.print_plan("evaluate", &a, &[model_path, features, labels], &outputs);
    }
    let (xs, ys) = data.rows(&rows[2]);
    if xs.nrows() == 0 {
        return Err(Error::invalid("the test split is empty"));
    }
    let preds = predict(&model, meta.feature_scaling.as_ref(), &xs)?;
    let scores = test_scores(&preds, &ys, &data.names);
    let report = json!({
        "mode": "model",
        "provenance": Provenance::new("evaluate", a.seed.unwrap_or(0), &a)?,
        "model": model_path,
        "split_seed": split_seed,
        "split_counts": assignment.counts(),
        "test": scores,
    });
    emit_report(a.out.as_deref(), &report)
}

fn evaluate_protocol(ctx: &Ctx, mut a: EvaluateArgs, seed: u64, features: &Path, labels: &Path) -> Result<()> {
    let reps = *a.reps.get_or_insert(100);
    let ratios = ratios_or_default(a.ratios.clone())?;
    let standardize = *a.standardize.get_or_insert(true);
    let config = train_config(regressor_defaults(), a.epochs, a.lr, a.batch_size, a.loss, seed, Some(true));
    let columns = a.label_column.clone().map(|c| vec![c]);
    let data = LabeledData::load(features, labels, columns.as_deref(), a.manifest.as_deref())?;
    if data.names.len() != 1 {
        return Err(Error::invalid(format!(
            "evaluation needs exactly one label column, found {:?}; pick one with --label-column",
            data.names
        )));
    }
    data.split(ratios, seed)?;
    let runs_csv = a.out.as_ref().map(|o| o.with_extension("runs.csv"));
    if ctx.dry_run {
        let mut outputs: Vec<PathBuf> = a.out.iter().cloned().collect();
        outputs.extend(runs_csv);
        return ctx.print_plan("evaluate", &a, &[features, labels], &outputs);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.workers)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let summary = pool.install(|| {
        repeat_eval(reps, seed, |run_seed| {
            let (_, rows) = data.split(ratios, run_seed)?;
            let cfg = TrainConfig {
                seed: run_seed,
                ..config.clone()
            };
            let fitted = fit(Arch::Regressor, &data, &rows, &cfg, standardize, false)?;
            let (xs, ys) = data.rows(&rows[2]);
            let preds = predict(&fitted.outcome.model, fitted.scaling.as_ref(), &xs)?;
            let p = preds.column(0).to_vec();
            let t = ys.column(0).to_vec();
            Ok(RunScores {
                srocc: srocc(&p, &t)?,
                plcc: plcc_mapped(&p, &t)?,
            })
        })
    })?;
    if let Some(path) = &runs_csv {
        ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
        for r in &summary.runs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    log::info!(
        "median SROCC {:.4}, median PLCC {:.4} over {reps} runs",
        summary.median_srocc,
        summary.median_plcc
    );
    let report = json!({
        "mode": "protocol",
        "provenance": Provenance::new("evaluate", seed, &a)?,
        "label": data.names[0],
        "images": data.ids.len(),
        "ratios": ratios,
        "logistic_mapping": "fitted per test split",
        "train_config": config,
        "repetitions": summary.repetitions,
        "base_seed": summary.base_seed,
        "median_srocc": summary.median_srocc,
        "median_plcc": summary.median_plcc,
        "runs": summary.runs,
        "runs_csv": runs_csv,
    });
    emit_report(a.out.as_deref(), &report)
}

pub fn reliability(ctx: &Ctx, flags: ReliabilityArgs) -> Result<()> {
    let mut a = ctx.resolve(&flags, "reliability")?;
    let ratings_path = require(a.ratings.clone(), "ratings", "reliability")?;
    let resamples = *a.resamples.get_or_insert(100);
    let seed = ctx.seed(a.seed);
    a.seed = Some(seed);
    require_input(&ratings_path, "ratings CSV")?;
    let ratings = RatingsTable::read_csv(&ratings_path)?;
    if ctx.dry_run {
        let mut outputs: Vec<PathBuf> = a.out.iter().cloned().collect();
        outputs.extend(a.dmos_out.clone());
        return ctx.print_plan("reliability", &a, &[&ratings_path], &outputs);
    }
    let dmos = ratings.dmos_all()?;
    let icc_value = icc(&ratings.as_items())?;
    let bootstrap = intergroup_bootstrap(&ratings, resamples, seed)?;
    if let Some(path) = &a.dmos_out {
        ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
        w.write_record(["image_id", "dmos"])?;
        for (id, v) in &dmos {
            w.write_record([id.as_str(), &v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        write_provenance(path, &Provenance::new("reliability", seed, &a)?)?;
    }
    log::info!(
        "ICC {icc_value:.4}; bootstrap SROCC {:.4} MAE {:.4} RMSE {:.4}",
        bootstrap.srocc,
        bootstrap.mae,
        bootstrap.rmse
    );
    let report = json!({
        "provenance": Provenance::new("reliability", seed, &a)?,
        "images": ratings.len(),
        "ratings": ratings.total_ratings(),
        "icc": {"variant": "ICC(1,1) one-way random effects, k0-adjusted group size", "value": icc_value},
        "bootstrap": bootstrap,
    });
    emit_report(a.out.as_deref(), &report)
}
