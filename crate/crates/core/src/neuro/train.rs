use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::loss::{mtl_loss, LossKind};
use super::model::{Mode, NetworkModel};
use crate::error::{Error, Result};
use crate::evalstat::srocc;
use crate::scalar::{lit, Scalar};

/// Optimization settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Per-task loss weights; `None` weighs every task `1/K`.
    pub task_weights: Option<Vec<f64>>,
    /// Apply the layers' dropout during training.
    pub dropout: bool,
    /// Stop once the monitored loss falls below this value.
    #[serde(default)]
    pub target_loss: Option<f64>,
}

impl TrainConfig {
    /// Defaults for the multi-task stage.
    pub fn mtl() -> Self {
        Self {
            loss: LossKind::Plcc,
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            task_weights: None,
            dropout: true,
            target_loss: None,
        }
    }

    /// Defaults for the quality-regression stage.
    pub fn regressor() -> Self {
        Self {
            learning_rate: 1e-2,
            ..Self::mtl()
        }
    }

    pub fn validate(&self, tasks: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.loss == LossKind::Plcc && self.batch_size < 2 {
            return Err(Error::invalid("PLCC loss needs a batch size of at least 2"));
        }
        if let Some(w) = &self.task_weights {
            if w.len() != tasks {
                return Err(Error::invalid(format!("{} task weights for {tasks} tasks", w.len())));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid("task weights must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Features (`N × D`) with one target column per head (`N × K`).
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a, T> {
    pub features: ArrayView2<'a, T>,
    pub targets: ArrayView2<'a, T>,
}

impl<'a, T: Scalar> TrainingData<'a, T> {
    pub fn new(features: ArrayView2<'a, T>, targets: ArrayView2<'a, T>) -> Result<Self> {
        if features.nrows() != targets.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows, {} target rows",
                features.nrows(),
                targets.nrows()
            )));
        }
        Ok(Self { features, targets })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss with dropout active.
    pub train_loss: f64,
    pub val_loss: f64,
    /// SROCC between predictions and targets on the validation set, averaged
    /// over tasks.
    pub val_srocc: f64,
}

#[derive(Debug)]
pub struct TrainOutcome<T> {
    pub model: NetworkModel<T>,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the returned checkpoint; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
}

/// Loss and mean per-task SROCC of `model` on `data` in eval mode.
pub fn evaluate_loss<T: Scalar>(
    model: &NetworkModel<T>,
    data: &TrainingData<T>,
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let preds = model.predict(data.features)?;
    let (loss, _) = batch_loss(&preds, &data.targets, config, None)?;
    let mut rho = 0.0;
    for k in 0..preds.ncols() {
        let p = preds.column(k).to_vec();
        let t = data.targets.column(k).to_vec();
        rho += srocc(&p, &t).map(|v| v.to_f64().unwrap()).unwrap_or(f64::NAN);
    }
    Ok((loss.to_f64().unwrap(), rho / preds.ncols() as f64))
}

fn batch_loss<T: Scalar>(
    preds: &Array2<T>,
    targets: &ArrayView2<T>,
    config: &TrainConfig,
    names: Option<&[String]>,
) -> Result<(T, Array2<T>)> {
    let cols_p: Vec<Vec<T>> = preds.columns().into_iter().map(|c| c.to_vec()).collect();
    let cols_t: Vec<Vec<T>> = targets.columns().into_iter().map(|c| c.to_vec()).collect();
    let tasks: Vec<(&[T], &[T])> = cols_p.iter().zip(&cols_t).map(|(p, t)| (&p[..], &t[..])).collect();
    let weights: Option<Vec<T>> = config.task_weights.as_ref().map(|w| w.iter().map(|&v| lit(v)).collect());
    let (loss, grads) = mtl_loss(&tasks, weights.as_deref(), config.loss, names)?;
    let mut g = Array2::zeros(preds.raw_dim());
    for (k, col) in grads.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            g[[i, k]] = v;
        }
    }
    Ok((loss, g))
}

fn has_constant_task<T: Scalar>(targets: &ArrayView2<T>, rows: &[usize]) -> bool {
    (0..targets.ncols()).any(|k| {
        let first = targets[[rows[0], k]];
        rows.iter().all(|&r| targets[[r, k]] == first)
    })
}

fn batches(order: &[usize], size: usize, min: usize) -> Vec<Vec<usize>> {
    order
        .chunks(size)
        .filter(|c| c.len() >= min)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Minibatch Adam training. The returned model is the epoch checkpoint with
/// the lowest validation loss (training loss when `val` is `None`).
pub fn train<T: Scalar>(
    model: NetworkModel<T>,
    train_set: &TrainingData<T>,
    val: Option<&TrainingData<T>>,
    config: &TrainConfig,
    task_names: Option<&[String]>,
) -> Result<TrainOutcome<T>> {
    let k = model.head_count();
    config.validate(k)?;
    let shape = |d: &TrainingData<T>| (d.targets.ncols(), d.features.ncols());
    let sets = [("training", Some(shape(train_set))), ("validation", val.map(shape))];
    for (name, d) in sets {
        if let Some((targets, features)) = d {
            if targets != k {
                return Err(Error::DimensionMismatch(format!(
                    "{name} data has {targets} target columns for {k} heads"
                )));
            }
            if features != model.input_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "{name} data has {features} features, model expects {}",
                    model.input_dim()
                )));
            }
        }
    }
    let min_batch = if config.loss == LossKind::Plcc { 2 } else { 1 };
    if train_set.len() < min_batch {
        return Err(Error::invalid("training set is too small"));
    }
    let mut model = model;
    let mut best = TrainOutcome {
        model: model.clone(),
        history: Vec::new(),
        best_epoch: None,
        best_val_loss: f64::INFINITY,
    };
    if config.epochs == 0 {
        return Ok(best);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(&model);
    let lr = lit::<T>(config.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut plan = batches(&order, config.batch_size, min_batch);
        if config.loss == LossKind::Plcc && plan.iter().any(|b| has_constant_task(&train_set.targets, b)) {
            order.shuffle(&mut rng);
            plan = batches(&order, config.batch_size, min_batch);
            if let Some(b) = plan.iter().find(|b| has_constant_task(&train_set.targets, b)) {
                return Err(Error::Degenerate(format!(
                    "epoch {epoch}: a batch of {} samples has constant targets even after reshuffling; \
                     increase the batch size or check the labels",
                    b.len()
                )));
            }
        }
        let mut loss_sum = 0.0;
        for rows in &plan {
            let x = train_set.features.select(Axis(0), rows);
            let y = train_set.targets.select(Axis(0), rows);
            let mode = if config.dropout {
                Mode::Train { seed: rng.random() }
            } else {
                Mode::Eval
            };
            let (preds, cache) = model.forward(x.view(), mode)?;
            let (loss, grad) = batch_loss(&preds, &y.view(), config, task_names)
                .map_err(|e| e.context(format!("epoch {epoch}")))?;
            let grads = model.backward(&cache, grad.view())?;
            adam_step(&mut adam, &mut model, &grads, lr)?;
            loss_sum += loss.to_f64().unwrap();
        }
        let train_loss = loss_sum / plan.len() as f64;
        let (val_loss, val_srocc) = match val {
            Some(v) => evaluate_loss(&model, v, config)?,
            None => evaluate_loss(&model, train_set, config)?,
        };
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} srocc {val_srocc:.4}");
        best.history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_srocc,
        });
        if val_loss < best.best_val_loss || best.best_epoch.is_none() {
            best.best_val_loss = val_loss;
            best.best_epoch = Some(epoch);
            best.model = model.clone();
        }
        if config.target_loss.is_some_and(|t| val_loss < t) {
            log::info!("epoch {epoch}: loss {val_loss:.3e} reached the target, stopping");
            break;
        }
    }
    Ok(best)
}

/// Trains one model per learning rate and keeps the one with the lowest
/// validation loss. Returns it with `(rate, best validation loss)` per run.
pub fn learning_rate_sweep<T: Scalar>(
    rates: &[f64],
    build: impl Fn() -> Result<NetworkModel<T>>,
    train_set: &TrainingData<T>,
    val: Option<&TrainingData<T>>,
    config: &TrainConfig,
    task_names: Option<&[String]>,
) -> Result<(f64, TrainOutcome<T>, Vec<(f64, f64)>)> {
    if rates.is_empty() {
        return Err(Error::invalid("learning-rate sweep needs at least one rate"));
    }
    let mut best: Option<(f64, TrainOutcome<T>)> = None;
    let mut table = Vec::new();
    for &rate in rates {
        let cfg = TrainConfig {
            learning_rate: rate,
            ..config.clone()
        };
        let outcome = train(build()?, train_set, val, &cfg, task_names)
            .map_err(|e| e.context(format!("learning rate {rate}")))?;
        table.push((rate, outcome.best_val_loss));
        if best.as_ref().is_none_or(|(_, b)| outcome.best_val_loss < b.best_val_loss) {
            best = Some((rate, outcome));
        }
    }
    let (rate, outcome) = best.unwrap();
    Ok((rate, outcome, table))
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_loss", "val_loss", "val_srocc"])?;
    for r in history {
        out.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.val_srocc.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<history>", e))?;
    Ok(())
}

/// Largest relative error between backprop gradients and central finite
/// differences over `per_layer` randomly chosen coordinates of each layer's
/// weights plus one bias, dropout disabled. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-5)`.
pub fn gradient_check(
    model: &NetworkModel<f64>,
    data: &TrainingData<f64>,
    loss: LossKind,
    per_layer: usize,
    seed: u64,
) -> Result<f64> {
    let config = TrainConfig {
        loss,
        ..TrainConfig::mtl()
    };
    let objective = |m: &NetworkModel<f64>| -> Result<f64> {
        let preds = m.predict(data.features)?;
        Ok(batch_loss(&preds, &data.targets, &config, None)?.0)
    };
    let (preds, cache) = model.forward(data.features, Mode::Eval)?;
    let (_, grad) = batch_loss(&preds, &data.targets, &config, None)?;
    let grads = model.backward(&cache, grad.view())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for head in 0..model.head_count() {
        for layer in 0..model.head(head).len() {
            let (rows, cols) = model.head(head)[layer].weights().dim();
            let mut coords: Vec<Option<(usize, usize)>> = (0..per_layer)
                .map(|_| Some((rng.random_range(0..rows), rng.random_range(0..cols))))
                .collect();
            coords.push(None);
            for coord in coords {
                let analytic = match coord {
                    Some((r, c)) => grads.heads[head][layer].weights[[r, c]],
                    None => grads.heads[head][layer].bias[0],
                };
                let nudge = |probe: &mut NetworkModel<f64>, delta: f64| {
                    let l = probe.layer_mut(head, layer);
                    match coord {
                        Some((r, c)) => l.weights[[r, c]] += delta,
                        None => l.bias[0] += delta,
                    }
                };
                nudge(&mut probe, h);
                let up = objective(&probe)?;
                nudge(&mut probe, -2.0 * h);
                let down = objective(&probe)?;
                nudge(&mut probe, h);
                let numeric = (up - down) / (2.0 * h);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuro::{build_mtl_head, ArchitectureSpec};

    fn linear_data(n: usize, d: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0));
        let y = x.column(0).to_owned() * 0.7 - x.column(1).to_owned() * 0.4 + x.column(2).to_owned() * 0.2
            + x.column(3).to_owned() * 0.5;
        (x, y.insert_axis(Axis(1)))
    }

    #[test]
    fn zero_epochs_return_initial_model() {
        let (x, y) = linear_data(16, 4, 1);
        let m = build_mtl_head::<f64>(4, 1, 0).unwrap();
        let data = TrainingData::new(x.view(), y.view()).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::mtl()
        };
        let out = train(m.clone(), &data, None, &cfg, None).unwrap();
        assert_eq!(out.model, m);
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, None);
    }

    #[test]
    fn small_net_fits_and_is_deterministic() {
        let (x, y) = linear_data(64, 6, 2);
        let data = TrainingData::new(x.view(), y.view()).unwrap();
        let spec = ArchitectureSpec {
            input_dim: 6,
            hidden: vec![32, 16],
            dropout_permille: vec![0, 0],
            heads: 1,
        };
        let cfg = TrainConfig {
            loss: LossKind::Mse,
            learning_rate: 3e-3,
            batch_size: 16,
            epochs: 200,
            seed: 3,
            task_weights: None,
            dropout: true,
            target_loss: None,
        };
        let run = || train(NetworkModel::build(&spec, 1).unwrap(), &data, None, &cfg, None).unwrap();
        let a = run();
        assert!(a.best_val_loss < 1e-3, "{}", a.best_val_loss);
        assert_eq!(a.history.len(), 200);
        let b = run();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn constant_targets_fail_under_plcc() {
        let x = Array2::from_shape_fn((8, 3), |(i, j)| (i + j) as f64);
        let y = Array2::from_elem((8, 1), 1.0);
        let data = TrainingData::new(x.view(), y.view()).unwrap();
        let m = build_mtl_head::<f64>(3, 1, 0).unwrap();
        let err = train(m, &data, None, &TrainConfig::mtl(), None).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn gradient_check_passes_for_all_losses() {
        let (x, y) = linear_data(10, 5, 4);
        let y2 = ndarray::concatenate![Axis(1), y, y.mapv(|v| v * v)];
        let data = TrainingData::new(x.view(), y2.view()).unwrap();
        let spec = ArchitectureSpec {
            input_dim: 5,
            hidden: vec![7, 6],
            dropout_permille: vec![250, 500],
            heads: 2,
        };
        let m = NetworkModel::build(&spec, 8).unwrap();
        for loss in [LossKind::Mse, LossKind::Mae, LossKind::Plcc] {
            let err = gradient_check(&m, &data, loss, 20, 1).unwrap();
            assert!(err < 1e-5, "{loss:?}: {err}");
        }
    }

    #[test]
    fn history_csv_header() {
        let mut buf = Vec::new();
        let rec = EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_loss: 0.25,
            val_srocc: 0.9,
        };
        write_history_csv(&[rec], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss,val_srocc\n1,0.5,0.25,0.9\n");
    }
}
