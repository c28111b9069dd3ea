//! Early-stopped training, repeated k-fold cross-validation and grid search.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureWindow;
use crate::nn::{Adam, CnnModel, Mode, Tensor};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// L2 coefficient applied to every parameter; 0 disables it.
    pub weight_decay: f64,
    /// Share of the training windows held out to monitor early stopping.
    pub validation_fraction: f64,
    pub shuffle: bool,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            learning_rate: 0.001,
            batch_size: 5,
            max_epochs: 100,
            patience: 5,
            weight_decay: 0.0,
            validation_fraction: 0.1,
            shuffle: true,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed so a run can be frozen on purpose.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument(format!("validation_fraction {} outside [0, 1)", self.validation_fraction)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CnnModel,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept; 0 when no epoch ran.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub fn labels_of(windows: &[FeatureWindow]) -> Vec<usize> {
    windows.iter().map(|w| w.label as usize).collect()
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

pub fn predict(model: &CnnModel, windows: &[FeatureWindow]) -> Result<Vec<usize>> {
    Ok(model.predict_proba(windows)?.iter().map(|p| argmax(p)).collect())
}

pub fn accuracy(model: &CnnModel, windows: &[FeatureWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::InsufficientData("no windows to score".into()));
    }
    let preds = predict(model, windows)?;
    let hits = preds.iter().zip(windows).filter(|(p, w)| **p == w.label as usize).count();
    Ok(hits as f64 / windows.len() as f64)
}

/// Mean cross-entropy and accuracy in inference mode.
pub fn evaluate(model: &CnnModel, windows: &[FeatureWindow]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut hits = 0;
    for w in windows {
        let p = model.forward(&Tensor::from_window(w), Mode::Infer)?;
        let y = w.label as usize;
        if y >= p.len() {
            return Err(Error::OutOfRange(format!("label {y} with {} classes", p.len())));
        }
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        if argmax(&p) == y {
            hits += 1;
        }
    }
    let n = windows.len().max(1) as f64;
    Ok((loss / n, hits as f64 / n))
}

/// Seeded holdout carved from the training windows.
pub fn validation_split(windows: &[FeatureWindow], fraction: f64, seed: u64) -> (Vec<FeatureWindow>, Vec<FeatureWindow>) {
    let n = windows.len();
    if fraction <= 0.0 || n < 2 {
        return (windows.to_vec(), Vec::new());
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[0x56414c]));
    let mut val: Vec<usize> = idx[..n_val].to_vec();
    let mut fit: Vec<usize> = idx[n_val..].to_vec();
    val.sort_unstable();
    fit.sort_unstable();
    (
        fit.iter().map(|&i| windows[i].clone()).collect(),
        val.iter().map(|&i| windows[i].clone()).collect(),
    )
}

/// Train with Adam, shuffling per epoch and stopping once the monitored loss has not
/// improved for `patience` consecutive epochs. The best parameters are returned.
pub fn train(init: &CnnModel, windows: &[FeatureWindow], hyper: &Hyperparameters, seed: u64) -> Result<TrainOutcome> {
    train_observed(init, windows, hyper, seed, |_, _| Ok(()))
}

/// As [`train`], calling `observe(epoch, best_so_far)` after every epoch. The model
/// passed at epoch `e` equals what `train` returns with `max_epochs = e`.
pub fn train_observed<F>(init: &CnnModel, windows: &[FeatureWindow], hyper: &Hyperparameters, seed: u64, mut observe: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &CnnModel) -> Result<()>,
{
    hyper.validate()?;
    if windows.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let (fit, val) = validation_split(windows, hyper.validation_fraction, seed);
    let monitor: &[FeatureWindow] = if val.is_empty() { &fit } else { &val };
    let inputs: Vec<Tensor> = fit.iter().map(Tensor::from_window).collect();
    let labels = labels_of(&fit);

    let mut model = init.clone();
    let mut best = init.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut adam = Adam::new(&model);
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..fit.len()).collect();

    for epoch in 1..=hyper.max_epochs {
        let mut r = rng::stream(seed, &[0x45504f43, epoch as u64]);
        if hyper.shuffle {
            order.shuffle(&mut r);
        }
        let mut train_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let xb: Vec<Tensor> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, mut grads) = model.loss_and_gradients(&xb, &yb, Mode::Train(&mut r))?;
            train_loss += loss;
            grads.scale(1.0 / chunk.len() as f64);
            if hyper.weight_decay > 0.0 {
                for (g, p) in grads.0.iter_mut().zip(model.params()) {
                    g.iter_mut().zip(p).for_each(|(gi, pi)| *gi += hyper.weight_decay * pi);
                }
            }
            adam.step(model.params_mut(), &grads, hyper.learning_rate);
        }
        let (val_loss, val_accuracy) = evaluate(&model, monitor)?;
        history.push(EpochRecord {
            epoch,
            train_loss: train_loss / fit.len() as f64,
            val_loss,
            val_accuracy,
        });
        log::debug!("epoch {epoch}: train {:.4} val {val_loss:.4} acc {val_accuracy:.4}", train_loss / fit.len() as f64);
        if val_loss < best_loss {
            best_loss = val_loss;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        observe(epoch, &best)?;
        if since_best >= hyper.patience && epoch < hyper.max_epochs {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
        stopped_early,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAccuracy {
    pub fold: usize,
    pub repeat: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<FoldAccuracy>,
    pub mean: f64,
    /// Sample standard deviation over all folds.
    pub std: f64,
    /// `std / sqrt(repeats)`.
    pub sigma_error: f64,
    pub repeats: usize,
    pub splits: usize,
}

pub fn standard_error(std: f64, n: usize) -> f64 {
    std / (n as f64).sqrt()
}

/// Fold membership for one repeat: a seeded shuffle dealt round-robin into `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64, repeat: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[0x464f4c44, repeat as u64]));
    let mut fold = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Repeated k-fold over `n` items. `fit_eval(train_idx, val_idx, run_seed)` returns the
/// validation accuracy of one fold.
pub fn kfold<F>(n: usize, k: usize, repeats: usize, seed: u64, fit_eval: F) -> Result<CvResult>
where
    F: Fn(&[usize], &[usize], u64) -> Result<f64> + Sync,
{
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    if n < k {
        return Err(Error::InsufficientData(format!("{n} examples for {k} folds")));
    }
    let jobs: Vec<(usize, usize)> = (0..repeats).flat_map(|r| (0..k).map(move |f| (r, f))).collect();
    let assignments: Vec<Vec<usize>> = (0..repeats).map(|r| fold_assignment(n, k, seed, r)).collect();
    let folds = jobs
        .par_iter()
        .map(|&(r, f)| {
            let (val, tr): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assignments[r][i] == f);
            let acc = fit_eval(&tr, &val, rng::derive(seed, &[r as u64, f as u64]))?;
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::OutOfRange(format!("fold accuracy {acc}")));
            }
            Ok(FoldAccuracy { fold: f, repeat: r, accuracy: acc })
        })
        .collect::<Result<Vec<_>>>()?;
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let std = if accs.len() > 1 {
        (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(CvResult {
        folds,
        mean,
        std,
        sigma_error: standard_error(std, repeats),
        repeats,
        splits: k,
    })
}

/// Repeated k-fold of the CNN: each fold trains a copy of `init` and scores its held-out fold.
pub fn kfold_validate(init: &CnnModel, windows: &[FeatureWindow], hyper: &Hyperparameters, k: usize, repeats: usize, seed: u64) -> Result<CvResult> {
    kfold(windows.len(), k, repeats, seed, |tr, val, s| {
        let fit: Vec<FeatureWindow> = tr.iter().map(|&i| windows[i].clone()).collect();
        let held: Vec<FeatureWindow> = val.iter().map(|&i| windows[i].clone()).collect();
        let out = train(init, &fit, hyper, s)?;
        accuracy(&out.model, &held)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSpace {
    pub epochs: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl Default for TuneSpace {
    fn default() -> Self {
        TuneSpace {
            epochs: (1..=10).map(|e| e * 10).collect(),
            learning_rates: vec![0.001, 0.01, 0.1, 0.002, 0.02, 0.2, 0.003, 0.03, 0.3],
        }
    }
}

impl TuneSpace {
    pub fn validate(&self) -> Result<()> {
        if self.epochs.is_empty() || self.learning_rates.is_empty() {
            return Err(Error::InvalidArgument("tuning grid is empty".into()));
        }
        if self.learning_rates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::InvalidArgument("learning rates must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub epochs: usize,
    pub learning_rate: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    /// Sorted by (learning_rate, epochs).
    pub points: Vec<GridPoint>,
    pub best: GridPoint,
}

/// Highest accuracy; ties go to the lowest learning rate, then the fewest epochs.
pub fn select_best(points: &[GridPoint]) -> Option<GridPoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.learning_rate.total_cmp(&b.learning_rate).then(a.epochs.cmp(&b.epochs)));
    let mut best: Option<GridPoint> = None;
    for p in sorted {
        if best.is_none_or(|b| p.val_accuracy > b.val_accuracy) {
            best = Some(p);
        }
    }
    best
}

/// Exhaustive (epochs, lr) search scored on a seeded validation holdout.
///
/// One run per learning rate is enough: the per-epoch streams make a run capped at
/// `e` epochs a prefix of the longest run, so each epoch budget is read off a snapshot.
pub fn grid_search(init: &CnnModel, windows: &[FeatureWindow], space: &TuneSpace, hyper: &Hyperparameters, seed: u64) -> Result<GridResult> {
    space.validate()?;
    let mut epochs = space.epochs.clone();
    epochs.sort_unstable();
    epochs.dedup();
    let mut lrs = space.learning_rates.clone();
    lrs.sort_by(f64::total_cmp);
    lrs.dedup();
    let fraction = if hyper.validation_fraction > 0.0 { hyper.validation_fraction } else { 0.1 };
    let (fit, val) = validation_split(windows, fraction, rng::derive(seed, &[0x47524944]));
    if val.is_empty() {
        return Err(Error::InsufficientData("grid search needs at least two windows".into()));
    }
    let max_epochs = *epochs.last().unwrap();
    let per_lr = lrs
        .par_iter()
        .map(|&lr| {
            let h = Hyperparameters {
                learning_rate: lr,
                max_epochs,
                ..*hyper
            };
            let mut points = Vec::with_capacity(epochs.len());
            let mut last = None;
            let out = train_observed(init, &fit, &h, rng::derive(seed, &[lr.to_bits()]), |e, m| {
                if epochs.binary_search(&e).is_ok() {
                    let acc = accuracy(m, &val)?;
                    points.push(GridPoint { epochs: e, learning_rate: lr, val_accuracy: acc });
                    last = Some(e);
                }
                Ok(())
            })?;
            // Budgets past an early stop all return the final (restored) model.
            let rest: Vec<usize> = epochs.iter().copied().filter(|&e| last.is_none_or(|l| e > l)).collect();
            if !rest.is_empty() {
                let acc = accuracy(&out.model, &val)?;
                points.extend(rest.into_iter().map(|e| GridPoint { epochs: e, learning_rate: lr, val_accuracy: acc }));
            }
            log::info!("grid lr={lr}: stopped after {} epochs", out.history.len());
            Ok(points)
        })
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<GridPoint> = per_lr.into_iter().flatten().collect();
    let best = select_best(&points).expect("non-empty grid");
    Ok(GridResult { points, best })
}

pub const GRID_HEADER: [&str; 3] = ["epochs", "learning_rate", "val_accuracy"];
pub const CV_HEADER: [&str; 3] = ["fold", "repeat", "accuracy"];
pub const HISTORY_HEADER: [&str; 4] = ["epoch", "train_loss", "val_loss", "val_accuracy"];

pub fn write_grid_csv<W: Write>(grid: &GridResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GRID_HEADER)?;
    for p in &grid.points {
        w.write_record([p.epochs.to_string(), p.learning_rate.to_string(), p.val_accuracy.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<grid csv>", e))?;
    Ok(())
}

/// One row per fold, then `mean,all,...` and `sigma_error,all,...` summary rows.
pub fn write_cv_csv<W: Write>(cv: &CvResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CV_HEADER)?;
    for f in &cv.folds {
        w.write_record([f.fold.to_string(), f.repeat.to_string(), f.accuracy.to_string()])?;
    }
    w.write_record(["mean".to_string(), "all".to_string(), cv.mean.to_string()])?;
    w.write_record(["sigma_error".to_string(), "all".to_string(), cv.sigma_error.to_string()])?;
    w.flush().map_err(|e| Error::io("<cv csv>", e))?;
    Ok(())
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTORY_HEADER)?;
    for h in history {
        w.write_record([h.epoch.to_string(), h.train_loss.to_string(), h.val_loss.to_string(), h.val_accuracy.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<history csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;

    fn tiny_arch(timesteps: usize) -> Architecture {
        Architecture {
            timesteps,
            filters: 4,
            hidden1: 8,
            hidden2: 6,
            dropout: 0.0,
            ..Architecture::default()
        }
    }

    /// Two classes on two parallel lines: zeta = +1 or -1 with small jitter.
    fn separable(n: usize, timesteps: usize) -> Vec<FeatureWindow> {
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let level = if label == 1 { 1.0 } else { -1.0 };
                FeatureWindow {
                    samples: (0..timesteps).map(|t| [level, 0.1 * ((i + t) % 3) as f64]).collect(),
                    label,
                    window_start: i as f64,
                }
            })
            .collect()
    }

    #[test]
    fn separable_fixture_reaches_full_training_accuracy() {
        let ws = separable(40, 4);
        let init = CnnModel::respiratory(&tiny_arch(4), 1);
        let hyper = Hyperparameters {
            max_epochs: 20,
            learning_rate: 0.01,
            patience: 20,
            ..Hyperparameters::default()
        };
        let out = train(&init, &ws, &hyper, 7).unwrap();
        assert!(out.history.len() <= 20);
        assert_eq!(accuracy(&out.model, &ws).unwrap(), 1.0);
    }

    #[test]
    fn frozen_training_stops_after_patience_plus_one_epochs() {
        let ws = separable(30, 4);
        let init = CnnModel::respiratory(&tiny_arch(4), 2);
        for patience in [0, 2, 5] {
            let hyper = Hyperparameters {
                learning_rate: 0.0,
                patience,
                ..Hyperparameters::default()
            };
            let out = train(&init, &ws, &hyper, 3).unwrap();
            assert_eq!(out.history.len(), patience + 1);
            assert!(out.stopped_early);
            assert_eq!(out.best_epoch, 1);
            assert_eq!(out.model, init);
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let ws = separable(10, 4);
        let init = CnnModel::respiratory(&tiny_arch(4), 2);
        let out = train(&init, &ws, &Hyperparameters { max_epochs: 0, ..Hyperparameters::default() }, 1).unwrap();
        assert_eq!(out.model, init);
        assert!(out.history.is_empty());
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let init = CnnModel::respiratory(&tiny_arch(4), 2);
        assert!(matches!(train(&init, &[], &Hyperparameters::default(), 1), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let ws = separable(20, 4);
        let init = CnnModel::respiratory(&Architecture { dropout: 0.2, ..tiny_arch(4) }, 4);
        let h = Hyperparameters { max_epochs: 3, ..Hyperparameters::default() };
        let a = train(&init, &ws, &h, 9).unwrap();
        let b = train(&init, &ws, &h, 9).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn observed_snapshots_match_shorter_runs() {
        let ws = separable(20, 4);
        let init = CnnModel::respiratory(&tiny_arch(4), 4);
        let h = Hyperparameters { max_epochs: 6, learning_rate: 0.01, ..Hyperparameters::default() };
        let mut snaps = Vec::new();
        train_observed(&init, &ws, &h, 5, |e, m| {
            snaps.push((e, m.clone()));
            Ok(())
        })
        .unwrap();
        for (e, m) in snaps {
            let short = train(&init, &ws, &Hyperparameters { max_epochs: e, ..h }, 5).unwrap();
            assert_eq!(short.model, m, "epoch {e}");
        }
    }

    #[test]
    fn oracle_classifier_has_zero_spread() {
        let cv = kfold(50, 10, 2, 1, |_, _, _| Ok(1.0)).unwrap();
        assert_eq!(cv.mean, 1.0);
        assert_eq!(cv.sigma_error, 0.0);
        assert_eq!(cv.folds.len(), 20);
    }

    #[test]
    fn standard_error_by_hand() {
        assert!((standard_error(0.01, 25) - 0.002).abs() < 1e-15);
    }

    #[test]
    fn folds_partition_and_are_reproducible() {
        let a = fold_assignment(23, 5, 4, 0);
        assert_eq!(a, fold_assignment(23, 5, 4, 0));
        assert_ne!(a, fold_assignment(23, 5, 4, 1));
        for f in 0..5 {
            let c = a.iter().filter(|&&x| x == f).count();
            assert!(c == 4 || c == 5);
        }
        // every index is validated exactly once per repeat
        let seen = std::sync::Mutex::new(vec![0usize; 23]);
        kfold(23, 5, 1, 4, |tr, val, _| {
            assert_eq!(tr.len() + val.len(), 23);
            let mut s = seen.lock().unwrap();
            val.iter().for_each(|&i| s[i] += 1);
            Ok(0.5)
        })
        .unwrap();
        assert!(seen.into_inner().unwrap().iter().all(|&c| c == 1));
    }

    #[test]
    fn kfold_rejects_bad_arguments() {
        assert!(kfold(10, 1, 1, 0, |_, _, _| Ok(1.0)).is_err());
        assert!(kfold(3, 5, 1, 0, |_, _, _| Ok(1.0)).is_err());
    }

    #[test]
    fn grid_selection_breaks_ties_by_lr_then_epochs() {
        let pts = vec![
            GridPoint { epochs: 20, learning_rate: 0.01, val_accuracy: 0.9 },
            GridPoint { epochs: 10, learning_rate: 0.01, val_accuracy: 0.9 },
            GridPoint { epochs: 10, learning_rate: 0.1, val_accuracy: 0.9 },
            GridPoint { epochs: 30, learning_rate: 0.001, val_accuracy: 0.8 },
        ];
        let best = select_best(&pts).unwrap();
        assert_eq!((best.epochs, best.learning_rate), (10, 0.01));
        let mut rev = pts.clone();
        rev.reverse();
        assert_eq!(select_best(&rev), Some(best));
    }

    #[test]
    fn single_point_and_two_rate_grids() {
        let ws = separable(40, 4);
        let init = CnnModel::respiratory(&tiny_arch(4), 6);
        let h = Hyperparameters::default();
        let one = TuneSpace { epochs: vec![5], learning_rates: vec![0.01] };
        let g = grid_search(&init, &ws, &one, &h, 1).unwrap();
        assert_eq!(g.points.len(), 1);
        assert_eq!((g.best.epochs, g.best.learning_rate), (5, 0.01));

        let two = TuneSpace { epochs: vec![10, 20], learning_rates: vec![0.3, 0.001] };
        let g = grid_search(&init, &ws, &two, &h, 1).unwrap();
        assert_eq!(g.points.len(), 4);
        assert_eq!(g.best.learning_rate, 0.001);
        let swapped = TuneSpace { epochs: vec![20, 10], learning_rates: vec![0.001, 0.3] };
        assert_eq!(grid_search(&init, &ws, &swapped, &h, 1).unwrap(), g);
    }

    #[test]
    fn csv_layouts() {
        let cv = kfold(20, 4, 1, 0, |_, _, _| Ok(0.75)).unwrap();
        let mut buf = Vec::new();
        write_cv_csv(&cv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("fold,repeat,accuracy\n"));
        assert!(text.contains("mean,all,0.75"));
        let grid = GridResult {
            points: vec![GridPoint { epochs: 10, learning_rate: 0.001, val_accuracy: 0.5 }],
            best: GridPoint { epochs: 10, learning_rate: 0.001, val_accuracy: 0.5 },
        };
        let mut buf = Vec::new();
        write_grid_csv(&grid, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epochs,learning_rate,val_accuracy\n10,0.001,0.5\n");
    }
}
