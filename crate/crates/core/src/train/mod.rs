//! Adam, the early-stopping training loop, metrics and k-fold
//! cross-validation.

mod adam;
mod dataset;
mod metrics;
mod probe;

pub use adam::{adam_step, AdamState};
pub use dataset::Dataset;
pub use metrics::{confusion_matrix, Evaluation};
pub use probe::linear_probe_accuracy;

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::data::{DataError, FoldPlan};
use crate::models::{self, ModelError, ModelParams, ModelSpec};
use crate::rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training config error: {0}")]
    Config(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("non-finite training loss {loss} at epoch {epoch}, batch {batch}")]
    NumericalAbort { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    Loss,
    MacroF1,
}

impl FromStr for StopMetric {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(StopMetric::Loss),
            "macro_f1" | "macro-f1" | "f1" => Ok(StopMetric::MacroF1),
            other => Err(TrainError::Config(format!("unknown stop metric {other:?}"))),
        }
    }
}

/// Where early stopping looks during cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMode {
    /// A stratified slice of each training split is held out for
    /// validation; the test fold is never seen during training.
    Holdout,
    /// Early stopping monitors the test fold itself. This reproduces a
    /// protocol without a separate validation split and gives optimistic
    /// numbers.
    TestFold,
}

impl FromStr for ValidationMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "holdout" => Ok(ValidationMode::Holdout),
            "test-fold" => Ok(ValidationMode::TestFold),
            other => Err(TrainError::Config(format!("unknown validation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    pub early_stop_patience: usize,
    pub early_stop_metric: StopMetric,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub validation: ValidationMode,
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-5,
            max_epochs: 50,
            early_stop_patience: 10,
            early_stop_metric: StopMetric::Loss,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            validation: ValidationMode::Holdout,
            holdout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be >= 1".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return fail(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return fail("adam_epsilon must be > 0".into());
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return fail(format!(
                "holdout_fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            ));
        }
        Ok(())
    }
}

/// Per-fold outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_index: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub test_size: usize,
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub train_loss_curve: Vec<f64>,
    pub val_loss_curve: Vec<f64>,
    pub val_macro_f1_curve: Vec<f64>,
}

impl FoldReport {
    fn set_evaluation(&mut self, e: Evaluation) {
        self.accuracy = e.accuracy;
        self.macro_f1 = e.macro_f1;
        self.per_class_f1 = e.per_class_f1;
        self.test_size = e.confusion.iter().flatten().sum::<u64>() as usize;
        self.confusion = e.confusion;
    }
}

/// Aggregate cross-validation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: ModelSpec,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub num_folds: usize,
    pub num_samples: usize,
    pub class_names: Vec<String>,
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
}

/// Canonical JSON: object keys sorted, two-space indentation, trailing
/// newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    // serde_json::Map is a BTreeMap, so going through Value sorts every key
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

const EVAL_BATCH: usize = 256;

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and predictions of `params` on `data`, eval mode.
fn score(spec: &ModelSpec, params: &ModelParams<f32>, data: &Dataset) -> Result<(f64, Vec<usize>)> {
    let mut loss_sum = 0.0;
    let mut preds = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let (a, b, labels) = data.batch(chunk)?;
        let mut tape = Tape::new();
        let vars = models::register_params(&mut tape, params, false);
        let va = tape.leaf(a);
        let vb = b.map(|b| tape.leaf(b));
        let mut unused = rng::stream(0, "eval", &[]);
        let out = models::forward(spec, &mut tape, &vars, va, vb, false, &mut unused)?;
        let loss = tape.softmax_cross_entropy(out.logits, &labels)?;
        loss_sum += tape.value(loss).data()[0] as f64 * chunk.len() as f64;
        let logits = tape.value(out.logits);
        preds.extend((0..chunk.len()).map(|r| argmax(logits.row(r))));
    }
    Ok((loss_sum / data.len() as f64, preds))
}

/// Accuracy, macro-F1 and confusion matrix of `params` on `data`.
pub fn evaluate(spec: &ModelSpec, params: &ModelParams<f32>, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    let (_, preds) = score(spec, params, data)?;
    Ok(Evaluation::from_predictions(&data.labels, &preds, data.num_classes()))
}

/// Class predictions in eval mode.
pub fn predict(spec: &ModelSpec, params: &ModelParams<f32>, data: &Dataset) -> Result<Vec<usize>> {
    Ok(score(spec, params, data)?.1)
}

fn check_compatible(spec: &ModelSpec, data: &Dataset, what: &'static str) -> Result<()> {
    if data.is_empty() {
        return Err(TrainError::EmptySplit(what));
    }
    if data.input_dims() != spec.input_dims {
        return Err(TrainError::Config(format!(
            "{what} split has input dims {:?}, model expects {:?}",
            data.input_dims(),
            spec.input_dims
        )));
    }
    if data.num_classes() != spec.num_classes {
        return Err(TrainError::Config(format!(
            "{what} split has {} classes, model expects {}",
            data.num_classes(),
            spec.num_classes
        )));
    }
    Ok(())
}

/// Trains from `init` with shuffled mini-batches and Adam, evaluating the
/// stop metric on `val` after every epoch. Returns the parameters of the best
/// epoch and a report whose metrics are measured on `val`.
pub fn train_fold(
    spec: &ModelSpec,
    init: ModelParams<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    fold_index: usize,
) -> Result<(ModelParams<f32>, FoldReport)> {
    cfg.validate()?;
    spec.validate()?;
    init.check_against(spec)?;
    check_compatible(spec, train, "train")?;
    check_compatible(spec, val, "validation")?;

    let mut params = init;
    let mut adam = AdamState::new();
    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;
    let mut since_best = 0;
    let mut report = FoldReport {
        fold_index,
        accuracy: 0.0,
        macro_f1: 0.0,
        per_class_f1: Vec::new(),
        confusion: Vec::new(),
        test_size: 0,
        epochs_run: 0,
        best_epoch: 0,
        train_loss_curve: Vec::new(),
        val_loss_curve: Vec::new(),
        val_macro_f1_curve: Vec::new(),
    };

    let fold = fold_index as u64;
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, "shuffle", &[fold, epoch as u64]));
        let mut dropout_rng = rng::stream(cfg.seed, "dropout", &[fold, epoch as u64]);

        let mut epoch_loss = 0.0;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (a, b, labels) = train.batch(chunk)?;
            let mut tape = Tape::new();
            let vars = models::register_params(&mut tape, &params, true);
            let va = tape.leaf(a);
            let vb = b.map(|b| tape.leaf(b));
            let out = models::forward(spec, &mut tape, &vars, va, vb, true, &mut dropout_rng)?;
            let loss_var = tape.softmax_cross_entropy(out.logits, &labels)?;
            let loss = tape.value(loss_var).data()[0] as f64;
            if !loss.is_finite() {
                return Err(TrainError::NumericalAbort {
                    epoch: epoch + 1,
                    batch: batch_index,
                    loss,
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            tape.backward(loss_var)?;
            let grads: BTreeMap<String, Vec<f32>> = vars
                .iter()
                .map(|(name, &v)| (name.clone(), tape.take_grad(v).unwrap_or_default()))
                .collect();
            adam_step(&mut params, &grads, &mut adam, cfg)?;
        }
        report.train_loss_curve.push(epoch_loss / train.len() as f64);
        report.epochs_run = epoch + 1;

        let (val_loss, preds) = score(spec, &params, val)?;
        let val_f1 = Evaluation::from_predictions(&val.labels, &preds, val.num_classes()).macro_f1;
        report.val_loss_curve.push(val_loss);
        report.val_macro_f1_curve.push(val_f1);

        // lower is better for both keys
        let key = match cfg.early_stop_metric {
            StopMetric::Loss => val_loss,
            StopMetric::MacroF1 => -val_f1,
        };
        let improved = best.as_ref().is_none_or(|(b, ..)| key < *b);
        if improved {
            best = Some((key, epoch + 1, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch runs");
    report.best_epoch = best_epoch;
    report.set_evaluation(evaluate(spec, &best_params, val)?);
    Ok((best_params, report))
}

/// Stratified hold-out carved from `train_idx` (positions into `data`).
fn holdout_split(data: &Dataset, train_idx: &[usize], fraction: f64, seed: u64, fold: usize) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in train_idx {
        by_class.entry(data.labels[i]).or_default().push(i);
    }
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for (class, mut members) in by_class {
        members.shuffle(&mut rng::stream(seed, "holdout", &[fold as u64, class as u64]));
        let take = if members.len() >= 2 {
            ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len() - 1)
        } else {
            0
        };
        val.extend_from_slice(&members[..take]);
        fit.extend_from_slice(&members[take..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    (fit, val)
}

/// Seed for the initial parameters of `fold`.
fn init_seed(seed: u64, fold: usize) -> u64 {
    rng::stream(seed, "fold-init", &[fold as u64]).random()
}

/// Single training run on all of `data`: a stratified hold-out of
/// `cfg.holdout_fraction` drives early stopping and the report's metrics.
pub fn train_holdout(data: &Dataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<(ModelParams<f32>, FoldReport)> {
    cfg.validate()?;
    spec.validate()?;
    let all: Vec<usize> = (0..data.len()).collect();
    let (fit_idx, val_idx) = holdout_split(data, &all, cfg.holdout_fraction, cfg.seed, 0);
    if val_idx.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let fit = data.subset(&fit_idx)?;
    let val = data.subset(&val_idx)?;
    let init = models::build::<f32>(spec, init_seed(cfg.seed, 0))?;
    train_fold(spec, init, &fit, &val, cfg, 0)
}

/// k-fold cross-validation: each fold is the test split once while the model
/// trains on the rest. Folds run on the current rayon pool and are joined in
/// fold order.
pub fn cross_validate(data: &Dataset, spec: &ModelSpec, cfg: &TrainConfig, plan: &FoldPlan) -> Result<CvReport> {
    cfg.validate()?;
    spec.validate()?;
    let folds = plan.fold_indices(&data.ids)?;
    if let Some(empty) = folds.iter().position(|f| f.is_empty()) {
        return Err(TrainError::Config(format!("fold {empty} is empty")));
    }

    let reports: Vec<FoldReport> = (0..plan.num_folds)
        .into_par_iter()
        .map(|f| -> Result<FoldReport> {
            let test_idx = &folds[f];
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            let test = data.subset(test_idx)?;
            let init = models::build::<f32>(spec, init_seed(cfg.seed, f))?;
            let mut report = match cfg.validation {
                ValidationMode::TestFold => {
                    let train = data.subset(&train_idx)?;
                    train_fold(spec, init, &train, &test, cfg, f)?.1
                }
                ValidationMode::Holdout => {
                    let (fit_idx, val_idx) = holdout_split(data, &train_idx, cfg.holdout_fraction, cfg.seed, f);
                    let fit = data.subset(&fit_idx)?;
                    let val = data.subset(&val_idx)?;
                    let (params, mut report) = train_fold(spec, init, &fit, &val, cfg, f)?;
                    report.set_evaluation(evaluate(spec, &params, &test)?);
                    report
                }
            };
            report.fold_index = f;
            Ok(report)
        })
        .collect::<Result<_>>()?;

    let k = reports.len() as f64;
    let mean_accuracy = reports.iter().map(|r| r.accuracy).sum::<f64>() / k;
    let mean_macro_f1 = reports.iter().map(|r| r.macro_f1).sum::<f64>() / k;
    Ok(CvReport {
        model: spec.clone(),
        train_config: cfg.clone(),
        seed: cfg.seed,
        num_folds: plan.num_folds,
        num_samples: data.len(),
        class_names: data.class_names.clone(),
        folds: reports,
        mean_accuracy,
        mean_macro_f1,
    })
}

/// Cast helper for callers holding `f64` inputs.
pub fn tensor_from_rows(rows: &[Vec<f32>]) -> Result<Tensor<f32>> {
    let dim = rows.first().map_or(0, |r| r.len());
    let data: Vec<f32> = rows.iter().flatten().copied().collect();
    Ok(Tensor::new(vec![rows.len(), dim], data)?)
}
