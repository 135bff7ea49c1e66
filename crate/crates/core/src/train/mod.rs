//! Minibatch training, evaluation metrics, leave-one-subject-out
//! evaluation and the ablation runner.

mod ablation;
mod loso;
mod metrics;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use ablation::{ablation_run, AblationResult, AblationRow, AblationTable, Grid};
pub use loso::{check_no_leakage, loso_evaluate, loso_folds, Fold, FoldReport, LosoReport};
pub use metrics::{compute_metrics, from_confusion, MeanMetrics, Metrics};

use crate::autograd::{Mode, Tape};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{AdamConfig, AdamState};
use crate::rng;
use crate::signal::WindowPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 16,
            epochs: 100,
            seed: rng::default_seed(),
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is not a finite non-negative number", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Sample-weighted mean cross-entropy per epoch.
    pub loss_history: Vec<f64>,
    pub steps: u64,
}

/// Train `model` in place with Adam on cross-entropy.
///
/// Each epoch visits every window once in minibatches of
/// `cfg.batch_size` (the last batch may be smaller), reshuffled per epoch
/// from the `shuffle` substream of `cfg.seed`.
pub fn train(model: &mut Model, windows: &[&WindowPair], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let labels: Vec<usize> = windows.iter().map(|w| w.label.class_index()).collect();
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::Training(format!(
            "training set of {} windows contains a single class",
            windows.len()
        )));
    }
    let mut adam = AdamState::new(
        &model.store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut shuffle_rng = rng::substream(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&WindowPair> = idx.iter().map(|&i| windows[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let f = model.forward_pairs(&mut tape, &batch, Mode::Train)?;
            let loss = tape.cross_entropy(f.logits, &y)?;
            tape.backward(loss)?;
            tape.write_grads(&mut model.store);
            adam.step(&mut model.store)?;
            total += tape.value(loss)[0] * idx.len() as f64;
        }
        let mean = total / windows.len() as f64;
        debug!("epoch {}: loss {mean:.6}", epoch + 1);
        history.push(mean);
    }
    if let Some(last) = history.last() {
        info!("trained {} epochs on {} windows, final loss {last:.6}", cfg.epochs, windows.len());
    }
    Ok(TrainReport {
        loss_history: history,
        steps: adam.t,
    })
}

/// Predicted class per window, evaluated in eval mode in chunks of
/// `batch_size`.
pub fn predict(model: &mut Model, windows: &[&WindowPair], batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch_size.max(1)) {
        for p in model.predict_proba(chunk)? {
            out.push(argmax(&p));
        }
    }
    Ok(out)
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Metrics of `model` on `windows`.
pub fn evaluate(model: &mut Model, windows: &[&WindowPair], batch_size: usize) -> Result<Metrics> {
    let preds = predict(model, windows, batch_size)?;
    let labels: Vec<usize> = windows.iter().map(|w| w.label.class_index()).collect();
    compute_metrics(&preds, &labels, model.spec().n_classes)
}
