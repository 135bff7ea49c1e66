use std::collections::{BTreeMap, HashSet};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{evaluate, train, MeanMetrics, Metrics, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::par;
use crate::signal::WindowPair;
use crate::train::metrics::from_confusion;

/// One leave-one-subject-out split.
#[derive(Debug, Clone)]
pub struct Fold<'a> {
    pub index: usize,
    pub held_out: String,
    pub train: Vec<&'a WindowPair>,
    pub test: Vec<&'a WindowPair>,
}

/// Splits holding out each subject in turn, subjects sorted by id.
pub fn loso_folds(dataset: &[WindowPair]) -> Vec<Fold<'_>> {
    let mut by_subject: BTreeMap<&str, Vec<&WindowPair>> = BTreeMap::new();
    for w in dataset {
        by_subject.entry(&w.subject_id).or_default().push(w);
    }
    by_subject
        .iter()
        .enumerate()
        .map(|(index, (&s, test))| Fold {
            index,
            held_out: s.to_string(),
            train: dataset.iter().filter(|w| w.subject_id != s).collect(),
            test: test.clone(),
        })
        .collect()
}

fn content_key(w: &WindowPair) -> Vec<u64> {
    w.ecg.iter().chain(&w.eda).map(|v| v.to_bits()).collect()
}

/// Fail if a test subject appears in training or a test window's
/// content appears verbatim in the training set.
pub fn check_no_leakage(train: &[&WindowPair], test: &[&WindowPair]) -> Result<()> {
    let test_subjects: HashSet<&str> = test.iter().map(|w| w.subject_id.as_str()).collect();
    if let Some(w) = train.iter().find(|w| test_subjects.contains(w.subject_id.as_str())) {
        return Err(Error::Leakage(format!("subject `{}` is in both train and test", w.subject_id)));
    }
    let seen: HashSet<Vec<u64>> = train.iter().map(|w| content_key(w)).collect();
    if let Some(w) = test.iter().find(|w| seen.contains(&content_key(w))) {
        return Err(Error::Leakage(format!(
            "a test window of subject `{}` also occurs in the training set",
            w.subject_id
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub held_out_subject: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Metrics,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub folds: Vec<FoldReport>,
    /// Unweighted mean over folds.
    pub mean: MeanMetrics,
    /// Metrics of all test predictions pooled across folds.
    pub pooled: Metrics,
}

/// Train a fresh model per held-out subject and test on that subject.
///
/// Fold `i` (subjects in sorted order) is initialised and shuffled with
/// seed `cfg.seed + i`. Folds run in parallel when enabled; results do
/// not depend on scheduling.
pub fn loso_evaluate(dataset: &[WindowPair], spec: &ModelSpec, cfg: &TrainConfig) -> Result<LosoReport> {
    spec.validate()?;
    cfg.validate()?;
    let folds = loso_folds(dataset);
    if folds.len() < 2 {
        return Err(Error::Training(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            folds.len()
        )));
    }
    let results = par::map(&folds, |fold| run_fold(fold, spec, cfg));
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        if let Some(rep) = r? {
            reports.push(rep);
        }
    }
    let mean = MeanMetrics::of(reports.iter().map(|r| &r.metrics))
        .ok_or_else(|| Error::Training("no fold produced a result".into()))?;
    let k = spec.n_classes;
    let mut pooled = vec![vec![0usize; k]; k];
    for r in &reports {
        for (t, row) in r.metrics.confusion.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                pooled[t][p] += c;
            }
        }
    }
    Ok(LosoReport {
        folds: reports,
        mean,
        pooled: from_confusion(pooled),
    })
}

fn run_fold(fold: &Fold<'_>, spec: &ModelSpec, cfg: &TrainConfig) -> Result<Option<FoldReport>> {
    if fold.test.is_empty() || fold.train.is_empty() {
        warn!("fold `{}` has no test or training windows; skipped", fold.held_out);
        return Ok(None);
    }
    check_no_leakage(&fold.train, &fold.test)?;
    let seed = cfg.seed.wrapping_add(fold.index as u64);
    let fold_cfg = TrainConfig { seed, ..cfg.clone() };
    let mut model = Model::new(spec, seed)?;
    let rep = train(&mut model, &fold.train, &fold_cfg)?;
    let metrics = evaluate(&mut model, &fold.test, cfg.batch_size)?;
    info!(
        "fold {}: held out `{}`, accuracy {:.4}, macro F1 {:.4}",
        fold.index, fold.held_out, metrics.accuracy, metrics.macro_f1
    );
    Ok(Some(FoldReport {
        held_out_subject: fold.held_out.clone(),
        seed,
        n_train: fold.train.len(),
        n_test: fold.test.len(),
        metrics,
        loss_history: rep.loss_history,
    }))
}
