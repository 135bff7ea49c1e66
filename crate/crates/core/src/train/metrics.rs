use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification metrics with a `[true][predicted]` confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
}

/// Metrics of `preds` against `labels` over `n_classes` classes.
pub fn compute_metrics(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Metrics> {
    if preds.len() != labels.len() {
        return Err(Error::Metrics(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Metrics("no samples".into()));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::Metrics(format!("class index out of range: pred {p}, label {t}")));
        }
        confusion[t][p] += 1;
    }
    Ok(from_confusion(confusion))
}

/// Metrics of a confusion matrix (rows true class, columns predicted).
pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Metrics {
    let k = confusion.len();
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let mut per_class_f1 = Vec::with_capacity(k);
    let mut weighted = 0.0;
    for c in 0..k {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let denom = support + predicted;
        let f1 = if denom == 0 {
            warn!("class {c} absent from labels and predictions; its F1 counts as 0");
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
        per_class_f1.push(f1);
        weighted += f1 * support as f64;
    }
    let total_f = total.max(1) as f64;
    Metrics {
        accuracy: correct as f64 / total_f,
        macro_f1: per_class_f1.iter().sum::<f64>() / k as f64,
        weighted_f1: weighted / total_f,
        per_class_f1,
        confusion,
    }
}

/// Unweighted mean of accuracy and F1 scores over folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

impl MeanMetrics {
    pub fn of<'a>(ms: impl IntoIterator<Item = &'a Metrics>) -> Option<Self> {
        let mut n = 0usize;
        let mut acc = MeanMetrics {
            accuracy: 0.0,
            macro_f1: 0.0,
            weighted_f1: 0.0,
        };
        for m in ms {
            n += 1;
            acc.accuracy += m.accuracy;
            acc.macro_f1 += m.macro_f1;
            acc.weighted_f1 += m.weighted_f1;
        }
        (n > 0).then(|| MeanMetrics {
            accuracy: acc.accuracy / n as f64,
            macro_f1: acc.macro_f1 / n as f64,
            weighted_f1: acc.weighted_f1 / n as f64,
        })
    }
}
