use log::warn;

use super::{BinaryLabel, Condition};
use crate::error::{Error, Result};

pub const ZSCORE_EPS: f64 = 1e-8;

/// `(x − mean) / max(std, 1e-8)` with the population standard deviation.
/// A constant signal maps to zeros (with a warning).
pub fn zscore_subject(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < ZSCORE_EPS {
        warn!("z-score of a constant signal ({} samples); returning zeros", x.len());
    }
    let denom = std.max(ZSCORE_EPS);
    x.iter().map(|v| (v - mean) / denom).collect()
}

/// Window start offsets for a signal of `n` samples.
pub fn window_starts(n: usize, len: usize, hop: usize) -> impl Iterator<Item = usize> {
    let count = if n >= len { (n - len) / hop + 1 } else { 0 };
    (0..count).map(move |i| i * hop)
}

/// Majority condition over a window. Ties go to stress first, then
/// neutral, then amusement.
pub fn majority(labels: &[Condition]) -> Condition {
    let mut counts = [0usize; 4];
    for &c in labels {
        counts[c as usize] += 1;
    }
    const PRIORITY: [Condition; 4] = [Condition::Stress, Condition::Neutral, Condition::Amusement, Condition::Other];
    let best = *counts.iter().max().unwrap_or(&0);
    PRIORITY.into_iter().find(|&c| counts[c as usize] == best).unwrap_or(Condition::Other)
}

/// A window cut from one signal: its start offset, samples and label.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    pub samples: Vec<f64>,
    pub condition: Condition,
}

/// Fixed-length windows with hop `len · (1 − overlap)`, labelled by
/// majority vote; windows whose majority is `Other` are dropped.
pub fn segment(x: &[f64], labels: &[Condition], len: usize, hop: usize) -> Vec<Window> {
    debug_assert_eq!(x.len(), labels.len());
    let n = x.len().min(labels.len());
    window_starts(n, len, hop)
        .filter_map(|s| {
            let condition = majority(&labels[s..s + len]);
            (condition != Condition::Other).then(|| Window {
                start: s,
                samples: x[s..s + len].to_vec(),
                condition,
            })
        })
        .collect()
}

/// Stress stays stress; neutral and amusement become non-stress.
pub fn binarize(c: Condition) -> Result<BinaryLabel> {
    match c {
        Condition::Stress => Ok(BinaryLabel::Stress),
        Condition::Neutral | Condition::Amusement => Ok(BinaryLabel::NonStress),
        Condition::Other => Err(Error::InvalidCondition(
            "`other` segments must be discarded before labelling".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zscore_examples() {
        assert_eq!(zscore_subject(&[-1.0, 1.0]), vec![-1.0, 1.0]);
        assert_eq!(zscore_subject(&[4.0; 10]), vec![0.0; 10]);
    }

    #[test]
    fn window_counts() {
        let l = vec![Condition::Stress; 15360];
        assert_eq!(segment(&vec![0.0; 2560], &l[..2560], 2560, 1280).len(), 1);
        assert_eq!(segment(&vec![0.0; 15360], &l, 2560, 1280).len(), 11);
        assert_eq!(segment(&vec![0.0; 2559], &l[..2559], 2560, 1280).len(), 0);
        assert!(segment(&vec![0.0; 15360], &l, 2560, 1280)
            .iter()
            .all(|w| w.condition == Condition::Stress));
    }

    #[test]
    fn majority_and_ties() {
        use Condition::*;
        assert_eq!(majority(&[Neutral, Neutral, Stress]), Neutral);
        assert_eq!(majority(&[Neutral, Stress]), Stress);
        assert_eq!(majority(&[Amusement, Stress]), Stress);
        assert_eq!(majority(&[Amusement, Neutral]), Neutral);
        assert_eq!(majority(&[Other, Other, Neutral]), Other);
    }

    #[test]
    fn other_windows_are_dropped() {
        let mut l = vec![Condition::Other; 5120];
        l[..2560].iter_mut().for_each(|c| *c = Condition::Amusement);
        let w = segment(&vec![0.0; 5120], &l, 2560, 1280);
        // starts 0 (amusement), 1280 (tie amusement/other -> amusement), 2560 (other)
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|w| w.condition == Condition::Amusement));
    }

    #[test]
    fn binary_mapping() {
        assert_eq!(binarize(Condition::Stress).unwrap(), BinaryLabel::Stress);
        assert_eq!(binarize(Condition::Neutral).unwrap(), BinaryLabel::NonStress);
        assert_eq!(binarize(Condition::Amusement).unwrap(), BinaryLabel::NonStress);
        assert!(binarize(Condition::Other).is_err());
    }

    proptest! {
        #[test]
        fn window_count_formula(n in 0usize..40_000) {
            let expect = if n >= 2560 { (n - 2560) / 1280 + 1 } else { 0 };
            prop_assert_eq!(window_starts(n, 2560, 1280).count(), expect);
        }

        #[test]
        fn zscore_statistics(x in prop::collection::vec(-1e3f64..1e3, 2..400)) {
            let n = x.len() as f64;
            let m = x.iter().sum::<f64>() / n;
            let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            prop_assume!(sd > 1e-3);
            let z = zscore_subject(&x);
            let zm = z.iter().sum::<f64>() / n;
            let zsd = (z.iter().map(|v| (v - zm).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(zm.abs() < 1e-9);
            prop_assert!((zsd - 1.0).abs() < 1e-9);
        }
    }
}
