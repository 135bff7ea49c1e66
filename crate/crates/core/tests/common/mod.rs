//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use attx::data::{generate_synthetic, CrossModalMode, SyntheticSpec};
use attx::model::{ModelSpec, StreamConfig};
use attx::signal::{build_dataset, BinaryLabel, PipelineConfig, WindowPair};
use attx::Tensor;

pub fn tiny_stream() -> StreamConfig {
    StreamConfig {
        widths: [4, 4, 4],
        kernel: 3,
        strides: [4, 4, 2],
        se_reduction: 2,
        stage1_blocks: 1,
        stage4_width: 4,
    }
}

/// Small model for fast end-to-end tests.
pub fn tiny_spec() -> ModelSpec {
    ModelSpec {
        ecg: tiny_stream(),
        eda: tiny_stream(),
        ..ModelSpec::default()
    }
}

/// The compact configuration used for the synthetic benchmark.
pub fn bench_stream() -> StreamConfig {
    StreamConfig {
        widths: [8, 16, 16],
        kernel: 7,
        strides: [4, 4, 2],
        se_reduction: 4,
        stage1_blocks: 1,
        stage4_width: 16,
    }
}

pub fn synthetic_windows(spec: &SyntheticSpec) -> Vec<WindowPair> {
    let records = generate_synthetic(spec).unwrap();
    build_dataset(&records, &PipelineConfig::default()).unwrap()
}

pub fn small_synthetic(mode: CrossModalMode, n_subjects: usize, duration_s: f64, seed: u64) -> Vec<WindowPair> {
    synthetic_windows(&SyntheticSpec {
        n_subjects,
        duration_s,
        block_s: duration_s / 4.0,
        cross_modal_mode: mode,
        seed,
        ..SyntheticSpec::default()
    })
}

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape.to_vec(), 1.0, &mut attx::rng::substream(seed, "test"))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Per-window summary statistics a brute-force classifier may use: the
/// ECG standard deviation (beat energy) and the EDA mean (tonic level).
pub fn window_stats(w: &WindowPair) -> (f64, f64) {
    let n = w.ecg.len() as f64;
    let me = w.ecg.iter().sum::<f64>() / n;
    let sd = (w.ecg.iter().map(|v| (v - me) * (v - me)).sum::<f64>() / n).sqrt();
    let md = w.eda.iter().sum::<f64>() / n;
    (sd, md)
}

fn quantile_edges(vals: &[f64], bins: usize) -> Vec<f64> {
    let mut s = vals.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (1..bins).map(|i| s[i * s.len() / bins]).collect()
}

fn bin_of(edges: &[f64], v: f64) -> usize {
    edges.iter().take_while(|&&e| v >= e).count()
}

/// Accuracy of the best classifier that sees only the (binned) feature
/// keys: majority label per key, fitted on `fit` and scored on `score`.
fn majority_accuracy(fit: &[(Vec<usize>, usize)], score: &[(Vec<usize>, usize)]) -> f64 {
    use std::collections::HashMap;
    let mut counts: HashMap<&[usize], [usize; 2]> = HashMap::new();
    for (k, y) in fit {
        counts.entry(k.as_slice()).or_default()[*y] += 1;
    }
    let global = {
        let ones = fit.iter().filter(|(_, y)| *y == 1).count();
        usize::from(2 * ones > fit.len())
    };
    let correct = score
        .iter()
        .filter(|(k, y)| {
            let pred = counts.get(k.as_slice()).map_or(global, |c| usize::from(c[1] > c[0]));
            pred == *y
        })
        .count();
    correct as f64 / score.len() as f64
}

#[derive(Debug, Clone, Copy)]
pub struct BayesOracle {
    pub ecg_only: f64,
    pub eda_only: f64,
    pub joint: f64,
}

/// Brute-force Bayes accuracy over quantile-binned window statistics.
/// With `held_out = None` the table is fitted and scored on the same
/// windows (an optimistic estimate); otherwise it is fitted on `windows`
/// and scored on `held_out`.
pub fn bayes_oracle(windows: &[WindowPair], held_out: Option<&[WindowPair]>, bins: usize) -> BayesOracle {
    let stats: Vec<(f64, f64)> = windows.iter().map(window_stats).collect();
    let e_edges = quantile_edges(&stats.iter().map(|s| s.0).collect::<Vec<_>>(), bins);
    let d_edges = quantile_edges(&stats.iter().map(|s| s.1).collect::<Vec<_>>(), bins);
    let keys = |ws: &[WindowPair], which: u8| -> Vec<(Vec<usize>, usize)> {
        ws.iter()
            .map(|w| {
                let (e, d) = window_stats(w);
                let k = match which {
                    0 => vec![bin_of(&e_edges, e)],
                    1 => vec![bin_of(&d_edges, d)],
                    _ => vec![bin_of(&e_edges, e), bin_of(&d_edges, d)],
                };
                (k, usize::from(w.label == BinaryLabel::Stress))
            })
            .collect()
    };
    let score_set = held_out.unwrap_or(windows);
    let acc = |which| majority_accuracy(&keys(windows, which), &keys(score_set, which));
    BayesOracle {
        ecg_only: acc(0),
        eda_only: acc(1),
        joint: acc(2),
    }
}
