//! Seeded synthetic ECG/EDA recordings with controllable cross-modal
//! structure.
//!
//! Each subject's recording is a sequence of fixed-length blocks. A block
//! carries two hidden bits: `a` (ECG: faster, taller beats) and `b` (EDA:
//! raised tonic level and more frequent skin-conductance responses). How
//! the bits relate to the stress label depends on [`CrossModalMode`].

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::{Condition, Modality, SignalRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossModalMode {
    /// Both bits equal the label.
    Redundant,
    /// Stress blocks set exactly one bit (alternating which), non-stress
    /// blocks set neither; each modality alone sees only half of the
    /// stress blocks.
    Complementary,
    /// `a` equals the label, `b` is an independent coin.
    EcgOnly,
    /// `b` equals the label, `a` is an independent coin.
    EdaOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub duration_s: f64,
    pub fs_hz: f64,
    /// Fraction of blocks labelled stress.
    pub class_balance: f64,
    /// Signal-to-noise ratio of the additive Gaussian noise on both
    /// channels.
    pub snr_db: f64,
    pub cross_modal_mode: CrossModalMode,
    pub seed: u64,
    /// Length of a constant-condition block.
    pub block_s: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_subjects: 6,
            duration_s: 300.0,
            fs_hz: 700.0,
            class_balance: 0.5,
            snr_db: 10.0,
            cross_modal_mode: CrossModalMode::Complementary,
            seed: rng::default_seed(),
            block_s: 75.0,
        }
    }
}

impl SyntheticSpec {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SyntheticSpec = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        if !(self.duration_s > 0.0 && self.block_s > 0.0 && self.fs_hz > 0.0) {
            return bad("duration, block length and sampling rate must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.class_balance) {
            return bad(format!("class_balance {} outside [0, 1]", self.class_balance));
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite".into());
        }
        Ok(())
    }

    fn n_blocks(&self) -> usize {
        (self.duration_s / self.block_s).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    stress: bool,
    a: bool,
    b: bool,
    condition: Condition,
}

/// Stress flags for every subject's blocks. Counts are allocated by error
/// diffusion so the overall stress fraction tracks `class_balance`.
fn stress_plan(spec: &SyntheticSpec) -> Vec<Vec<bool>> {
    let nb = spec.n_blocks();
    let mut carry = 0.0;
    let mut plan = Vec::with_capacity(spec.n_subjects);
    for s in 0..spec.n_subjects {
        let want = spec.class_balance * nb as f64 + carry;
        let k = (want.round() as usize).min(nb);
        carry = want - k as f64;
        let mut flags: Vec<bool> = (0..nb).map(|i| i < k).collect();
        flags.shuffle(&mut rng::substream(spec.seed, &format!("synth/{s}/order")));
        plan.push(flags);
    }
    plan
}

fn assign_bits(spec: &SyntheticSpec, flags: &[bool], r: &mut ChaCha8Rng) -> Vec<Block> {
    let mut next_kind = r.random_bool(0.5);
    flags
        .iter()
        .map(|&stress| {
            let (a, b) = match spec.cross_modal_mode {
                CrossModalMode::Redundant => (stress, stress),
                CrossModalMode::Complementary if stress => {
                    next_kind = !next_kind;
                    (next_kind, !next_kind)
                }
                CrossModalMode::Complementary => (false, false),
                CrossModalMode::EcgOnly => (stress, r.random_bool(0.5)),
                CrossModalMode::EdaOnly => (r.random_bool(0.5), stress),
            };
            let condition = if stress {
                Condition::Stress
            } else if r.random_bool(0.5) {
                Condition::Neutral
            } else {
                Condition::Amusement
            };
            Block { stress, a, b, condition }
        })
        .collect()
}

fn add_noise(x: &mut [f64], snr_db: f64, r: &mut ChaCha8Rng) {
    let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
    let power = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len().max(1) as f64;
    let sd = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    if sd > 0.0 {
        let n = Normal::new(0.0, sd).expect("finite noise level");
        for v in x.iter_mut() {
            *v += n.sample(r);
        }
    }
}

fn gauss(t: f64, mu: f64, sigma: f64) -> f64 {
    let z = (t - mu) / sigma;
    (-0.5 * z * z).exp()
}

/// Beat train: P, QRS and T waves placed by an integrate-and-fire phase
/// so the rate can change between blocks without discontinuities.
fn synth_ecg(spec: &SyntheticSpec, blocks: &[Block], n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = spec.fs_hz;
    let base_hr = r.random_range(60.0..75.0);
    let base_amp = r.random_range(0.8..1.2);
    let block_len = (spec.block_s * fs).round() as usize;
    let mut beats = Vec::new();
    let mut phase = r.random_range(0.0..1.0);
    for i in 0..n {
        let blk = blocks[(i / block_len).min(blocks.len() - 1)];
        let hr = base_hr + if blk.a { 30.0 } else { 0.0 };
        phase += hr / 60.0 / fs;
        if phase >= 1.0 {
            phase -= 1.0;
            let amp = base_amp * if blk.a { 1.6 } else { 1.0 } * r.random_range(0.95..1.05);
            beats.push((i as f64 / fs, amp));
        }
    }
    let mut x = vec![0.0; n];
    let wander_f = r.random_range(0.15..0.3);
    for (i, v) in x.iter_mut().enumerate() {
        *v = 0.2 * (2.0 * std::f64::consts::PI * wander_f * i as f64 / fs).sin();
    }
    let reach = (0.5 * fs) as isize;
    for &(t, amp) in &beats {
        let c = (t * fs) as isize;
        for i in (c - reach).max(0)..(c + reach).min(n as isize) {
            let s = i as f64 / fs;
            x[i as usize] += amp
                * (0.12 * gauss(s, t - 0.16, 0.025) - 0.15 * gauss(s, t - 0.03, 0.01) + gauss(s, t, 0.008)
                    - 0.25 * gauss(s, t + 0.03, 0.01)
                    + 0.3 * gauss(s, t + 0.25, 0.04));
        }
    }
    add_noise(&mut x, spec.snr_db, r);
    x
}

/// Tonic level with smooth steps, slow drift and phasic responses.
fn synth_eda(spec: &SyntheticSpec, blocks: &[Block], n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = spec.fs_hz;
    let block_len = (spec.block_s * fs).round() as usize;
    let base = r.random_range(2.0..6.0);
    let drift_f = 1.0 / r.random_range(150.0..300.0);
    let drift_phase = r.random_range(0.0..std::f64::consts::TAU);
    let alpha = 1.0 - (-1.0 / (3.0 * fs)).exp();
    let mut level = 0.0;
    let mut x = vec![0.0; n];
    let mut next_scr = 0usize;
    let mut scrs = Vec::new();
    for (i, v) in x.iter_mut().enumerate() {
        let blk = blocks[(i / block_len).min(blocks.len() - 1)];
        let target = if blk.b { 1.0 } else { 0.0 };
        level += alpha * (target - level);
        let t = i as f64 / fs;
        *v = base + level + 0.3 * (std::f64::consts::TAU * drift_f * t + drift_phase).sin();
        if i == next_scr {
            let mean_gap = if blk.b { 5.0 } else { 20.0 };
            let gap: f64 = Exp::new(1.0 / mean_gap).expect("positive rate").sample(r);
            next_scr = i + ((gap.max(0.5)) * fs) as usize;
            if i > 0 {
                scrs.push((i, r.random_range(0.2..0.5)));
            }
        }
    }
    let reach = (20.0 * fs) as usize;
    for &(c, amp) in &scrs {
        for i in c..(c + reach).min(n) {
            let s = (i - c) as f64 / fs;
            x[i] += amp * ((-s / 4.0).exp() - (-s / 0.75).exp()) / 0.6;
        }
    }
    add_noise(&mut x, spec.snr_db, r);
    x
}

/// One ECG and one EDA record per subject (ids `syn01`, `syn02`, …),
/// fully determined by `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SignalRecord>> {
    spec.validate()?;
    let n = (spec.duration_s * spec.fs_hz).round() as usize;
    let block_len = (spec.block_s * spec.fs_hz).round() as usize;
    let plan = stress_plan(spec);
    let mut out = Vec::with_capacity(2 * spec.n_subjects);
    for (s, flags) in plan.iter().enumerate() {
        let id = format!("syn{:02}", s + 1);
        let mut r = rng::substream(spec.seed, &format!("synth/{s}/bits"));
        let blocks = assign_bits(spec, flags, &mut r);
        let labels: Vec<Condition> = (0..n)
            .map(|i| blocks[(i / block_len.max(1)).min(blocks.len() - 1)].condition)
            .collect();
        let ecg = synth_ecg(spec, &blocks, n, &mut rng::substream(spec.seed, &format!("synth/{s}/ecg")));
        let eda = synth_eda(spec, &blocks, n, &mut rng::substream(spec.seed, &format!("synth/{s}/eda")));
        debug_assert!(blocks.iter().all(|b| b.stress == (b.condition == Condition::Stress)));
        out.push(SignalRecord::new(id.clone(), Modality::Ecg, spec.fs_hz, ecg, labels.clone())?);
        out.push(SignalRecord::new(id, Modality::Eda, spec.fs_hz, eda, labels)?);
    }
    Ok(out)
}
