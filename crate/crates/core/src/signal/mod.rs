//! Preprocessing from raw 700 Hz recordings to labelled 10 s window
//! pairs: filter → per-subject z-score → resample to 256 Hz → window →
//! binary label.

mod filter;
mod resample;
mod window;

use log::warn;
use serde::{Deserialize, Serialize};

pub use filter::{design_butterworth, filter_signal, Biquad, BiquadCascade, FilterKind};
pub use resample::{resample, resample_labels, resampled_len, ANTI_ALIAS_FRACTION};
pub use window::{binarize, majority, segment, window_starts, zscore_subject, Window, ZSCORE_EPS};

use crate::error::{Error, Result};
use crate::par;

/// Output sampling rate of the pipeline.
pub const TARGET_FS_HZ: f64 = 256.0;
/// Samples per window (10 s at 256 Hz).
pub const WINDOW_LEN: usize = 2560;
/// Window hop (50 % overlap).
pub const WINDOW_HOP: usize = 1280;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Ecg,
    Eda,
}

/// Per-sample protocol condition. Discriminants follow the WESAD label
/// coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Condition {
    Other = 0,
    Neutral = 1,
    Stress = 2,
    Amusement = 3,
}

impl Condition {
    /// Decode a protocol integer; `None` for unknown codes.
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(Condition::Other),
            1 => Some(Condition::Neutral),
            2 => Some(Condition::Stress),
            3 => Some(Condition::Amusement),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    NonStress,
    Stress,
}

impl BinaryLabel {
    /// Class index used by the classifier (non-stress 0, stress 1).
    pub fn class_index(self) -> usize {
        match self {
            BinaryLabel::NonStress => 0,
            BinaryLabel::Stress => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(BinaryLabel::NonStress),
            1 => Some(BinaryLabel::Stress),
            _ => None,
        }
    }
}

/// One subject's continuous recording of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub subject_id: String,
    pub modality: Modality,
    pub fs_hz: f64,
    pub samples: Vec<f64>,
    pub condition_labels: Vec<Condition>,
}

impl SignalRecord {
    pub fn new(
        subject_id: impl Into<String>,
        modality: Modality,
        fs_hz: f64,
        samples: Vec<f64>,
        condition_labels: Vec<Condition>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        if !(fs_hz > 0.0) {
            return Err(Error::Subject {
                subject: subject_id,
                detail: format!("sampling rate {fs_hz} must be positive"),
            });
        }
        if samples.len() != condition_labels.len() {
            return Err(Error::Subject {
                subject: subject_id,
                detail: format!(
                    "{:?}: {} samples but {} labels",
                    modality,
                    samples.len(),
                    condition_labels.len()
                ),
            });
        }
        Ok(SignalRecord {
            subject_id,
            modality,
            fs_hz,
            samples,
            condition_labels,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs_hz
    }
}

/// Aligned ECG/EDA windows with one binary label: the training unit.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub subject_id: String,
    pub ecg: Vec<f64>,
    pub eda: Vec<f64>,
    pub label: BinaryLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ecg_band_hz: [f64; 2],
    pub eda_lowpass_hz: f64,
    pub filter_order: usize,
    /// Forward-backward filtering instead of causal filtering.
    pub zero_phase: bool,
    pub target_fs_hz: f64,
    pub window_s: f64,
    pub overlap: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            ecg_band_hz: [5.0, 15.0],
            eda_lowpass_hz: 3.0,
            filter_order: 4,
            zero_phase: false,
            target_fs_hz: TARGET_FS_HZ,
            window_s: 10.0,
            overlap: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn window_len(&self) -> usize {
        (self.window_s * self.target_fs_hz).round() as usize
    }

    pub fn hop(&self) -> usize {
        ((self.window_len() as f64) * (1.0 - self.overlap)).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("overlap {} outside [0, 1)", self.overlap)));
        }
        if self.window_len() == 0 {
            return Err(Error::Config("window length is zero".into()));
        }
        if self.filter_order == 0 {
            return Err(Error::Config("filter order must be positive".into()));
        }
        Ok(())
    }

    fn filter_for(&self, modality: Modality, fs_hz: f64) -> Result<BiquadCascade> {
        match modality {
            Modality::Ecg => design_butterworth(FilterKind::Bandpass, self.filter_order, &self.ecg_band_hz, fs_hz),
            Modality::Eda => design_butterworth(FilterKind::Lowpass, self.filter_order, &[self.eda_lowpass_hz], fs_hz),
        }
    }

    /// Filter, z-score and resample one channel.
    pub fn condition_channel(&self, modality: Modality, x: &[f64], fs_hz: f64) -> Result<Vec<f64>> {
        let f = self.filter_for(modality, fs_hz)?;
        let filtered = if self.zero_phase { f.filtfilt(x) } else { f.filter(x) };
        let z = zscore_subject(&filtered);
        Ok(resample(&z, fs_hz, self.target_fs_hz))
    }
}

/// Run the full preprocessing chain for every subject and pair ECG/EDA
/// windows by start index.
///
/// Subjects missing a modality are skipped with a warning; recordings of
/// different length are truncated to the common span.
pub fn build_dataset(records: &[SignalRecord], cfg: &PipelineConfig) -> Result<Vec<WindowPair>> {
    cfg.validate()?;
    let mut subjects: Vec<&str> = Vec::new();
    for r in records {
        if !subjects.contains(&r.subject_id.as_str()) {
            subjects.push(&r.subject_id);
        }
    }
    let per_subject = par::map(&subjects, |&sid| {
        let find = |m: Modality| records.iter().find(|r| r.subject_id == sid && r.modality == m);
        match (find(Modality::Ecg), find(Modality::Eda)) {
            (Some(ecg), Some(eda)) => subject_windows(ecg, eda, cfg),
            _ => {
                warn!("subject `{sid}` lacks ECG or EDA; skipped");
                Ok(Vec::new())
            }
        }
    });
    let mut out = Vec::new();
    for w in per_subject {
        out.extend(w?);
    }
    Ok(out)
}

fn subject_windows(ecg: &SignalRecord, eda: &SignalRecord, cfg: &PipelineConfig) -> Result<Vec<WindowPair>> {
    let sid = &ecg.subject_id;
    if ecg.fs_hz != eda.fs_hz {
        return Err(Error::Subject {
            subject: sid.clone(),
            detail: format!("ECG at {} Hz but EDA at {} Hz", ecg.fs_hz, eda.fs_hz),
        });
    }
    let n = ecg.samples.len().min(eda.samples.len());
    if ecg.samples.len() != eda.samples.len() {
        warn!(
            "subject `{sid}`: ECG has {} samples, EDA {}; truncating to {n}",
            ecg.samples.len(),
            eda.samples.len()
        );
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if ecg.condition_labels[..n] != eda.condition_labels[..n] {
        warn!("subject `{sid}`: ECG and EDA condition labels differ; using the ECG labels");
    }
    let fs = ecg.fs_hz;
    let ecg_c = cfg.condition_channel(Modality::Ecg, &ecg.samples[..n], fs)?;
    let eda_c = cfg.condition_channel(Modality::Eda, &eda.samples[..n], fs)?;
    let labels = resample_labels(&ecg.condition_labels[..n], fs, cfg.target_fs_hz);

    let ecg_w = segment(&ecg_c, &labels, cfg.window_len(), cfg.hop());
    let eda_w = segment(&eda_c, &labels, cfg.window_len(), cfg.hop());
    debug_assert_eq!(ecg_w.len(), eda_w.len());
    ecg_w
        .into_iter()
        .zip(eda_w)
        .map(|(e, d)| {
            debug_assert_eq!(e.start, d.start);
            Ok(WindowPair {
                subject_id: sid.clone(),
                ecg: e.samples,
                eda: d.samples,
                label: binarize(e.condition)?,
            })
        })
        .collect()
}
