use super::filter::{design_butterworth, FilterKind};
use super::Condition;

/// Fraction of the output rate used as the anti-alias cutoff.
pub const ANTI_ALIAS_FRACTION: f64 = 0.45;
const ANTI_ALIAS_ORDER: usize = 4;

/// Output length for `n` input samples: `floor(n · to / from)`.
pub fn resampled_len(n: usize, from_hz: f64, to_hz: f64) -> usize {
    // Integer arithmetic when both rates are whole numbers keeps the
    // length exact (7000 · 256 / 700 = 2560).
    if from_hz.fract() == 0.0 && to_hz.fract() == 0.0 {
        ((n as u128 * to_hz as u128) / from_hz as u128) as usize
    } else {
        (n as f64 * to_hz / from_hz).floor() as usize
    }
}

/// Rate conversion for decimation: zero-phase Butterworth anti-alias
/// lowpass at `0.45 · to_hz`, then linear interpolation at the output
/// sample instants.
pub fn resample(x: &[f64], from_hz: f64, to_hz: f64) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let filtered;
    let src: &[f64] = if to_hz < from_hz && ANTI_ALIAS_FRACTION * to_hz < from_hz / 2.0 {
        let aa = design_butterworth(FilterKind::Lowpass, ANTI_ALIAS_ORDER, &[ANTI_ALIAS_FRACTION * to_hz], from_hz)
            .expect("anti-alias cutoff is below Nyquist");
        filtered = aa.filtfilt(x);
        &filtered
    } else {
        x
    };
    let n = src.len();
    let ratio = from_hz / to_hz;
    (0..resampled_len(n, from_hz, to_hz))
        .map(|k| {
            let pos = k as f64 * ratio;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if i + 1 >= n {
                src[n - 1]
            } else {
                src[i] * (1.0 - frac) + src[i + 1] * frac
            }
        })
        .collect()
}

/// Nearest-sample resampling of per-sample condition codes.
pub fn resample_labels(labels: &[Condition], from_hz: f64, to_hz: f64) -> Vec<Condition> {
    if labels.is_empty() {
        return Vec::new();
    }
    let ratio = from_hz / to_hz;
    (0..resampled_len(labels.len(), from_hz, to_hz))
        .map(|k| labels[((k as f64 * ratio).round() as usize).min(labels.len() - 1)])
        .collect()
}
