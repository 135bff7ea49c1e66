//! Butterworth IIR design as cascaded second-order sections.
//!
//! The analog prototype is mapped with the bilinear transform after
//! pre-warping the cutoff(s). Bandpass designs use the standard
//! lowpass-to-bandpass substitution, so an order-`n` bandpass has `2n`
//! poles and `n` sections.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Bandpass,
}

/// One section `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    /// Roots of `z² + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }

    pub fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        (self.b0 + zi * (self.b1 + zi * self.b2)) / (1.0 + zi * (self.a1 + zi * self.a2))
    }

    /// DF-II transposed state reached after a constant input `x` forever.
    fn steady_state(&self, x: f64) -> ([f64; 2], f64) {
        let gain = (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2);
        let y = gain * x;
        let z2 = self.b2 * x - self.a2 * y;
        let z1 = self.b1 * x - self.a1 * y + z2;
        ([z1, z2], y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
    pub gain: f64,
}

impl BiquadCascade {
    pub fn identity() -> Self {
        BiquadCascade {
            sections: vec![Biquad::IDENTITY],
            gain: 1.0,
        }
    }

    /// Frequency response at `freq_hz` for sampling rate `fs_hz`.
    pub fn response(&self, freq_hz: f64, fs_hz: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq_hz / fs_hz);
        self.response_at(z)
    }

    pub fn response_at(&self, z: Complex64) -> Complex64 {
        self.sections
            .iter()
            .fold(Complex64::new(self.gain, 0.0), |acc, s| acc * s.response(z))
    }

    pub fn magnitude_db(&self, freq_hz: f64, fs_hz: f64) -> f64 {
        20.0 * self.response(freq_hz, fs_hz).norm().log10()
    }

    pub fn is_stable(&self) -> bool {
        self.sections
            .iter()
            .all(|s| s.poles().iter().all(|p| p.norm() < 1.0))
    }

    /// Causal filtering from zero initial state.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        self.run(x, None)
    }

    /// Forward-backward (zero-phase) filtering with odd extension at both
    /// ends and steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let mut fwd = self.run(&ext, Some(ext[0]));
        fwd.reverse();
        let mut back = self.run(&fwd, Some(fwd[0]));
        back.reverse();
        back[pad..pad + n].to_vec()
    }

    fn run(&self, x: &[f64], settle_to: Option<f64>) -> Vec<f64> {
        let mut states: Vec<[f64; 2]> = vec![[0.0; 2]; self.sections.len()];
        if let Some(x0) = settle_to {
            let mut level = self.gain * x0;
            for (s, st) in self.sections.iter().zip(states.iter_mut()) {
                let (z, y) = s.steady_state(level);
                *st = z;
                level = y;
            }
        }
        x.iter()
            .map(|&xi| {
                let mut v = self.gain * xi;
                for (s, st) in self.sections.iter().zip(states.iter_mut()) {
                    let y = s.b0 * v + st[0];
                    st[0] = s.b1 * v - s.a1 * y + st[1];
                    st[1] = s.b2 * v - s.a2 * y;
                    v = y;
                }
                v
            })
            .collect()
    }
}

/// Filter `x` through `f`: causal, zero initial state, same length.
pub fn filter_signal(x: &[f64], f: &BiquadCascade) -> Vec<f64> {
    f.filter(x)
}

/// Design a digital Butterworth filter. `cutoffs_hz` holds one edge for
/// lowpass and `[low, high]` for bandpass.
pub fn design_butterworth(kind: FilterKind, order: usize, cutoffs_hz: &[f64], fs_hz: f64) -> Result<BiquadCascade> {
    if order == 0 {
        return Err(Error::FilterDesign("order must be positive".into()));
    }
    if !(fs_hz > 0.0) {
        return Err(Error::FilterDesign(format!("sampling rate {fs_hz} must be positive")));
    }
    let nyq = fs_hz / 2.0;
    for &c in cutoffs_hz {
        if !(c > 0.0 && c < nyq) {
            return Err(Error::FilterDesign(format!(
                "cutoff {c} Hz must lie strictly between 0 and Nyquist ({nyq} Hz)"
            )));
        }
    }
    let prewarp = |f: f64| 2.0 * fs_hz * (PI * f / fs_hz).tan();
    let proto: Vec<Complex64> = (0..order)
        .map(|k| Complex64::from_polar(1.0, PI * (2 * k + order + 1) as f64 / (2 * order) as f64))
        .collect();
    let bilinear = |s: Complex64| (2.0 * fs_hz + s) / (2.0 * fs_hz - s);

    let (poles, zero_kind, reference) = match kind {
        FilterKind::Lowpass => {
            if cutoffs_hz.len() != 1 {
                return Err(Error::FilterDesign("lowpass takes exactly one cutoff".into()));
            }
            let wc = prewarp(cutoffs_hz[0]);
            let poles: Vec<Complex64> = proto.iter().map(|&p| bilinear(p * wc)).collect();
            (poles, ZeroKind::Lowpass, Complex64::new(1.0, 0.0))
        }
        FilterKind::Bandpass => {
            let &[lo, hi] = cutoffs_hz else {
                return Err(Error::FilterDesign("bandpass takes exactly two cutoffs".into()));
            };
            if lo >= hi {
                return Err(Error::FilterDesign(format!("bandpass edges {lo} >= {hi}")));
            }
            let (w1, w2) = (prewarp(lo), prewarp(hi));
            let bw = w2 - w1;
            let w0 = (w1 * w2).sqrt();
            let mut poles = Vec::with_capacity(2 * order);
            for &p in &proto {
                let a = p * bw / 2.0;
                let disc = (a * a - w0 * w0).sqrt();
                poles.push(bilinear(a + disc));
                poles.push(bilinear(a - disc));
            }
            // The analog bandpass has unit gain at w0; map it back.
            let omega0 = 2.0 * (w0 / (2.0 * fs_hz)).atan();
            (poles, ZeroKind::Bandpass, Complex64::from_polar(1.0, omega0))
        }
    };

    let mut sections = pair_poles(&poles)
        .into_iter()
        .map(|(a1, a2, second_order)| {
            let (b0, b1, b2) = match (zero_kind, second_order) {
                (ZeroKind::Lowpass, true) => (1.0, 2.0, 1.0),
                (ZeroKind::Lowpass, false) => (1.0, 1.0, 0.0),
                (ZeroKind::Bandpass, _) => (1.0, 0.0, -1.0),
            };
            Biquad { b0, b1, b2, a1, a2 }
        })
        .collect::<Vec<_>>();
    // Poles nearest the unit circle go last.
    sections.sort_by(|x, y| x.a2.abs().total_cmp(&y.a2.abs()));

    let mut cascade = BiquadCascade { sections, gain: 1.0 };
    let g = cascade.response_at(reference).norm();
    if !(g.is_finite() && g > 0.0) {
        return Err(Error::FilterDesign("degenerate reference gain".into()));
    }
    cascade.gain = 1.0 / g;
    if !cascade.is_stable() {
        return Err(Error::FilterDesign("designed filter is unstable".into()));
    }
    Ok(cascade)
}

#[derive(Clone, Copy)]
enum ZeroKind {
    Lowpass,
    Bandpass,
}

// Group digital poles into (a1, a2, is_second_order) denominators:
// conjugate pairs first, then leftover real poles two at a time.
fn pair_poles(poles: &[Complex64]) -> Vec<(f64, f64, bool)> {
    let tol = 1e-10;
    let mut out = Vec::new();
    let mut reals = Vec::new();
    for p in poles {
        if p.im > tol {
            out.push((-2.0 * p.re, p.norm_sqr(), true));
        } else if p.im.abs() <= tol {
            reals.push(p.re);
        }
    }
    for pair in reals.chunks(2) {
        match *pair {
            [r1, r2] => out.push((-(r1 + r2), r1 * r2, true)),
            [r] => out.push((-r, 0.0, false)),
            _ => unreachable!(),
        }
    }
    out
}
