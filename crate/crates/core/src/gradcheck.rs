//! Central finite-difference checks of reverse-mode gradients.
//!
//! The numeric side only ever evaluates forward values, so it shares no
//! code with the backward rules it checks. Errors are reported per input
//! as `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, ABS_FLOOR)`.
//! The floor keeps gradients that vanish exactly (e.g. a conv bias
//! followed by batchnorm) from turning rounding noise into a large
//! relative error.

use rand::seq::index::sample;
use serde::Serialize;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

mod suite;

pub use suite::{run_suite, SuiteOptions};

/// Gradient norms below this are compared in absolute terms.
pub const ABS_FLOOR: f64 = 1e-6;

/// Outcome for one checked quantity.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub coords: usize,
}

impl CheckResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < tol
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    pub step: f64,
    /// Check at most this many coordinates per input (seeded sample);
    /// `None` checks all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-5,
            max_coords: None,
            seed: 17,
        }
    }
}

/// `Σ out ⊙ r` for a fixed pseudo-random `r`; turns any output into a
/// scalar whose gradient exercises every output entry.
pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let mut r = rng::substream(seed, "gradcheck/weights");
    let w = Tensor::uniform(shape, 1.0, &mut r);
    let wv = tape.leaf(&w);
    let prod = tape.mul(out, wv)?;
    Ok(tape.sum(prod))
}

/// Relative error of reverse-mode gradients of `f` w.r.t. each input that
/// has `requires_grad`, against central differences. `f` must return a
/// scalar and be a deterministic function of its inputs.
pub fn check_inputs<F>(inputs: &[Tensor], f: F, opts: FdOptions) -> Result<Vec<(usize, f64, usize)>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out)[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut results = Vec::new();
    let mut work = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        if !t.requires_grad {
            continue;
        }
        let analytic = tape.grad(vars[i]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
        let coords = pick_coords(t.numel(), opts.max_coords, opts.seed ^ i as u64);
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for &c in &coords {
            let orig = work[i].data[c];
            work[i].data[c] = orig + opts.step;
            let fp = eval(&work)?;
            work[i].data[c] = orig - opts.step;
            let fm = eval(&work)?;
            work[i].data[c] = orig;
            let numeric = (fp - fm) / (2.0 * opts.step);
            diff2 += (analytic[c] - numeric).powi(2);
            a2 += analytic[c].powi(2);
            n2 += numeric.powi(2);
        }
        let rel = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(ABS_FLOOR);
        results.push((i, rel, coords.len()));
    }
    Ok(results)
}

pub(crate) fn pick_coords(n: usize, max: Option<usize>, seed: u64) -> Vec<usize> {
    match max {
        Some(m) if m < n => {
            let mut r = rng::substream(seed, "gradcheck/coords");
            let mut v = sample(&mut r, n, m).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..n).collect(),
    }
}
