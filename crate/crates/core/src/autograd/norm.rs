use serde::{Deserialize, Serialize};

use super::{accumulate, Op, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

impl Tape {
    /// Batch normalisation over the last (channel) axis; statistics are
    /// taken over every leading position (batch and time).
    ///
    /// Train mode normalises with the biased batch variance and moves the
    /// running statistics by `momentum` (running variance uses the
    /// unbiased estimate). Eval mode normalises with the running
    /// statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm1d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut [f64],
        running_var: &mut [f64],
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let c = *shape
            .last()
            .ok_or_else(|| Error::shape("batchnorm1d", "rank-0 input"))?;
        if shape.len() < 2 {
            return Err(Error::shape("batchnorm1d", format!("input {shape:?} has no batch axis")));
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(
                    "batchnorm1d",
                    format!("{name} {:?} for {c} channels", self.shape(v)),
                ));
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batchnorm1d", "running statistics length"));
        }
        let x = self.value(input);
        let n = x.len() / c;
        let inv_std: Vec<f64> = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::DegenerateBatch(n));
                }
                let mut mean = vec![0.0; c];
                for row in x.chunks(c) {
                    mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; c];
                for row in x.chunks(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                for ch in 0..c {
                    let unbiased = var[ch] * n as f64 / (n - 1) as f64;
                    running_mean[ch] = (1.0 - cfg.momentum) * running_mean[ch] + cfg.momentum * mean[ch];
                    running_var[ch] = (1.0 - cfg.momentum) * running_var[ch] + cfg.momentum * unbiased;
                }
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.eps).sqrt()).collect();
                return Ok(self.finish_bn(input, gamma, beta, &mean, inv, true, shape));
            }
            Mode::Eval => running_var.iter().map(|v| 1.0 / (v + cfg.eps).sqrt()).collect(),
        };
        let mean = running_mean.to_vec();
        Ok(self.finish_bn(input, gamma, beta, &mean, inv_std, false, shape))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_bn(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        train: bool,
        shape: Vec<usize>,
    ) -> Var {
        let c = mean.len();
        let x = self.value(input);
        let gm = self.value(gamma);
        let bt = self.value(beta);
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for ((xr, hr), or) in x.chunks(c).zip(xhat.chunks_mut(c)).zip(out.chunks_mut(c)) {
            for ch in 0..c {
                hr[ch] = (xr[ch] - mean[ch]) * inv_std[ch];
                or[ch] = gm[ch] * hr[ch] + bt[ch];
            }
        }
        self.push(
            shape,
            out,
            &[input, gamma, beta],
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    tape: &Tape,
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: &[f64],
    inv_std: &[f64],
    train: bool,
) {
    let c = inv_std.len();
    let n = g.len() / c;
    let gm = tape.value(gamma);
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
        for ch in 0..c {
            sum_g[ch] += gr[ch];
            sum_gx[ch] += gr[ch] * hr[ch];
        }
    }
    accumulate(tape, grads, gamma, |acc| acc.iter_mut().zip(&sum_gx).for_each(|(a, b)| *a += b));
    accumulate(tape, grads, beta, |acc| acc.iter_mut().zip(&sum_g).for_each(|(a, b)| *a += b));
    accumulate(tape, grads, input, |acc| {
        let nf = n as f64;
        for ((ar, gr), hr) in acc.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)) {
            for ch in 0..c {
                let scale = gm[ch] * inv_std[ch];
                ar[ch] += if train {
                    scale * (gr[ch] - sum_g[ch] / nf - hr[ch] * sum_gx[ch] / nf)
                } else {
                    scale * gr[ch]
                };
            }
        }
    });
}
