use super::{accumulate, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::split_at_axis;

impl Tape {
    /// Softmax along `axis`, stabilised by subtracting the maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} for rank {}", shape.len())));
        }
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| xv[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..n {
                    let e = (xv[idx(k)] - m).exp();
                    out[idx(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    out[idx(k)] /= z;
                }
            }
        }
        Ok(self.push(shape, out, &[x], Op::Softmax { input: x, axis }))
    }

    /// Mean over the time axis: `[batch, time, ch] -> [batch, ch]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape("global_avg_pool", format!("input {s:?}")));
        }
        let (b, t, c) = (s[0], s[1], s[2]);
        let xv = self.value(x);
        let mut out = vec![0.0; b * c];
        for (orow, xb) in out.chunks_mut(c).zip(xv.chunks(t * c)) {
            for xrow in xb.chunks(c) {
                orow.iter_mut().zip(xrow).for_each(|(o, v)| *o += v);
            }
            orow.iter_mut().for_each(|o| *o /= t as f64);
        }
        Ok(self.push(vec![b, c], out, &[x], Op::GlobalAvgPool(x)))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![1], vec![s], &[x], Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over the last axis (dropping it).
    pub fn sum_last(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let n = *s.last().unwrap();
        let out: Vec<f64> = self.value(x).chunks(n).map(|r| r.iter().sum()).collect();
        let mut shape = s[..s.len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        self.push(shape, out, &[x], Op::SumLast(x))
    }

    /// Append a new last axis of extent `n`, repeating each entry.
    pub fn repeat_last(&mut self, x: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return Err(Error::shape("repeat_last", "zero repeat count"));
        }
        let mut shape = self.shape(x).to_vec();
        shape.push(n);
        let out = self
            .value(x)
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, n))
            .collect();
        Ok(self.push(shape, out, &[x], Op::RepeatLast { input: x, n }))
    }

    /// Mean cross-entropy of `logits[batch, n_class]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {s:?} with {} labels", labels.len()),
            ));
        }
        let nc = s[1];
        if let Some(&label) = labels.iter().find(|&&l| l >= nc) {
            return Err(Error::LabelOutOfRange { label, n_classes: nc });
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; lv.len()];
        let mut loss = 0.0;
        for ((row, prow), &y) in lv.chunks(nc).zip(probs.chunks_mut(nc)).zip(labels) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            for (p, v) in prow.iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        loss /= labels.len() as f64;
        Ok(self.push(
            vec![1],
            vec![loss],
            &[logits],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }
}

pub(super) fn softmax_backward(
    tape: &Tape,
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: Var,
    axis: usize,
    shape: &[usize],
    y: &[f64],
) {
    let (outer, n, inner) = split_at_axis(shape, axis);
    accumulate(tape, grads, x, |acc| {
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let dot: f64 = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                for k in 0..n {
                    acc[idx(k)] += y[idx(k)] * (g[idx(k)] - dot);
                }
            }
        }
    });
}

pub(super) fn gap_backward(tape: &Tape, grads: &mut [Option<Vec<f64>>], g: &[f64], x: Var) {
    let s = tape.shape(x);
    let (t, c) = (s[1], s[2]);
    accumulate(tape, grads, x, |acc| {
        for (ab, grow) in acc.chunks_mut(t * c).zip(g.chunks(c)) {
            for arow in ab.chunks_mut(c) {
                arow.iter_mut().zip(grow).for_each(|(a, q)| *a += q / t as f64);
            }
        }
    });
}

pub(super) fn sum_last_backward(tape: &Tape, grads: &mut [Option<Vec<f64>>], g: &[f64], x: Var) {
    let n = *tape.shape(x).last().unwrap();
    accumulate(tape, grads, x, |acc| {
        for (arow, gi) in acc.chunks_mut(n).zip(g) {
            arow.iter_mut().for_each(|a| *a += gi);
        }
    });
}

pub(super) fn repeat_last_backward(tape: &Tape, grads: &mut [Option<Vec<f64>>], g: &[f64], x: Var, n: usize) {
    accumulate(tape, grads, x, |acc| {
        for (a, grow) in acc.iter_mut().zip(g.chunks(n)) {
            *a += grow.iter().sum::<f64>();
        }
    });
}

pub(super) fn cross_entropy_backward(
    tape: &Tape,
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    logits: Var,
    labels: &[usize],
    probs: &[f64],
) {
    let nc = probs.len() / labels.len();
    let scale = g[0] / labels.len() as f64;
    accumulate(tape, grads, logits, |acc| {
        for ((arow, prow), &y) in acc.chunks_mut(nc).zip(probs.chunks(nc)).zip(labels) {
            for (k, (a, p)) in arow.iter_mut().zip(prow).enumerate() {
                let onehot = if k == y { 1.0 } else { 0.0 };
                *a += scale * (p - onehot);
            }
        }
    });
}
