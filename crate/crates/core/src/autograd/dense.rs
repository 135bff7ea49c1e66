use super::{accumulate, Op, Tape, Var};
use crate::error::{Error, Result};

impl Tape {
    /// Affine map over the last axis: `input[.., n_in] · weight[n_in, n_out] + bias[n_out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.dense_impl(input, weight, Some(bias))
    }

    /// Contraction of the last axis with `weight[n_in, n_out]`, no bias.
    pub fn matmul_last(&mut self, input: Var, weight: Var) -> Result<Var> {
        self.dense_impl(input, weight, None)
    }

    fn dense_impl(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(Error::shape("dense", format!("input {xs:?} against weight {ws:?}")));
        }
        let (nin, nout) = (ws[0], ws[1]);
        if let Some(b) = bias {
            if self.shape(b) != [nout] {
                return Err(Error::shape("dense", format!("bias {:?} for {nout} outputs", self.shape(b))));
            }
        }
        let x = self.value(input);
        let w = self.value(weight);
        let rows = x.len() / nin;
        let mut out = vec![0.0; rows * nout];
        for (orow, xrow) in out.chunks_mut(nout).zip(x.chunks(nin)) {
            if let Some(b) = bias {
                orow.copy_from_slice(self.value(b));
            }
            for (i, &xv) in xrow.iter().enumerate() {
                let wrow = &w[i * nout..(i + 1) * nout];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = nout;
        let inputs: Vec<Var> = [Some(input), Some(weight), bias].into_iter().flatten().collect();
        Ok(self.push(shape, out, &inputs, Op::Dense { input, weight, bias }))
    }
}

pub(super) fn backward(
    tape: &Tape,
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    input: Var,
    weight: Var,
    bias: Option<Var>,
) {
    let ws = tape.shape(weight);
    let (nin, nout) = (ws[0], ws[1]);
    let x = tape.value(input);
    let w = tape.value(weight);
    accumulate(tape, grads, input, |acc| {
        for (arow, grow) in acc.chunks_mut(nin).zip(g.chunks(nout)) {
            for (i, a) in arow.iter_mut().enumerate() {
                let wrow = &w[i * nout..(i + 1) * nout];
                *a += wrow.iter().zip(grow).map(|(p, q)| p * q).sum::<f64>();
            }
        }
    });
    accumulate(tape, grads, weight, |acc| {
        for (xrow, grow) in x.chunks(nin).zip(g.chunks(nout)) {
            for (i, &xv) in xrow.iter().enumerate() {
                let arow = &mut acc[i * nout..(i + 1) * nout];
                for (a, &gv) in arow.iter_mut().zip(grow) {
                    *a += xv * gv;
                }
            }
        }
    });
    if let Some(b) = bias {
        accumulate(tape, grads, b, |acc| {
            for grow in g.chunks(nout) {
                acc.iter_mut().zip(grow).for_each(|(a, q)| *a += q);
            }
        });
    }
}
