use serde::{Deserialize, Serialize};

use super::{accumulate, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so that `time_out = ceil(time / stride)`; odd padding
    /// goes on the right.
    Same,
    Valid,
}

impl Padding {
    /// (left pad, output length) for an input of length `time`.
    pub fn resolve(self, time: usize, k: usize, stride: usize) -> Option<(usize, usize)> {
        match self {
            Padding::Valid => (time >= k).then(|| (0, (time - k) / stride + 1)),
            Padding::Same => {
                let out = time.div_ceil(stride);
                let needed = ((out - 1) * stride + k).saturating_sub(time);
                Some((needed / 2, out))
            }
        }
    }
}

struct Dims {
    batch: usize,
    time: usize,
    cin: usize,
    k: usize,
    cout: usize,
    tout: usize,
    stride: usize,
    pad_left: usize,
}

impl Dims {
    // Input position for output step `t` and tap `j`, if inside the signal.
    #[inline]
    fn pos(&self, t: usize, j: usize) -> Option<usize> {
        let p = (t * self.stride + j) as isize - self.pad_left as isize;
        (p >= 0 && (p as usize) < self.time).then_some(p as usize)
    }
}

impl Tape {
    /// 1D convolution over `[batch, time, ch_in]` with kernel
    /// `[k, ch_in, ch_out]` and bias `[ch_out]`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: Padding) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 3 || ks.len() != 3 {
            return Err(Error::shape("conv1d", format!("input {xs:?}, kernel {ks:?}")));
        }
        if xs[2] != ks[1] {
            return Err(Error::shape(
                "conv1d",
                format!("input has {} channels, kernel expects {}", xs[2], ks[1]),
            ));
        }
        if bs != [ks[2]] {
            return Err(Error::shape("conv1d", format!("bias {bs:?} for {} outputs", ks[2])));
        }
        if stride == 0 {
            return Err(Error::shape("conv1d", "stride must be positive"));
        }
        let (pad_left, tout) = padding
            .resolve(xs[1], ks[0], stride)
            .ok_or_else(|| Error::shape("conv1d", format!("kernel {} longer than input {}", ks[0], xs[1])))?;
        let d = Dims {
            batch: xs[0],
            time: xs[1],
            cin: xs[2],
            k: ks[0],
            cout: ks[2],
            tout,
            stride,
            pad_left,
        };
        let x = self.value(input);
        let w = self.value(kernel);
        let b = self.value(bias);
        let mut out = vec![0.0; d.batch * d.tout * d.cout];
        par::for_each_chunk_mut(&mut out, d.tout * d.cout, |bi, ob| {
            let xb = &x[bi * d.time * d.cin..(bi + 1) * d.time * d.cin];
            for t in 0..d.tout {
                let orow = &mut ob[t * d.cout..(t + 1) * d.cout];
                orow.copy_from_slice(b);
                for j in 0..d.k {
                    let Some(p) = d.pos(t, j) else { continue };
                    let xrow = &xb[p * d.cin..(p + 1) * d.cin];
                    for (ci, &xv) in xrow.iter().enumerate() {
                        let wrow = &w[(j * d.cin + ci) * d.cout..(j * d.cin + ci + 1) * d.cout];
                        for (o, &wv) in orow.iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        });
        Ok(self.push(
            vec![d.batch, d.tout, d.cout],
            out,
            &[input, kernel, bias],
            Op::Conv1d {
                input,
                kernel,
                bias,
                stride,
                pad_left,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    tape: &Tape,
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    input: Var,
    kernel: Var,
    bias: Var,
    stride: usize,
    pad_left: usize,
    out_shape: &[usize],
) {
    let xs = tape.shape(input);
    let ks = tape.shape(kernel);
    let d = Dims {
        batch: xs[0],
        time: xs[1],
        cin: xs[2],
        k: ks[0],
        cout: ks[2],
        tout: out_shape[1],
        stride,
        pad_left,
    };
    let x = tape.value(input);
    let w = tape.value(kernel);

    if tape.requires_grad(input) {
        let mut gx = vec![0.0; x.len()];
        par::for_each_chunk_mut(&mut gx, d.time * d.cin, |bi, gxb| {
            let gb = &g[bi * d.tout * d.cout..(bi + 1) * d.tout * d.cout];
            for t in 0..d.tout {
                let grow = &gb[t * d.cout..(t + 1) * d.cout];
                for j in 0..d.k {
                    let Some(p) = d.pos(t, j) else { continue };
                    let gxrow = &mut gxb[p * d.cin..(p + 1) * d.cin];
                    for (ci, gxv) in gxrow.iter_mut().enumerate() {
                        let wrow = &w[(j * d.cin + ci) * d.cout..(j * d.cin + ci + 1) * d.cout];
                        *gxv += wrow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        });
        accumulate(tape, grads, input, |acc| acc.iter_mut().zip(&gx).for_each(|(a, b)| *a += b));
    }

    if tape.requires_grad(kernel) {
        // Per-batch partials, summed in batch order for determinism.
        let partials = par::map_range(d.batch, |bi| {
            let xb = &x[bi * d.time * d.cin..(bi + 1) * d.time * d.cin];
            let gb = &g[bi * d.tout * d.cout..(bi + 1) * d.tout * d.cout];
            let mut gw = vec![0.0; d.k * d.cin * d.cout];
            for t in 0..d.tout {
                let grow = &gb[t * d.cout..(t + 1) * d.cout];
                for j in 0..d.k {
                    let Some(p) = d.pos(t, j) else { continue };
                    let xrow = &xb[p * d.cin..(p + 1) * d.cin];
                    for (ci, &xv) in xrow.iter().enumerate() {
                        let gwrow = &mut gw[(j * d.cin + ci) * d.cout..(j * d.cin + ci + 1) * d.cout];
                        for (a, &gv) in gwrow.iter_mut().zip(grow) {
                            *a += xv * gv;
                        }
                    }
                }
            }
            gw
        });
        accumulate(tape, grads, kernel, |acc| {
            for p in &partials {
                acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
            }
        });
    }

    accumulate(tape, grads, bias, |acc| {
        for row in g.chunks(d.cout) {
            acc.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
    });
}
