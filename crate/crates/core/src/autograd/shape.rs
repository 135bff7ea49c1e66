use super::{accumulate, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, split_at_axis};

impl Tape {
    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != self.value(x).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(x)),
            ));
        }
        let v = self.value(x).to_vec();
        Ok(self.push(shape, v, &[x], Op::Reshape(x)))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa.iter().zip(&sb).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::shape("concat", format!("{sa:?} with {sb:?} on axis {axis}")));
        }
        let (outer, na, inner) = split_at_axis(&sa, axis);
        let nb = sb[axis];
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for o in 0..outer {
            out.extend_from_slice(&av[o * na * inner..(o + 1) * na * inner]);
            out.extend_from_slice(&bv[o * nb * inner..(o + 1) * nb * inner]);
        }
        let mut shape = sa;
        shape[axis] += nb;
        Ok(self.push(shape, out, &[a, b], Op::Concat { a, b, axis }))
    }

    /// Exchange two axes.
    pub fn swap_axes(&mut self, x: Var, a1: usize, a2: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if a1 >= s.len() || a2 >= s.len() {
            return Err(Error::shape("swap_axes", format!("axes ({a1}, {a2}) for {s:?}")));
        }
        let mut out_shape = s.clone();
        out_shape.swap(a1, a2);
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        permute_into(&s, a1, a2, |src, dst| out[dst] = xv[src]);
        Ok(self.push(out_shape, out, &[x], Op::SwapAxes { input: x, a1, a2 }))
    }

    /// Take index `index` of `axis`, dropping that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || index >= s[axis] {
            return Err(Error::shape("select", format!("index {index} on axis {axis} of {s:?}")));
        }
        let (outer, n, inner) = split_at_axis(&s, axis);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let start = (o * n + index) * inner;
            out.extend_from_slice(&xv[start..start + inner]);
        }
        let mut shape: Vec<usize> = s.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.push(shape, out, &[x], Op::Select { input: x, axis, index }))
    }
}

// Calls `f(src_index, dst_index)` for every element, where dst is laid out
// with axes `a1` and `a2` of `shape` exchanged.
fn permute_into<F: FnMut(usize, usize)>(shape: &[usize], a1: usize, a2: usize, mut f: F) {
    let rank = shape.len();
    let mut out_shape = shape.to_vec();
    out_shape.swap(a1, a2);
    let mut out_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
    }
    // Stride in the output of each input axis.
    let mut dst_stride = out_strides.clone();
    dst_stride.swap(a1, a2);
    let n = numel(shape);
    let mut idx = vec![0usize; rank];
    let mut dst = 0usize;
    for src in 0..n {
        f(src, dst);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            dst += dst_stride[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            dst -= dst_stride[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

pub(super) fn concat_backward(tape: &Tape, grads: &mut [Option<Vec<f64>>], g: &[f64], a: Var, b: Var, axis: usize) {
    let sa = tape.shape(a);
    let (outer, na, inner) = split_at_axis(sa, axis);
    let nb = tape.shape(b)[axis];
    let row = (na + nb) * inner;
    accumulate(tape, grads, a, |acc| {
        for o in 0..outer {
            let src = &g[o * row..o * row + na * inner];
            acc[o * na * inner..(o + 1) * na * inner]
                .iter_mut()
                .zip(src)
                .for_each(|(x, y)| *x += y);
        }
    });
    accumulate(tape, grads, b, |acc| {
        for o in 0..outer {
            let src = &g[o * row + na * inner..(o + 1) * row];
            acc[o * nb * inner..(o + 1) * nb * inner]
                .iter_mut()
                .zip(src)
                .for_each(|(x, y)| *x += y);
        }
    });
}

pub(super) fn swap_axes_backward(tape: &Tape, grads: &mut [Option<Vec<f64>>], g: &[f64], x: Var, a1: usize, a2: usize) {
    let s = tape.shape(x).to_vec();
    accumulate(tape, grads, x, |acc| {
        permute_into(&s, a1, a2, |src, dst| acc[src] += g[dst]);
    });
}

pub(super) fn select_backward(
    tape: &Tape,
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: Var,
    axis: usize,
    index: usize,
) {
    let (outer, n, inner) = split_at_axis(tape.shape(x), axis);
    accumulate(tape, grads, x, |acc| {
        for o in 0..outer {
            let start = (o * n + index) * inner;
            acc[start..start + inner]
                .iter_mut()
                .zip(&g[o * inner..(o + 1) * inner])
                .for_each(|(a, q)| *a += q);
        }
    });
}
