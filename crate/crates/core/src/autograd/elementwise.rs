use super::{accumulate, Op, Tape, Var};
use crate::error::{Error, Result};

impl Tape {
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        self.push(self.shape(x).to_vec(), out, &[x], Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|&v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        self.push(self.shape(x).to_vec(), out, &[x], Op::Sigmoid(x))
    }

    /// `a + b`, where `b` either matches `a` or matches a trailing suffix
    /// of `a`'s shape (broadcast over the leading axes).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_trailing("add", a, b)?;
        let bv = self.value(b);
        let out = self
            .value(a)
            .chunks(bv.len())
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, &[a, b], Op::Add { a, b }))
    }

    /// Element-wise product with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_trailing("elementwise_mul", a, b)?;
        let bv = self.value(b);
        let out = self
            .value(a)
            .chunks(bv.len())
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x * y))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, &[a, b], Op::Mul { a, b }))
    }

    /// Scale `x[b, t, c]` by a per-sample channel gate `gate[b, c]`.
    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let gs = self.shape(gate);
        if xs.len() != 3 || gs != [xs[0], xs[2]] {
            return Err(Error::shape("scale_channels", format!("x {xs:?}, gate {gs:?}")));
        }
        let (t, c) = (xs[1], xs[2]);
        let xv = self.value(x);
        let gv = self.value(gate);
        let mut out = vec![0.0; xv.len()];
        for (bi, (ob, xb)) in out.chunks_mut(t * c).zip(xv.chunks(t * c)).enumerate() {
            let gr = &gv[bi * c..(bi + 1) * c];
            for (orow, xrow) in ob.chunks_mut(c).zip(xb.chunks(c)) {
                for ((o, xv), gv) in orow.iter_mut().zip(xrow).zip(gr) {
                    *o = xv * gv;
                }
            }
        }
        Ok(self.push(xs, out, &[x, gate], Op::ScaleChannels { x, gate }))
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).iter().map(|v| v * factor).collect();
        self.push(self.shape(input).to_vec(), out, &[input], Op::Scale { input, factor })
    }

    fn check_trailing(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(op, format!("cannot broadcast {sb:?} onto {sa:?}")));
        }
        Ok(())
    }
}

pub(super) fn relu_backward(tape: &Tape, grads: &mut [Option<Vec<f64>>], g: &[f64], x: Var, out: &[f64]) {
    accumulate(tape, grads, x, |acc| {
        for ((a, gi), o) in acc.iter_mut().zip(g).zip(out) {
            if *o > 0.0 {
                *a += gi;
            }
        }
    });
}

pub(super) fn sigmoid_backward(tape: &Tape, grads: &mut [Option<Vec<f64>>], g: &[f64], x: Var, out: &[f64]) {
    accumulate(tape, grads, x, |acc| {
        for ((a, gi), s) in acc.iter_mut().zip(g).zip(out) {
            *a += gi * s * (1.0 - s);
        }
    });
}

pub(super) fn add_backward(tape: &Tape, grads: &mut [Option<Vec<f64>>], g: &[f64], a: Var, b: Var) {
    accumulate(tape, grads, a, |acc| acc.iter_mut().zip(g).for_each(|(x, y)| *x += y));
    let nb = tape.value(b).len();
    accumulate(tape, grads, b, |acc| {
        for row in g.chunks(nb) {
            acc.iter_mut().zip(row).for_each(|(x, y)| *x += y);
        }
    });
}

pub(super) fn mul_backward(tape: &Tape, grads: &mut [Option<Vec<f64>>], g: &[f64], a: Var, b: Var) {
    let av = tape.value(a);
    let bv = tape.value(b);
    let nb = bv.len();
    accumulate(tape, grads, a, |acc| {
        for (arow, grow) in acc.chunks_mut(nb).zip(g.chunks(nb)) {
            for ((x, gi), y) in arow.iter_mut().zip(grow).zip(bv) {
                *x += gi * y;
            }
        }
    });
    accumulate(tape, grads, b, |acc| {
        for (grow, arow) in g.chunks(nb).zip(av.chunks(nb)) {
            for ((x, gi), y) in acc.iter_mut().zip(grow).zip(arow) {
                *x += gi * y;
            }
        }
    });
}

pub(super) fn scale_channels_backward(tape: &Tape, grads: &mut [Option<Vec<f64>>], g: &[f64], x: Var, gate: Var) {
    let xs = tape.shape(x);
    let (t, c) = (xs[1], xs[2]);
    let xv = tape.value(x);
    let gv = tape.value(gate);
    accumulate(tape, grads, x, |acc| {
        for (bi, (ab, gb)) in acc.chunks_mut(t * c).zip(g.chunks(t * c)).enumerate() {
            let gr = &gv[bi * c..(bi + 1) * c];
            for (arow, grow) in ab.chunks_mut(c).zip(gb.chunks(c)) {
                for ((a, gi), s) in arow.iter_mut().zip(grow).zip(gr) {
                    *a += gi * s;
                }
            }
        }
    });
    accumulate(tape, grads, gate, |acc| {
        for (bi, (gb, xb)) in g.chunks(t * c).zip(xv.chunks(t * c)).enumerate() {
            let ar = &mut acc[bi * c..(bi + 1) * c];
            for (grow, xrow) in gb.chunks(c).zip(xb.chunks(c)) {
                for ((a, gi), xi) in ar.iter_mut().zip(grow).zip(xrow) {
                    *a += gi * xi;
                }
            }
        }
    });
}
