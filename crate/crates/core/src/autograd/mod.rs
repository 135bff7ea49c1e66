//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every value produced during one forward pass. Ops
//! append a node holding the output value plus whatever the local
//! gradient rule needs; [`Tape::backward`] walks the nodes once in
//! reverse order and accumulates gradients into every node that
//! (transitively) depends on a `requires_grad` leaf. Tapes are cheap and
//! are rebuilt for each forward pass.

mod conv;
mod dense;
mod elementwise;
mod norm;
mod params;
mod reduce;
mod shape;

pub use conv::Padding;
pub use norm::{BatchNormConfig, Mode};
pub use params::{Init, ParamId, ParamStore, Parameter};

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad_left: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    GlobalAvgPool(Var),
    Concat {
        a: Var,
        b: Var,
        axis: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ScaleChannels {
        x: Var,
        gate: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Reshape(Var),
    SwapAxes {
        input: Var,
        a1: usize,
        a2: usize,
    },
    Select {
        input: Var,
        axis: usize,
        index: usize,
    },
    SumAll(Var),
    SumLast(Var),
    RepeatLast {
        input: Var,
        n: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bindings: Vec<(ParamId, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf holding a copy of `t`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_raw(t.shape.clone(), t.data.clone(), t.requires_grad, Op::Leaf)
    }

    /// Record a constant (no gradient).
    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    /// Record parameter `id` of `store` as a leaf and remember the
    /// binding so [`Tape::write_grads`] can route its gradient back.
    pub fn bind(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push_raw(
            p.value.shape.clone(),
            p.value.data.clone(),
            p.trainable,
            Op::Leaf,
        );
        if p.trainable {
            self.bindings.push((id, v));
        }
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
            requires_grad: n.requires_grad,
            grad: self.grad(v).map(<[f64]>::to_vec),
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push_raw(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, inputs: &[Var], op: Op) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(shape, value, rg, op)
    }

    /// Reverse pass from the scalar `loss`.
    ///
    /// Gradients of nodes consumed by several ops are summed. Calling
    /// `backward` again discards the previous gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = &self.nodes[loss.0].shape;
        if numel(shape) != 1 {
            return Err(Error::NonScalarLoss(shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            self.backward_node(i, g, lower);
        }
        self.grads = grads;
        Ok(())
    }

    /// Copy gradients of bound parameters into `store` (summing repeated
    /// bindings of the same parameter).
    pub fn write_grads(&self, store: &mut ParamStore) {
        for p in store.iter_mut() {
            p.value.grad = None;
        }
        for &(id, v) in &self.bindings {
            let Some(g) = self.grad(v) else { continue };
            let p = store.get_mut(id);
            match &mut p.value.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => p.value.grad = Some(g.to_vec()),
            }
        }
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                kernel,
                bias,
                stride,
                pad_left,
            } => conv::backward(self, grads, g, *input, *kernel, *bias, *stride, *pad_left, &node.shape),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => norm::backward(self, grads, g, *input, *gamma, *beta, xhat, inv_std, *train),
            Op::Relu(x) => elementwise::relu_backward(self, grads, g, *x, &node.value),
            Op::Sigmoid(x) => elementwise::sigmoid_backward(self, grads, g, *x, &node.value),
            Op::Softmax { input, axis } => {
                reduce::softmax_backward(self, grads, g, *input, *axis, &node.shape, &node.value)
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => dense::backward(self, grads, g, *input, *weight, *bias),
            Op::GlobalAvgPool(x) => reduce::gap_backward(self, grads, g, *x),
            Op::Concat { a, b, axis } => shape::concat_backward(self, grads, g, *a, *b, *axis),
            Op::Add { a, b } => elementwise::add_backward(self, grads, g, *a, *b),
            Op::Mul { a, b } => elementwise::mul_backward(self, grads, g, *a, *b),
            Op::ScaleChannels { x, gate } => elementwise::scale_channels_backward(self, grads, g, *x, *gate),
            Op::Scale { input, factor } => {
                accumulate(self, grads, *input, |acc| {
                    acc.iter_mut().zip(g).for_each(|(a, &gi)| *a += factor * gi)
                });
            }
            Op::Reshape(x) => accumulate(self, grads, *x, |acc| {
                acc.iter_mut().zip(g).for_each(|(a, &gi)| *a += gi)
            }),
            Op::SwapAxes { input, a1, a2 } => shape::swap_axes_backward(self, grads, g, *input, *a1, *a2),
            Op::Select { input, axis, index } => shape::select_backward(self, grads, g, *input, *axis, *index),
            Op::SumAll(x) => accumulate(self, grads, *x, |acc| acc.iter_mut().for_each(|a| *a += g[0])),
            Op::SumLast(x) => reduce::sum_last_backward(self, grads, g, *x),
            Op::RepeatLast { input, n } => reduce::repeat_last_backward(self, grads, g, *input, *n),
            Op::CrossEntropy { logits, labels, probs } => {
                reduce::cross_entropy_backward(self, grads, g, *logits, labels, probs)
            }
        }
    }
}

/// Run `f` on the gradient buffer of `v` (allocated on first use) when
/// `v` participates in differentiation.
pub(crate) fn accumulate<F>(tape: &Tape, grads: &mut [Option<Vec<f64>>], v: Var, f: F)
where
    F: FnOnce(&mut [f64]),
{
    let node = &tape.nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
    f(buf);
}

#[cfg(test)]
mod tests;
