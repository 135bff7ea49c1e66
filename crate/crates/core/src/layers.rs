//! Parameterised building blocks shared by the streams, the fusion links
//! and the classifier head.

use crate::autograd::{BatchNormConfig, Init, Mode, Padding, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv1d {
    pub fn new(store: &mut ParamStore, name: &str, k: usize, c_in: usize, c_out: usize, stride: usize) -> Self {
        Conv1d {
            weight: store.add(format!("{name}.w"), &[k, c_in, c_out], Init::HeUniform { fan_in: k * c_in }),
            bias: store.add(format!("{name}.b"), &[c_out], Init::Constant(0.0)),
            stride,
            padding: Padding::Same,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.bind(store, self.weight);
        let b = tape.bind(store, self.bias);
        tape.conv1d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub cfg: BatchNormConfig,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), &[channels], Init::Constant(1.0)),
            beta: store.add(format!("{name}.beta"), &[channels], Init::Constant(0.0)),
            running_mean: store.add_buffer(format!("{name}.running_mean"), &[channels], 0.0),
            running_var: store.add_buffer(format!("{name}.running_var"), &[channels], 1.0),
            cfg: BatchNormConfig::default(),
        }
    }

    /// Normalise `x`; in train mode the running statistics in `store`
    /// are updated in place.
    pub fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let g = tape.bind(store, self.gamma);
        let b = tape.bind(store, self.beta);
        let (rm, rv) = store.pair_mut(self.running_mean, self.running_var);
        tape.batchnorm1d(x, g, b, &mut rm.value.data, &mut rv.value.data, mode, self.cfg)
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize) -> Self {
        Dense {
            weight: store.add(format!("{name}.w"), &[n_in, n_out], Init::HeUniform { fan_in: n_in }),
            bias: store.add(format!("{name}.b"), &[n_out], Init::Constant(0.0)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.bind(store, self.weight);
        let b = tape.bind(store, self.bias);
        tape.dense(x, w, b)
    }
}

/// Conv → BatchNorm → ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv1d,
    pub bn: BatchNorm,
}

impl ConvBlock {
    pub fn new(store: &mut ParamStore, name: &str, k: usize, c_in: usize, c_out: usize, stride: usize) -> Self {
        ConvBlock {
            conv: Conv1d::new(store, &format!("{name}.conv"), k, c_in, c_out, stride),
            bn: BatchNorm::new(store, &format!("{name}.bn"), c_out),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let y = self.conv.forward(tape, store, x)?;
        let y = self.bn.forward(tape, store, y, mode)?;
        Ok(tape.relu(y))
    }
}

/// Squeeze-and-excitation channel gate: global average pool, bottleneck
/// FC pair with ReLU then sigmoid, and per-channel rescaling of the input.
#[derive(Debug, Clone)]
pub struct SeBlock {
    pub fc1: Dense,
    pub fc2: Dense,
}

impl SeBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize) -> Self {
        let hidden = (channels / reduction.max(1)).max(1);
        SeBlock {
            fc1: Dense::new(store, &format!("{name}.fc1"), channels, hidden),
            fc2: Dense::new(store, &format!("{name}.fc2"), hidden, channels),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let s = tape.global_avg_pool(x)?;
        let h = self.fc1.forward(tape, store, s)?;
        let h = tape.relu(h);
        let g = self.fc2.forward(tape, store, h)?;
        let g = tape.sigmoid(g);
        tape.scale_channels(x, g)
    }
}

/// Residual block with SE gating: Conv-BN-ReLU → Conv-BN → SE, added to
/// a shortcut (identity, or a strided 1×1 Conv-BN projection when the
/// shape changes), followed by ReLU.
#[derive(Debug, Clone)]
pub struct SeResBlock {
    pub conv1: ConvBlock,
    pub conv2: Conv1d,
    pub bn2: BatchNorm,
    pub se: SeBlock,
    pub shortcut: Option<(Conv1d, BatchNorm)>,
}

impl SeResBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        reduction: usize,
    ) -> Self {
        let shortcut = (stride != 1 || c_in != c_out).then(|| {
            (
                Conv1d::new(store, &format!("{name}.proj"), 1, c_in, c_out, stride),
                BatchNorm::new(store, &format!("{name}.proj_bn"), c_out),
            )
        });
        SeResBlock {
            conv1: ConvBlock::new(store, &format!("{name}.c1"), k, c_in, c_out, stride),
            conv2: Conv1d::new(store, &format!("{name}.c2.conv"), k, c_out, c_out, 1),
            bn2: BatchNorm::new(store, &format!("{name}.c2.bn"), c_out),
            se: SeBlock::new(store, &format!("{name}.se"), c_out, reduction),
            shortcut,
        }
    }

    /// Identity-shortcut variant; input and output widths must match.
    pub fn new_id(store: &mut ParamStore, name: &str, k: usize, c_in: usize, c_out: usize, reduction: usize) -> Result<Self> {
        if c_in != c_out {
            return Err(Error::Build(format!(
                "identity block `{name}` maps {c_in} channels to {c_out}"
            )));
        }
        Ok(Self::new(store, name, k, c_in, c_out, 1, reduction))
    }

    pub fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let y = self.conv1.forward(tape, store, x, mode)?;
        let y = self.conv2.forward(tape, store, y)?;
        let y = self.bn2.forward(tape, store, y, mode)?;
        let y = self.se.forward(tape, store, y)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(tape, store, x)?;
                bn.forward(tape, store, s, mode)?
            }
            None => x,
        };
        let sum = tape.add(y, skip)?;
        Ok(tape.relu(sum))
    }
}
