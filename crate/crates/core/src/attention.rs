//! Attentive cross-modal connections between the ECG and EDA streams.
//!
//! Feature maps are laid out `[batch, n, m]` with `n` the temporal length
//! and `m` the channel count; the two modalities are stacked on a trailing
//! axis of size 2 (ECG first, EDA second). Attention is computed per batch
//! element and per position.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autograd::{Init, Mode, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::BatchNorm;

/// Number of stacked modalities.
pub const N_MODALITIES: usize = 2;

/// Direction of a cross-modal connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConnType {
    /// ECG → EDA: the EDA stream receives attended ECG features.
    I,
    /// EDA → ECG: the ECG stream receives attended EDA features.
    II,
    /// Both directions.
    III,
}

impl ConnType {
    pub const ALL: [ConnType; 3] = [ConnType::I, ConnType::II, ConnType::III];

    pub fn ecg_receives(self) -> bool {
        matches!(self, ConnType::II | ConnType::III)
    }

    pub fn eda_receives(self) -> bool {
        matches!(self, ConnType::I | ConnType::III)
    }

    pub fn direction(self) -> &'static str {
        match self {
            ConnType::I => "ECG->EDA",
            ConnType::II => "EDA->ECG",
            ConnType::III => "ECG<->EDA",
        }
    }
}

impl fmt::Display for ConnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ConnType::I => "I",
            ConnType::II => "II",
            ConnType::III => "III",
        };
        write!(f, "{name}:{}", self.direction())
    }
}

/// How the per-channel weight vector enters the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    /// Scale every channel of `Uᵀ` by `w_u` and take the softmax per
    /// channel, giving one weight per (position, modality, channel).
    #[default]
    Scale,
    /// Contract the channel axis with `w_u`, take the softmax per
    /// position and broadcast the weight over channels.
    Contract,
}

/// Where and how the streams exchange information.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttXSpec {
    #[serde(rename = "type")]
    pub conn_type: ConnType,
    /// Stage boundaries (1, 2 or 3) after which a connection is inserted.
    pub stages: Vec<usize>,
    /// When false the attention weights are fixed to one, so each link
    /// concatenates the raw features of the other stream.
    #[serde(default = "default_true")]
    pub attention: bool,
    #[serde(default)]
    pub reduce: Reduce,
}

fn default_true() -> bool {
    true
}

impl AttXSpec {
    pub fn new(conn_type: ConnType, stages: &[usize]) -> Self {
        AttXSpec {
            conn_type,
            stages: stages.to_vec(),
            attention: true,
            reduce: Reduce::Scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Build("cross-modal connection needs at least one stage".into()));
        }
        let mut seen = [false; 4];
        for &s in &self.stages {
            if !(1..=3).contains(&s) {
                return Err(Error::Build(format!("stage {s} is not one of 1, 2, 3")));
            }
            if std::mem::replace(&mut seen[s], true) {
                return Err(Error::Build(format!("stage {s} listed twice")));
            }
        }
        Ok(())
    }

    pub fn has_stage(&self, stage: usize) -> bool {
        self.stages.contains(&stage)
    }

    /// Stages in ascending order, e.g. `"{1,2}"`.
    pub fn stage_label(&self) -> String {
        let mut s = self.stages.clone();
        s.sort_unstable();
        let parts: Vec<String> = s.iter().map(|x| x.to_string()).collect();
        format!("{{{}}}", parts.join(","))
    }
}

/// Learned attention parameters of one connection: `W` (2×2) mixing the
/// modality axis and `w_u` (one entry per channel).
///
/// Stage outputs are non-negative (they leave a ReLU), so `W` starts near
/// the identity: a random sign pattern could zero `ReLU(S·W)` everywhere
/// and leave the connection without gradient.
#[derive(Debug, Clone)]
pub struct AttXParams {
    pub w: ParamId,
    pub w_u: ParamId,
}

impl AttXParams {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        AttXParams {
            w: store.add(format!("{name}.w"), &[N_MODALITIES, N_MODALITIES], Init::IdentityJitter(0.1)),
            w_u: store.add(format!("{name}.w_u"), &[channels], Init::Constant(1.0)),
        }
    }
}

fn feature_shape(tape: &Tape, v: Var, op: &'static str) -> Result<[usize; 3]> {
    match *tape.shape(v) {
        [b, n, m] => Ok([b, n, m]),
        ref s => Err(Error::shape(op, format!("expected [batch, n, m], got {s:?}"))),
    }
}

/// Stack the two feature maps into `S[batch, n, m, 2]`.
pub fn stack_modalities(tape: &mut Tape, z_ecg: Var, z_eda: Var) -> Result<Var> {
    let se = feature_shape(tape, z_ecg, "stack_modalities")?;
    let sd = feature_shape(tape, z_eda, "stack_modalities")?;
    if se != sd {
        return Err(Error::shape(
            "stack_modalities",
            format!("ECG {se:?} and EDA {sd:?} are not stage-aligned"),
        ));
    }
    let [b, n, m] = se;
    let e = tape.reshape(z_ecg, [b, n, m, 1])?;
    let d = tape.reshape(z_eda, [b, n, m, 1])?;
    tape.concat(e, d, 3)
}

/// Inverse of [`stack_modalities`].
pub fn unstack_modalities(tape: &mut Tape, s: Var) -> Result<(Var, Var)> {
    Ok((tape.select(s, 3, 0)?, tape.select(s, 3, 1)?))
}

/// Attention weights `θ[batch, n, 2, m]` from a stacked representation:
/// `U = ReLU(S·W)`, transpose to `[.., 2, m]`, weight by `w_u`, softmax
/// over the modality axis.
pub fn attention_weights(tape: &mut Tape, s: Var, w: Var, w_u: Var, reduce: Reduce) -> Result<Var> {
    let shape = tape.shape(s).to_vec();
    let [_, _, m, d] = shape[..] else {
        return Err(Error::shape("attention_weights", format!("expected [batch, n, m, 2], got {shape:?}")));
    };
    if d != N_MODALITIES || tape.shape(w) != [N_MODALITIES, N_MODALITIES] {
        return Err(Error::shape(
            "attention_weights",
            format!("S {shape:?} with W {:?}", tape.shape(w)),
        ));
    }
    if tape.shape(w_u) != [m] {
        return Err(Error::shape(
            "attention_weights",
            format!("w_u {:?} for {m} channels", tape.shape(w_u)),
        ));
    }
    let u = tape.matmul_last(s, w)?;
    let u = tape.relu(u);
    let ut = tape.swap_axes(u, 2, 3)?;
    let weighted = tape.mul(ut, w_u)?;
    match reduce {
        Reduce::Scale => tape.softmax(weighted, 2),
        Reduce::Contract => {
            let logits = tape.sum_last(weighted);
            let theta = tape.softmax(logits, 2)?;
            tape.repeat_last(theta, m)
        }
    }
}

/// Weight each modality's features by its slice of `θ`.
pub fn apply_attention(tape: &mut Tape, theta: Var, z_ecg: Var, z_eda: Var) -> Result<(Var, Var)> {
    let t_ecg = tape.select(theta, 2, 0)?;
    let t_eda = tape.select(theta, 2, 1)?;
    let a = tape.mul(t_ecg, z_ecg)?;
    let b = tape.mul(t_eda, z_eda)?;
    Ok((a, b))
}

/// One cross-modal connection at a stage boundary.
#[derive(Debug, Clone)]
pub struct Connection {
    pub conn_type: ConnType,
    pub reduce: Reduce,
    /// `None` when attention is disabled (θ ≡ 1).
    pub attx: Option<AttXParams>,
    pub bn_ecg: Option<BatchNorm>,
    pub bn_eda: Option<BatchNorm>,
}

impl Connection {
    /// Parameters are registered as `{name}.attx.*`, `{name}.bn_ecg.*`
    /// and `{name}.bn_eda.*`; only receiving streams get a batchnorm.
    pub fn new(store: &mut ParamStore, name: &str, spec: &AttXSpec, channels: usize) -> Self {
        let t = spec.conn_type;
        Connection {
            conn_type: t,
            reduce: spec.reduce,
            attx: spec.attention.then(|| AttXParams::new(store, &format!("{name}.attx"), channels)),
            bn_ecg: t.ecg_receives().then(|| BatchNorm::new(store, &format!("{name}.bn_ecg"), 2 * channels)),
            bn_eda: t.eda_receives().then(|| BatchNorm::new(store, &format!("{name}.bn_eda"), 2 * channels)),
        }
    }

    /// Output channel counts `(ecg, eda)` for input width `m`.
    pub fn out_channels(conn_type: ConnType, m: usize) -> (usize, usize) {
        let f = |r: bool| if r { 2 * m } else { m };
        (f(conn_type.ecg_receives()), f(conn_type.eda_receives()))
    }

    /// Attention weights for the given features, or ones when attention
    /// is disabled.
    pub fn theta(&self, tape: &mut Tape, store: &ParamStore, z_ecg: Var, z_eda: Var) -> Result<Var> {
        let s = stack_modalities(tape, z_ecg, z_eda)?;
        match &self.attx {
            Some(p) => {
                let w = tape.bind(store, p.w);
                let w_u = tape.bind(store, p.w_u);
                attention_weights(tape, s, w, w_u, self.reduce)
            }
            None => {
                let [b, n, m, d] = tape.shape(s)[..] else { unreachable!() };
                tape.constant([b, n, d, m], vec![1.0; b * n * d * m])
            }
        }
    }

    /// Exchange features between the streams. Receiving streams get
    /// `BN(concat(own, attended other))` on the channel axis; the other
    /// stream passes through unchanged.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        z_ecg: Var,
        z_eda: Var,
        mode: Mode,
    ) -> Result<(Var, Var)> {
        let theta = self.theta(tape, store, z_ecg, z_eda)?;
        let (att_ecg, att_eda) = apply_attention(tape, theta, z_ecg, z_eda)?;
        let x_ecg = match &self.bn_ecg {
            Some(bn) => {
                let c = tape.concat(z_ecg, att_eda, 2)?;
                bn.forward(tape, store, c, mode)?
            }
            None => z_ecg,
        };
        let x_eda = match &self.bn_eda {
            Some(bn) => {
                let c = tape.concat(z_eda, att_ecg, 2)?;
                bn.forward(tape, store, c, mode)?
            }
            None => z_eda,
        };
        Ok((x_ecg, x_eda))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn leaf(tape: &mut Tape, shape: &[usize], data: Vec<f64>) -> Var {
        tape.leaf(&Tensor::new(shape.to_vec(), data).unwrap())
    }

    #[test]
    fn stacking_layout_and_round_trip() {
        let mut tape = Tape::new();
        let e = leaf(&mut tape, &[1, 2, 3], (0..6).map(f64::from).collect());
        let d = leaf(&mut tape, &[1, 2, 3], (10..16).map(f64::from).collect());
        let s = stack_modalities(&mut tape, e, d).unwrap();
        assert_eq!(tape.shape(s), [1, 2, 3, 2]);
        assert_eq!(&tape.value(s)[..4], [0.0, 10.0, 1.0, 11.0]);
        let (e2, d2) = unstack_modalities(&mut tape, s).unwrap();
        assert_eq!(tape.value(e2), tape.value(e));
        assert_eq!(tape.value(d2), tape.value(d));
    }

    #[test]
    fn stacking_single_values() {
        let mut tape = Tape::new();
        let e = leaf(&mut tape, &[1, 1, 1], vec![0.3]);
        let d = leaf(&mut tape, &[1, 1, 1], vec![-2.0]);
        let s = stack_modalities(&mut tape, e, d).unwrap();
        assert_eq!(tape.value(s), [0.3, -2.0]);
    }

    #[test]
    fn stacking_rejects_misaligned_stages() {
        let mut tape = Tape::new();
        let e = leaf(&mut tape, &[1, 4, 2], vec![0.0; 8]);
        let d = leaf(&mut tape, &[1, 2, 4], vec![0.0; 8]);
        assert!(stack_modalities(&mut tape, e, d).is_err());
    }

    #[test]
    fn closed_form_two_way_softmax() {
        let mut tape = Tape::new();
        let u2 = 1.0 + 3f64.ln();
        let s = leaf(&mut tape, &[1, 1, 1, 2], vec![1.0, u2]);
        let w = leaf(&mut tape, &[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let wu = leaf(&mut tape, &[1], vec![1.0]);
        let th = attention_weights(&mut tape, s, w, wu, Reduce::Scale).unwrap();
        assert_eq!(tape.shape(th), [1, 1, 2, 1]);
        assert!((tape.value(th)[0] - 0.25).abs() < 1e-12);
        assert!((tape.value(th)[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_mixing_gives_even_split() {
        let mut tape = Tape::new();
        let s = leaf(&mut tape, &[2, 3, 4, 2], (0..48).map(|i| (i as f64 * 0.37).sin()).collect());
        let w = leaf(&mut tape, &[2, 2], vec![0.0; 4]);
        let wu = leaf(&mut tape, &[4], vec![1.0, -2.0, 3.0, 0.5]);
        for reduce in [Reduce::Scale, Reduce::Contract] {
            let th = attention_weights(&mut tape, s, w, wu, reduce).unwrap();
            assert_eq!(tape.shape(th), [2, 3, 2, 4]);
            assert!(tape.value(th).iter().all(|&t| t == 0.5));
        }
    }

    #[test]
    fn apply_attention_cases() {
        let mut tape = Tape::new();
        let e = leaf(&mut tape, &[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let d = leaf(&mut tape, &[1, 2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        let ones = leaf(&mut tape, &[1, 2, 2, 2], vec![1.0; 8]);
        let (a, _) = apply_attention(&mut tape, ones, e, d).unwrap();
        assert_eq!(tape.value(a), tape.value(e));
        let zeros = leaf(&mut tape, &[1, 2, 2, 2], vec![0.0; 8]);
        let (a, b) = apply_attention(&mut tape, zeros, e, d).unwrap();
        assert!(tape.value(a).iter().chain(tape.value(b)).all(|&v| v == 0.0));
        let half = leaf(&mut tape, &[1, 2, 2, 2], vec![0.5; 8]);
        let (a, b) = apply_attention(&mut tape, half, e, d).unwrap();
        for i in 0..4 {
            let lhs = tape.value(a)[i] + tape.value(b)[i];
            let rhs = 0.5 * (tape.value(e)[i] + tape.value(d)[i]);
            assert!((lhs - rhs).abs() < 1e-15);
        }
    }

    #[test]
    fn channel_arithmetic_per_type() {
        for t in ConnType::ALL {
            let mut store = ParamStore::new(0);
            let spec = AttXSpec::new(t, &[1]);
            let conn = Connection::new(&mut store, "link1", &spec, 16);
            let mut tape = Tape::new();
            let e = leaf(&mut tape, &[2, 8, 16], (0..256).map(|i| (i as f64).cos()).collect());
            let d = leaf(&mut tape, &[2, 8, 16], (0..256).map(|i| (i as f64 * 0.5).sin()).collect());
            let (xe, xd) = conn.forward(&mut tape, &mut store, e, d, Mode::Train).unwrap();
            let (ce, cd) = Connection::out_channels(t, 16);
            assert_eq!(tape.shape(xe), [2, 8, ce]);
            assert_eq!(tape.shape(xd), [2, 8, cd]);
            if !t.ecg_receives() {
                assert_eq!(xe, e);
            }
            if !t.eda_receives() {
                assert_eq!(xd, d);
            }
        }
        assert_eq!(Connection::out_channels(ConnType::I, 16), (16, 32));
        assert_eq!(Connection::out_channels(ConnType::II, 16), (32, 16));
        assert_eq!(Connection::out_channels(ConnType::III, 16), (32, 32));
    }

    #[test]
    fn spec_validation() {
        assert!(AttXSpec::new(ConnType::III, &[1, 2]).validate().is_ok());
        assert!(AttXSpec::new(ConnType::III, &[]).validate().is_err());
        assert!(AttXSpec::new(ConnType::I, &[4]).validate().is_err());
        assert!(AttXSpec::new(ConnType::I, &[2, 2]).validate().is_err());
        assert_eq!(AttXSpec::new(ConnType::I, &[3, 1]).stage_label(), "{1,3}");
        assert_eq!(ConnType::I.to_string(), "I:ECG->EDA");
    }

    #[test]
    fn spec_serde() {
        let s: AttXSpec = toml::from_str("type = \"II\"\nstages = [1, 3]").unwrap();
        assert_eq!(s, AttXSpec::new(ConnType::II, &[1, 3]));
        let c: AttXSpec = toml::from_str("type = \"III\"\nstages = [2]\nreduce = \"contract\"\nattention = false").unwrap();
        assert_eq!(c.reduce, Reduce::Contract);
        assert!(!c.attention);
    }
}
