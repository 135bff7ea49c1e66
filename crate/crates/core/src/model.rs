//! The two-stream network: an SE-ResNet ECG stream, a plain CNN EDA stream
//! with a terminal SE block, optional cross-modal links after stages 1–3,
//! and a fully connected classifier on the merged embeddings.

use serde::{Deserialize, Serialize};

use crate::attention::{AttXSpec, ConnType, Connection};
use crate::autograd::{Mode, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, ConvBlock, Dense, SeBlock, SeResBlock};
use crate::signal::WindowPair;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Output channels of stages 1–3.
    pub widths: [usize; 3],
    pub kernel: usize,
    /// Temporal stride of the first convolution in stages 1–3.
    pub strides: [usize; 3],
    pub se_reduction: usize,
    /// Conv blocks in ECG stage 1.
    pub stage1_blocks: usize,
    /// Width of the EDA stage 4.
    pub stage4_width: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            widths: [16, 32, 64],
            kernel: 7,
            strides: [2, 2, 2],
            se_reduction: 4,
            stage1_blocks: 1,
            stage4_width: 64,
        }
    }
}

impl StreamConfig {
    fn validate(&self, which: &str) -> Result<()> {
        let bad = |what: &str| Err(Error::Build(format!("{which} stream: {what}")));
        if self.widths.contains(&0) || self.stage4_width == 0 {
            return bad("channel widths must be positive");
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return bad("kernel size must be a positive odd number");
        }
        if self.strides.contains(&0) {
            return bad("strides must be positive");
        }
        if self.se_reduction == 0 {
            return bad("SE reduction must be positive");
        }
        if self.stage1_blocks == 0 {
            return bad("stage 1 needs at least one conv block");
        }
        Ok(())
    }
}

/// Which streams feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modalities {
    #[default]
    Both,
    EcgOnly,
    EdaOnly,
}

/// How the two 64-dim embeddings are merged before the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Merge {
    #[default]
    Concat,
    Add,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub ecg: StreamConfig,
    pub eda: StreamConfig,
    pub attx: Option<AttXSpec>,
    pub embedding_dim: usize,
    pub head_dim: usize,
    pub n_classes: usize,
    pub modalities: Modalities,
    pub merge: Merge,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            ecg: StreamConfig::default(),
            eda: StreamConfig::default(),
            attx: None,
            embedding_dim: 64,
            head_dim: 128,
            n_classes: 2,
            modalities: Modalities::Both,
            merge: Merge::Concat,
        }
    }
}

impl ModelSpec {
    pub fn with_attx(mut self, attx: Option<AttXSpec>) -> Self {
        self.attx = attx;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.ecg.validate("ECG")?;
        self.eda.validate("EDA")?;
        if self.embedding_dim == 0 || self.head_dim == 0 || self.n_classes < 2 {
            return Err(Error::Build("embedding, head and class counts must be positive".into()));
        }
        if let Some(a) = &self.attx {
            a.validate()?;
            if self.modalities != Modalities::Both {
                return Err(Error::Build("cross-modal links need both streams".into()));
            }
        }
        if self.modalities == Modalities::Both {
            if self.ecg.widths != self.eda.widths || self.ecg.strides != self.eda.strides {
                return Err(Error::Build(format!(
                    "streams are not stage-aligned: ECG widths {:?} strides {:?}, EDA widths {:?} strides {:?}",
                    self.ecg.widths, self.ecg.strides, self.eda.widths, self.eda.strides
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Block {
    Conv(ConvBlock),
    SeRes(SeResBlock),
}

impl Block {
    fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        match self {
            Block::Conv(b) => b.forward(tape, store, x, mode),
            Block::SeRes(b) => b.forward(tape, store, x, mode),
        }
    }
}

/// Two FC layers with ReLU mapping pooled features to the embedding.
#[derive(Debug, Clone)]
struct Embedding {
    fc1: Dense,
    fc2: Dense,
}

impl Embedding {
    fn new(store: &mut ParamStore, name: &str, n_in: usize, dim: usize) -> Self {
        Embedding {
            fc1: Dense::new(store, &format!("{name}.fc1"), n_in, dim),
            fc2: Dense::new(store, &format!("{name}.fc2"), dim, dim),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.relu(h);
        let h = self.fc2.forward(tape, store, h)?;
        Ok(tape.relu(h))
    }
}

#[derive(Debug, Clone)]
struct Stream {
    /// Blocks of stages 1–3, each tappable for a cross-modal link.
    stages: [Vec<Block>; 3],
    /// EDA stage 4 (conv blocks then SE); empty for ECG.
    tail: Vec<ConvBlock>,
    tail_se: Option<SeBlock>,
    embed: Embedding,
}

impl Stream {
    fn run_stage(&self, stage: usize, tape: &mut Tape, store: &mut ParamStore, mut x: Var, mode: Mode) -> Result<Var> {
        for b in &self.stages[stage] {
            x = b.forward(tape, store, x, mode)?;
        }
        Ok(x)
    }

    fn finish(&self, tape: &mut Tape, store: &mut ParamStore, mut x: Var, mode: Mode) -> Result<Var> {
        for b in &self.tail {
            x = b.forward(tape, store, x, mode)?;
        }
        if let Some(se) = &self.tail_se {
            x = se.forward(tape, store, x)?;
        }
        let pooled = tape.global_avg_pool(x)?;
        self.embed.forward(tape, store, pooled)
    }
}

/// Input widths of stages 2 and 3 given which streams are doubled by the
/// link after stages 1 and 2.
fn stage_inputs(widths: [usize; 3], doubled: [bool; 3]) -> [usize; 3] {
    let w = |s: usize| if doubled[s] { 2 * widths[s] } else { widths[s] };
    [1, w(0), w(1)]
}

fn build_ecg(store: &mut ParamStore, cfg: &StreamConfig, doubled: [bool; 3], emb: usize) -> Result<Stream> {
    let ins = stage_inputs(cfg.widths, doubled);
    let (k, r) = (cfg.kernel, cfg.se_reduction);
    let mut s1 = Vec::new();
    for i in 0..cfg.stage1_blocks {
        let (c_in, stride) = if i == 0 { (ins[0], cfg.strides[0]) } else { (cfg.widths[0], 1) };
        s1.push(Block::Conv(ConvBlock::new(store, &format!("ecg.s1.b{i}"), k, c_in, cfg.widths[0], stride)));
    }
    let mut res_stage = |stage: usize, n_id: usize| -> Result<Vec<Block>> {
        let w = cfg.widths[stage];
        let name = |i: usize| format!("ecg.s{}.b{i}", stage + 1);
        let mut v = vec![Block::SeRes(SeResBlock::new(store, &name(0), k, ins[stage], w, cfg.strides[stage], r))];
        for i in 1..=n_id {
            v.push(Block::SeRes(SeResBlock::new_id(store, &name(i), k, w, w, r)?));
        }
        Ok(v)
    };
    let s2 = res_stage(1, 2)?;
    let s3 = res_stage(2, 1)?;
    let last = if doubled[2] { 2 * cfg.widths[2] } else { cfg.widths[2] };
    Ok(Stream {
        stages: [s1, s2, s3],
        tail: Vec::new(),
        tail_se: None,
        embed: Embedding::new(store, "ecg.emb", last, emb),
    })
}

fn build_eda(store: &mut ParamStore, cfg: &StreamConfig, doubled: [bool; 3], emb: usize) -> Stream {
    let ins = stage_inputs(cfg.widths, doubled);
    let k = cfg.kernel;
    let s1 = vec![Block::Conv(ConvBlock::new(store, "eda.s1.b0", k, ins[0], cfg.widths[0], cfg.strides[0]))];
    let mut pair = |stage: usize| {
        let w = cfg.widths[stage];
        vec![
            Block::Conv(ConvBlock::new(store, &format!("eda.s{}.b0", stage + 1), k, ins[stage], w, cfg.strides[stage])),
            Block::Conv(ConvBlock::new(store, &format!("eda.s{}.b1", stage + 1), k, w, w, 1)),
        ]
    };
    let s2 = pair(1);
    let s3 = pair(2);
    let c3 = if doubled[2] { 2 * cfg.widths[2] } else { cfg.widths[2] };
    let w4 = cfg.stage4_width;
    let tail = vec![
        ConvBlock::new(store, "eda.s4.b0", k, c3, w4, 1),
        ConvBlock::new(store, "eda.s4.b1", k, w4, w4, 1),
    ];
    let tail_se = Some(SeBlock::new(store, "eda.s4.se", w4, cfg.se_reduction));
    Stream {
        stages: [s1, s2, s3],
        tail,
        tail_se,
        embed: Embedding::new(store, "eda.emb", w4, emb),
    }
}

/// Link inserted after a stage.
#[derive(Debug, Clone)]
enum Link {
    AttX(Connection),
    /// Both streams receive `BN(concat(Z_ecg, Z_eda))` without any
    /// attention machinery; used as an independent reference for the
    /// attention-free variant.
    PlainConcat { bn_ecg: BatchNorm, bn_eda: BatchNorm },
}

impl Link {
    fn forward(&self, tape: &mut Tape, store: &mut ParamStore, e: Var, d: Var, mode: Mode) -> Result<(Var, Var)> {
        match self {
            Link::AttX(c) => c.forward(tape, store, e, d, mode),
            Link::PlainConcat { bn_ecg, bn_eda } => {
                let ce = tape.concat(e, d, 2)?;
                let cd = tape.concat(d, e, 2)?;
                Ok((bn_ecg.forward(tape, store, ce, mode)?, bn_eda.forward(tape, store, cd, mode)?))
            }
        }
    }
}

/// Shapes seen at one stage boundary: the stage outputs and the inputs
/// handed to the next stage (after any link).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageShapes {
    pub stage: usize,
    pub ecg_out: Option<Vec<usize>>,
    pub eda_out: Option<Vec<usize>>,
    pub ecg_next: Option<Vec<usize>>,
    pub eda_next: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Var,
    pub ecg_embedding: Option<Var>,
    pub eda_embedding: Option<Var>,
    pub stages: Vec<StageShapes>,
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    pub store: ParamStore,
    ecg: Option<Stream>,
    eda: Option<Stream>,
    links: [Option<Link>; 3],
    head: [Dense; 3],
}

impl Model {
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let conn = spec.attx.as_ref().map(|a| a.conn_type);
        let on = |s: usize| spec.attx.as_ref().is_some_and(|a| a.has_stage(s + 1));
        let doubled_ecg = [0, 1, 2].map(|s| on(s) && conn.is_some_and(ConnType::ecg_receives));
        let doubled_eda = [0, 1, 2].map(|s| on(s) && conn.is_some_and(ConnType::eda_receives));
        Self::assemble(spec, seed, doubled_ecg, doubled_eda, |store, s| {
            let a = spec.attx.as_ref()?;
            on(s).then(|| Link::AttX(Connection::new(store, &format!("link{}", s + 1), a, spec.ecg.widths[s])))
        })
    }

    /// Model whose links at `stages` concatenate both streams' raw
    /// features into both streams, with no attention parameters.
    pub fn with_plain_concat_links(spec: &ModelSpec, stages: &[usize], seed: u64) -> Result<Self> {
        let mut spec = spec.clone();
        spec.attx = None;
        spec.validate()?;
        AttXSpec::new(ConnType::III, stages).validate()?;
        let on = |s: usize| stages.contains(&(s + 1));
        let doubled = [0, 1, 2].map(on);
        let widths = spec.ecg.widths;
        Self::assemble(&spec, seed, doubled, doubled, |store, s| {
            on(s).then(|| Link::PlainConcat {
                bn_ecg: BatchNorm::new(store, &format!("link{}.bn_ecg", s + 1), 2 * widths[s]),
                bn_eda: BatchNorm::new(store, &format!("link{}.bn_eda", s + 1), 2 * widths[s]),
            })
        })
    }

    fn assemble<F>(spec: &ModelSpec, seed: u64, de: [bool; 3], dd: [bool; 3], mut link: F) -> Result<Self>
    where
        F: FnMut(&mut ParamStore, usize) -> Option<Link>,
    {
        let mut store = ParamStore::new(seed);
        let emb = spec.embedding_dim;
        let ecg = match spec.modalities {
            Modalities::Both | Modalities::EcgOnly => Some(build_ecg(&mut store, &spec.ecg, de, emb)?),
            Modalities::EdaOnly => None,
        };
        let eda = match spec.modalities {
            Modalities::Both | Modalities::EdaOnly => Some(build_eda(&mut store, &spec.eda, dd, emb)),
            Modalities::EcgOnly => None,
        };
        let links = [0, 1, 2].map(|s| link(&mut store, s));
        let merged = match (spec.modalities, spec.merge) {
            (Modalities::Both, Merge::Concat) => 2 * emb,
            _ => emb,
        };
        let h = spec.head_dim;
        let head = [
            Dense::new(&mut store, "head.fc1", merged, h),
            Dense::new(&mut store, "head.fc2", h, h),
            Dense::new(&mut store, "head.out", h, spec.n_classes),
        ];
        Ok(Model {
            spec: spec.clone(),
            store,
            ecg,
            eda,
            links,
            head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Number of trainable scalars.
    pub fn n_params(&self) -> usize {
        self.store.trainable_scalars()
    }

    /// Run both streams stage by stage, applying any link after each
    /// stage, and return class logits `[batch, n_classes]`. Inputs are
    /// `[batch, time, 1]`; an input of a dropped stream is ignored.
    pub fn forward(&mut self, tape: &mut Tape, ecg: Var, eda: Var, mode: Mode) -> Result<Forward> {
        let Model { store, ecg: es, eda: ds, links, head, spec } = self;
        if es.is_some() && ds.is_some() && tape.shape(ecg) != tape.shape(eda) {
            return Err(Error::shape(
                "model",
                format!("ECG input {:?} vs EDA input {:?}", tape.shape(ecg), tape.shape(eda)),
            ));
        }
        let mut xe = es.as_ref().map(|_| ecg);
        let mut xd = ds.as_ref().map(|_| eda);
        let mut trace = Vec::with_capacity(3);
        for s in 0..3 {
            if let (Some(st), Some(x)) = (es.as_ref(), xe) {
                xe = Some(st.run_stage(s, tape, store, x, mode)?);
            }
            if let (Some(st), Some(x)) = (ds.as_ref(), xd) {
                xd = Some(st.run_stage(s, tape, store, x, mode)?);
            }
            let shape = |v: Option<Var>| v.map(|v| tape.shape(v).to_vec());
            let (ecg_out, eda_out) = (shape(xe), shape(xd));
            if let (Some(link), Some(e), Some(d)) = (&links[s], xe, xd) {
                let (ne, nd) = link.forward(tape, store, e, d, mode)?;
                xe = Some(ne);
                xd = Some(nd);
            }
            let shape = |v: Option<Var>| v.map(|v| tape.shape(v).to_vec());
            trace.push(StageShapes {
                stage: s + 1,
                ecg_out,
                eda_out,
                ecg_next: shape(xe),
                eda_next: shape(xd),
            });
        }
        let ye = match (es.as_ref(), xe) {
            (Some(st), Some(x)) => Some(st.finish(tape, store, x, mode)?),
            _ => None,
        };
        let yd = match (ds.as_ref(), xd) {
            (Some(st), Some(x)) => Some(st.finish(tape, store, x, mode)?),
            _ => None,
        };
        let merged = match (ye, yd) {
            (Some(a), Some(b)) => match spec.merge {
                Merge::Concat => tape.concat(a, b, 1)?,
                Merge::Add => tape.add(a, b)?,
            },
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => unreachable!("a model always has at least one stream"),
        };
        let h = head[0].forward(tape, store, merged)?;
        let h = tape.relu(h);
        let h = head[1].forward(tape, store, h)?;
        let h = tape.relu(h);
        let logits = head[2].forward(tape, store, h)?;
        Ok(Forward {
            logits,
            ecg_embedding: ye,
            eda_embedding: yd,
            stages: trace,
        })
    }

    /// Record a batch of window pairs as `[batch, time, 1]` inputs and run
    /// the forward pass.
    pub fn forward_pairs(&mut self, tape: &mut Tape, batch: &[&WindowPair], mode: Mode) -> Result<Forward> {
        let (ecg, eda) = batch_inputs(tape, batch)?;
        self.forward(tape, ecg, eda, mode)
    }

    /// Class probabilities for a batch, evaluated in eval mode.
    pub fn predict_proba(&mut self, batch: &[&WindowPair]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let f = self.forward_pairs(&mut tape, batch, Mode::Eval)?;
        let p = tape.softmax(f.logits, 1)?;
        let k = self.spec.n_classes;
        Ok(tape.value(p).chunks(k).map(<[f64]>::to_vec).collect())
    }
}

/// Leaves `[batch, time, 1]` for the ECG and EDA windows of `batch`.
pub fn batch_inputs(tape: &mut Tape, batch: &[&WindowPair]) -> Result<(Var, Var)> {
    let first = batch
        .first()
        .ok_or_else(|| Error::shape("model", "empty batch"))?;
    let t = first.ecg.len();
    if batch.iter().any(|w| w.ecg.len() != t || w.eda.len() != t) {
        return Err(Error::shape("model", "windows in a batch differ in length"));
    }
    let ecg: Vec<f64> = batch.iter().flat_map(|w| w.ecg.iter().copied()).collect();
    let eda: Vec<f64> = batch.iter().flat_map(|w| w.eda.iter().copied()).collect();
    let n = batch.len();
    Ok((tape.constant([n, t, 1], ecg)?, tape.constant([n, t, 1], eda)?))
}
