//! Finite-difference checks for every differentiable operation, the
//! attention block, and the full model loss w.r.t. each parameter group.

use std::collections::BTreeMap;

use super::{check_inputs, pick_coords, weighted_sum, CheckResult, FdOptions, ABS_FLOOR};
use crate::attention::{attention_weights, AttXSpec, ConnType, Connection, Reduce};
use crate::autograd::{BatchNormConfig, Mode, Padding, Tape, Var};
use crate::error::Result;
use crate::model::{Model, ModelSpec, StreamConfig};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    /// Run only checks whose name starts with this prefix.
    pub only: Option<String>,
    pub fd: FdOptions,
}

type Body = fn(&mut Tape, &[Var]) -> Result<Var>;

struct OpCase {
    name: &'static str,
    inputs: Vec<Tensor>,
    body: Body,
}

fn rand_t(shape: &[usize], seed: &str) -> Tensor {
    Tensor::uniform(shape.to_vec(), 1.0, &mut rng::substream(11, seed)).with_grad()
}

/// Uniform values bounded away from zero so ReLU kinks stay outside the
/// finite-difference stencil.
fn off_kink(shape: &[usize], seed: &str) -> Tensor {
    let mut t = rand_t(shape, seed);
    for v in t.data.iter_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

fn ws(tape: &mut Tape, out: Var) -> Result<Var> {
    weighted_sum(tape, out, 5)
}

fn cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "conv1d",
            inputs: vec![rand_t(&[2, 16, 3], "c.x"), rand_t(&[5, 3, 4], "c.k"), rand_t(&[4], "c.b")],
            body: |t, v| {
                let y = t.conv1d(v[0], v[1], v[2], 2, Padding::Same)?;
                ws(t, y)
            },
        },
        OpCase {
            name: "conv1d_valid",
            inputs: vec![rand_t(&[2, 9, 2], "cv.x"), rand_t(&[3, 2, 3], "cv.k"), rand_t(&[3], "cv.b")],
            body: |t, v| {
                let y = t.conv1d(v[0], v[1], v[2], 1, Padding::Valid)?;
                ws(t, y)
            },
        },
        OpCase {
            name: "batchnorm1d_train",
            inputs: vec![rand_t(&[3, 5, 4], "bn.x"), rand_t(&[4], "bn.g"), rand_t(&[4], "bn.b")],
            body: |t, v| {
                let (mut m, mut s) = (vec![0.0; 4], vec![1.0; 4]);
                let y = t.batchnorm1d(v[0], v[1], v[2], &mut m, &mut s, Mode::Train, BatchNormConfig::default())?;
                ws(t, y)
            },
        },
        OpCase {
            name: "batchnorm1d_eval",
            inputs: vec![rand_t(&[3, 5, 4], "bne.x"), rand_t(&[4], "bne.g"), rand_t(&[4], "bne.b")],
            body: |t, v| {
                let (mut m, mut s) = (vec![0.1, -0.2, 0.3, 0.0], vec![0.5, 1.5, 2.0, 1.0]);
                let y = t.batchnorm1d(v[0], v[1], v[2], &mut m, &mut s, Mode::Eval, BatchNormConfig::default())?;
                ws(t, y)
            },
        },
        OpCase {
            name: "relu",
            inputs: vec![off_kink(&[4, 6], "relu.x")],
            body: |t, v| {
                let y = t.relu(v[0]);
                ws(t, y)
            },
        },
        OpCase {
            name: "sigmoid",
            inputs: vec![rand_t(&[4, 6], "sig.x")],
            body: |t, v| {
                let y = t.sigmoid(v[0]);
                ws(t, y)
            },
        },
        OpCase {
            name: "softmax",
            inputs: vec![rand_t(&[2, 3, 4], "sm.x")],
            body: |t, v| {
                let y = t.softmax(v[0], 1)?;
                ws(t, y)
            },
        },
        OpCase {
            name: "dense",
            inputs: vec![rand_t(&[3, 5], "d.x"), rand_t(&[5, 4], "d.w"), rand_t(&[4], "d.b")],
            body: |t, v| {
                let y = t.dense(v[0], v[1], v[2])?;
                ws(t, y)
            },
        },
        OpCase {
            name: "matmul_last",
            inputs: vec![rand_t(&[2, 3, 2], "mm.x"), rand_t(&[2, 3], "mm.w")],
            body: |t, v| {
                let y = t.matmul_last(v[0], v[1])?;
                ws(t, y)
            },
        },
        OpCase {
            name: "global_avg_pool",
            inputs: vec![rand_t(&[2, 7, 3], "gap.x")],
            body: |t, v| {
                let y = t.global_avg_pool(v[0])?;
                ws(t, y)
            },
        },
        OpCase {
            name: "concat",
            inputs: vec![rand_t(&[2, 3, 2], "cat.a"), rand_t(&[2, 3, 4], "cat.b")],
            body: |t, v| {
                let y = t.concat(v[0], v[1], 2)?;
                ws(t, y)
            },
        },
        OpCase {
            name: "add",
            inputs: vec![rand_t(&[2, 3, 4], "add.a"), rand_t(&[4], "add.b")],
            body: |t, v| {
                let y = t.add(v[0], v[1])?;
                ws(t, y)
            },
        },
        OpCase {
            name: "mul",
            inputs: vec![rand_t(&[2, 3, 4], "mul.a"), rand_t(&[3, 4], "mul.b")],
            body: |t, v| {
                let y = t.mul(v[0], v[1])?;
                ws(t, y)
            },
        },
        OpCase {
            name: "scale_channels",
            inputs: vec![rand_t(&[2, 5, 3], "sc.x"), rand_t(&[2, 3], "sc.g")],
            body: |t, v| {
                let y = t.scale_channels(v[0], v[1])?;
                ws(t, y)
            },
        },
        OpCase {
            name: "scale",
            inputs: vec![rand_t(&[3, 4], "s.x")],
            body: |t, v| {
                let y = t.scale(v[0], -1.7);
                ws(t, y)
            },
        },
        OpCase {
            name: "reshape",
            inputs: vec![rand_t(&[2, 6], "rs.x")],
            body: |t, v| {
                let y = t.reshape(v[0], [3, 4])?;
                ws(t, y)
            },
        },
        OpCase {
            name: "swap_axes",
            inputs: vec![rand_t(&[2, 3, 4], "sw.x")],
            body: |t, v| {
                let y = t.swap_axes(v[0], 0, 2)?;
                ws(t, y)
            },
        },
        OpCase {
            name: "select",
            inputs: vec![rand_t(&[2, 3, 4], "sel.x")],
            body: |t, v| {
                let y = t.select(v[0], 1, 2)?;
                ws(t, y)
            },
        },
        OpCase {
            name: "sum_mean",
            inputs: vec![rand_t(&[3, 4], "sum.x")],
            body: |t, v| {
                let s = t.sum(v[0]);
                let m = t.mean(v[0]);
                let p = t.mul(s, m)?;
                Ok(p)
            },
        },
        OpCase {
            name: "sum_last",
            inputs: vec![rand_t(&[2, 3, 4], "sl.x")],
            body: |t, v| {
                let y = t.sum_last(v[0]);
                ws(t, y)
            },
        },
        OpCase {
            name: "repeat_last",
            inputs: vec![rand_t(&[2, 3], "rl.x")],
            body: |t, v| {
                let y = t.repeat_last(v[0], 4)?;
                ws(t, y)
            },
        },
        OpCase {
            name: "cross_entropy",
            inputs: vec![rand_t(&[4, 3], "ce.x")],
            body: |t, v| t.cross_entropy(v[0], &[0, 2, 1, 2]),
        },
        OpCase {
            name: "attention_scale",
            inputs: vec![off_kink(&[1, 2, 3, 2], "att.s"), rand_t(&[2, 2], "att.w"), rand_t(&[3], "att.wu")],
            body: |t, v| {
                let y = attention_weights(t, v[0], v[1], v[2], Reduce::Scale)?;
                ws(t, y)
            },
        },
        OpCase {
            name: "attention_contract",
            inputs: vec![off_kink(&[1, 2, 3, 2], "attc.s"), rand_t(&[2, 2], "attc.w"), rand_t(&[3], "attc.wu")],
            body: |t, v| {
                let y = attention_weights(t, v[0], v[1], v[2], Reduce::Contract)?;
                ws(t, y)
            },
        },
    ]
}

fn tiny_model_spec() -> ModelSpec {
    let s = StreamConfig {
        widths: [4, 4, 4],
        kernel: 3,
        strides: [2, 2, 2],
        se_reduction: 2,
        stage1_blocks: 1,
        stage4_width: 4,
    };
    ModelSpec {
        ecg: s.clone(),
        eda: s,
        embedding_dim: 6,
        head_dim: 6,
        ..ModelSpec::default()
    }
    .with_attx(Some(AttXSpec::new(ConnType::III, &[1, 2, 3])))
}

fn model_loss(model: &mut Model, ecg: &Tensor, eda: &Tensor, labels: &[usize]) -> Result<(Tape, Var)> {
    let mut tape = Tape::new();
    let e = tape.leaf(ecg);
    let d = tape.leaf(eda);
    let f = model.forward(&mut tape, e, d, Mode::Train)?;
    let loss = tape.cross_entropy(f.logits, labels)?;
    Ok((tape, loss))
}

/// Gradient of the cross-entropy of a small Type III model w.r.t. every
/// parameter tensor, grouped by name prefix (e.g. `ecg.s2`, `link1.attx`).
fn model_checks(opts: &FdOptions) -> Result<Vec<CheckResult>> {
    let spec = tiny_model_spec();
    let mut model = Model::new(&spec, 7)?;
    let ecg = rand_t(&[3, 32, 1], "m.ecg");
    let eda = rand_t(&[3, 32, 1], "m.eda");
    let labels = [0, 1, 1];
    let (mut tape, loss) = model_loss(&mut model, &ecg, &eda, &labels)?;
    tape.backward(loss)?;
    tape.write_grads(&mut model.store);

    let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let p = model.store.get(id);
        if !p.trainable {
            continue;
        }
        let name = p.name.clone();
        let analytic = p.value.grad.clone().unwrap_or_else(|| vec![0.0; p.value.numel()]);
        let coords = pick_coords(p.value.numel(), opts.max_coords.or(Some(6)), opts.seed);
        let (mut d2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for &c in &coords {
            let orig = model.store.get(id).value.data[c];
            let at = |x: f64, m: &mut Model| -> Result<f64> {
                m.store.get_mut(id).value.data[c] = x;
                let (t, l) = model_loss(m, &ecg, &eda, &labels)?;
                Ok(t.value(l)[0])
            };
            let fp = at(orig + opts.step, &mut model)?;
            let fm = at(orig - opts.step, &mut model)?;
            model.store.get_mut(id).value.data[c] = orig;
            let numeric = (fp - fm) / (2.0 * opts.step);
            d2 += (analytic[c] - numeric).powi(2);
            a2 += analytic[c].powi(2);
            n2 += numeric.powi(2);
        }
        let rel = d2.sqrt() / a2.sqrt().max(n2.sqrt()).max(ABS_FLOOR);
        let parts: Vec<&str> = name.split('.').collect();
        let group = format!("model/{}", parts[..2.min(parts.len())].join("."));
        let e = groups.entry(group).or_insert((0.0, 0));
        e.0 = e.0.max(rel);
        e.1 += coords.len();
    }
    Ok(groups
        .into_iter()
        .map(|(name, (max_rel_err, coords))| CheckResult {
            name,
            max_rel_err,
            coords,
        })
        .collect())
}

/// The Type III cross connection, w.r.t. both feature maps.
fn connection_check(opts: &FdOptions) -> Result<CheckResult> {
    let inputs = [rand_t(&[2, 3, 2], "cc.e"), rand_t(&[2, 3, 2], "cc.d")];
    let res = check_inputs(
        &inputs,
        |t, v| {
            let mut store = crate::autograd::ParamStore::new(3);
            let conn = Connection::new(&mut store, "link", &AttXSpec::new(ConnType::III, &[1]), 2);
            let (a, b) = conn.forward(t, &mut store, v[0], v[1], Mode::Train)?;
            let c = t.concat(a, b, 2)?;
            ws(t, c)
        },
        *opts,
    )?;
    Ok(CheckResult {
        name: "cross_connect_type3".into(),
        max_rel_err: res.iter().map(|r| r.1).fold(0.0, f64::max),
        coords: res.iter().map(|r| r.2).sum(),
    })
}

/// Run every check (or those matching `opts.only`).
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let wanted = |name: &str| opts.only.as_deref().is_none_or(|p| name.starts_with(p));
    let mut out = Vec::new();
    for case in cases() {
        if !wanted(case.name) {
            continue;
        }
        let res = check_inputs(&case.inputs, case.body, opts.fd)?;
        out.push(CheckResult {
            name: case.name.to_string(),
            max_rel_err: res.iter().map(|r| r.1).fold(0.0, f64::max),
            coords: res.iter().map(|r| r.2).sum(),
        });
    }
    if wanted("cross_connect_type3") {
        out.push(connection_check(&opts.fd)?);
    }
    if opts.only.as_deref().is_none_or(|p| "model/".starts_with(p) || p.starts_with("model")) {
        out.extend(model_checks(&opts.fd)?.into_iter().filter(|r| wanted(&r.name)));
    }
    Ok(out)
}
