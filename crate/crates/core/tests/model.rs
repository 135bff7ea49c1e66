mod common;

use attx::attention::{AttXSpec, ConnType};
use attx::autograd::{Mode, Tape};
use attx::model::{Merge, Modalities, Model, ModelSpec, StreamConfig};
use attx::Tensor;

use common::{bench_stream, max_abs_diff, rand_tensor, tiny_spec, tiny_stream};

// Trainable scalar counts written out layer by layer.
fn conv(k: usize, cin: usize, cout: usize) -> usize {
    k * cin * cout + cout
}
fn bn(c: usize) -> usize {
    2 * c
}
fn dense(i: usize, o: usize) -> usize {
    i * o + o
}
fn conv_block(k: usize, cin: usize, cout: usize) -> usize {
    conv(k, cin, cout) + bn(cout)
}
fn se(c: usize, r: usize) -> usize {
    let h = (c / r).max(1);
    dense(c, h) + dense(h, c)
}
fn se_res(k: usize, cin: usize, cout: usize, stride: usize, r: usize) -> usize {
    let proj = if stride != 1 || cin != cout { conv(1, cin, cout) + bn(cout) } else { 0 };
    conv_block(k, cin, cout) + conv(k, cout, cout) + bn(cout) + se(cout, r) + proj
}

fn expected_params(spec: &ModelSpec) -> usize {
    let attx = spec.attx.as_ref();
    let linked = |s: usize| attx.is_some_and(|a| a.has_stage(s));
    let recv = |s: usize, ecg: bool| {
        linked(s) && attx.is_some_and(|a| if ecg { a.conn_type.ecg_receives() } else { a.conn_type.eda_receives() })
    };
    let input_widths = |c: &StreamConfig, ecg: bool| {
        let w = |s: usize| if recv(s + 1, ecg) { 2 * c.widths[s] } else { c.widths[s] };
        [1, w(0), w(1), w(2)]
    };
    let emb = spec.embedding_dim;
    let mut total = 0;

    let use_ecg = spec.modalities != Modalities::EdaOnly;
    let use_eda = spec.modalities != Modalities::EcgOnly;
    if use_ecg {
        let c = &spec.ecg;
        let i = input_widths(c, true);
        let (k, r, w) = (c.kernel, c.se_reduction, c.widths);
        total += conv_block(k, 1, w[0]) + (c.stage1_blocks - 1) * conv_block(k, w[0], w[0]);
        total += se_res(k, i[1], w[1], c.strides[1], r) + 2 * se_res(k, w[1], w[1], 1, r);
        total += se_res(k, i[2], w[2], c.strides[2], r) + se_res(k, w[2], w[2], 1, r);
        total += dense(i[3], emb) + dense(emb, emb);
    }
    if use_eda {
        let c = &spec.eda;
        let i = input_widths(c, false);
        let (k, w, w4) = (c.kernel, c.widths, c.stage4_width);
        total += conv_block(k, 1, w[0]);
        total += conv_block(k, i[1], w[1]) + conv_block(k, w[1], w[1]);
        total += conv_block(k, i[2], w[2]) + conv_block(k, w[2], w[2]);
        total += conv_block(k, i[3], w4) + conv_block(k, w4, w4) + se(w4, c.se_reduction);
        total += dense(w4, emb) + dense(emb, emb);
    }
    if let Some(a) = attx {
        for &s in &a.stages {
            let m = spec.ecg.widths[s - 1];
            if a.attention {
                total += 4 + m;
            }
            total += [true, false].iter().filter(|&&e| recv(s, e)).count() * bn(2 * m);
        }
    }
    let merged = if use_ecg && use_eda && spec.merge == Merge::Concat { 2 * emb } else { emb };
    let h = spec.head_dim;
    total + dense(merged, h) + dense(h, h) + dense(h, spec.n_classes)
}

fn logits(model: &mut Model, ecg: &Tensor, eda: &Tensor, mode: Mode) -> Vec<f64> {
    let mut tape = Tape::new();
    let (e, d) = (tape.leaf(ecg), tape.leaf(eda));
    let f = model.forward(&mut tape, e, d, mode).unwrap();
    tape.value(f.logits).to_vec()
}

#[test]
fn parameter_count_matches_closed_form() {
    let mut specs = vec![ModelSpec::default(), tiny_spec()];
    for t in ConnType::ALL {
        for stages in [&[1][..], &[2, 3], &[1, 2, 3]] {
            specs.push(ModelSpec::default().with_attx(Some(AttXSpec::new(t, stages))));
        }
    }
    specs.push(ModelSpec {
        attx: Some(AttXSpec {
            attention: false,
            ..AttXSpec::new(ConnType::III, &[1, 2])
        }),
        ..ModelSpec::default()
    });
    for modalities in [Modalities::EcgOnly, Modalities::EdaOnly] {
        specs.push(ModelSpec { modalities, ..ModelSpec::default() });
    }
    specs.push(ModelSpec {
        merge: Merge::Add,
        ecg: StreamConfig { stage1_blocks: 2, ..bench_stream() },
        eda: bench_stream(),
        ..ModelSpec::default()
    });
    for spec in specs {
        let model = Model::new(&spec, 1).unwrap();
        assert_eq!(model.n_params(), expected_params(&spec), "{spec:?}");
    }
}

#[test]
fn unimodal_models_ignore_the_other_input() {
    let ecg = rand_tensor(&[2, 256, 1], 1);
    let (eda_a, eda_b) = (rand_tensor(&[2, 256, 1], 2), rand_tensor(&[2, 256, 1], 3));
    let spec = ModelSpec { modalities: Modalities::EcgOnly, ..tiny_spec() };
    let mut m = Model::new(&spec, 4).unwrap();
    assert_eq!(logits(&mut m, &ecg, &eda_a, Mode::Eval), logits(&mut m, &ecg, &eda_b, Mode::Eval));
    let spec = ModelSpec { modalities: Modalities::EdaOnly, ..tiny_spec() };
    let mut m = Model::new(&spec, 4).unwrap();
    assert_eq!(logits(&mut m, &eda_a, &ecg, Mode::Eval), logits(&mut m, &eda_b, &ecg, Mode::Eval));
}

#[test]
fn one_way_links_keep_the_sender_independent() {
    let ecg = rand_tensor(&[2, 256, 1], 1);
    let (eda_a, eda_b) = (rand_tensor(&[2, 256, 1], 2), rand_tensor(&[2, 256, 1], 3));
    let embeddings = |conn_type, e: &Tensor, d: &Tensor| {
        let spec = tiny_spec().with_attx(Some(AttXSpec::new(conn_type, &[1, 2, 3])));
        let mut m = Model::new(&spec, 5).unwrap();
        let mut tape = Tape::new();
        let (ev, dv) = (tape.leaf(e), tape.leaf(d));
        let f = m.forward(&mut tape, ev, dv, Mode::Eval).unwrap();
        (
            tape.value(f.ecg_embedding.unwrap()).to_vec(),
            tape.value(f.eda_embedding.unwrap()).to_vec(),
        )
    };
    // Type I sends ECG into EDA only
    let (a, _) = embeddings(ConnType::I, &ecg, &eda_a);
    let (b, _) = embeddings(ConnType::I, &ecg, &eda_b);
    assert_eq!(a, b);
    // Type II sends EDA into ECG only
    let (_, a) = embeddings(ConnType::II, &eda_a, &ecg);
    let (_, b) = embeddings(ConnType::II, &eda_b, &ecg);
    assert_eq!(a, b);
    // Type III couples both ways
    let (a, _) = embeddings(ConnType::III, &ecg, &eda_a);
    let (b, _) = embeddings(ConnType::III, &ecg, &eda_b);
    assert_ne!(a, b);
}

#[test]
fn eval_predictions_do_not_depend_on_batch_companions() {
    let spec = tiny_spec().with_attx(Some(AttXSpec::new(ConnType::III, &[1, 2])));
    let mut m = Model::new(&spec, 6).unwrap();
    let ecg = rand_tensor(&[3, 256, 1], 1);
    let eda = rand_tensor(&[3, 256, 1], 2);
    let all = logits(&mut m, &ecg, &eda, Mode::Eval);
    let first = |t: &Tensor| Tensor::new([1, 256, 1], t.data[..256].to_vec()).unwrap();
    let one = logits(&mut m, &first(&ecg), &first(&eda), Mode::Eval);
    assert!(max_abs_diff(&all[..2], &one) < 1e-12);
}

#[test]
fn same_seed_builds_identical_models() {
    let spec = tiny_spec().with_attx(Some(AttXSpec::new(ConnType::II, &[2])));
    let a = Model::new(&spec, 9).unwrap();
    let b = Model::new(&spec, 9).unwrap();
    let c = Model::new(&spec, 10).unwrap();
    assert_eq!(a.store, b.store);
    assert_ne!(a.store, c.store);
}

#[test]
fn gradients_reach_every_trainable_tensor() {
    // wide enough that no SE bottleneck is entirely inactive
    let spec = ModelSpec {
        ecg: bench_stream(),
        eda: bench_stream(),
        ..ModelSpec::default()
    }
    .with_attx(Some(AttXSpec::new(ConnType::III, &[1, 2, 3])));
    let mut m = Model::new(&spec, 12).unwrap();
    let mut tape = Tape::new();
    let e = tape.leaf(&rand_tensor(&[4, 512, 1], 1));
    let d = tape.leaf(&rand_tensor(&[4, 512, 1], 2));
    let f = m.forward(&mut tape, e, d, Mode::Train).unwrap();
    let loss = tape.cross_entropy(f.logits, &[0, 1, 1, 0]).unwrap();
    tape.backward(loss).unwrap();
    tape.write_grads(&mut m.store);
    for p in m.store.iter().filter(|p| p.trainable) {
        let g = p.value.grad.as_ref().unwrap_or_else(|| panic!("{} has no gradient", p.name));
        // biases directly before a batchnorm have an exactly zero gradient
        let before_bn = p.name.ends_with(".conv.b") || p.name.ends_with(".proj.b");
        assert!(before_bn || g.iter().any(|&v| v != 0.0), "{} gradient is zero", p.name);
    }
}

#[test]
fn stage_trace_reports_doubling() {
    let spec = ModelSpec {
        ecg: tiny_stream(),
        eda: tiny_stream(),
        ..ModelSpec::default()
    }
    .with_attx(Some(AttXSpec::new(ConnType::I, &[2])));
    let mut m = Model::new(&spec, 1).unwrap();
    let mut tape = Tape::new();
    let e = tape.leaf(&rand_tensor(&[1, 512, 1], 1));
    let d = tape.leaf(&rand_tensor(&[1, 512, 1], 2));
    let f = m.forward(&mut tape, e, d, Mode::Eval).unwrap();
    let s2 = &f.stages[1];
    assert_eq!(s2.ecg_out, Some(vec![1, 32, 4]));
    assert_eq!(s2.ecg_next, Some(vec![1, 32, 4]));
    assert_eq!(s2.eda_next, Some(vec![1, 32, 8]));
    assert_eq!(tape.shape(f.logits), [1, 2]);
}

#[test]
fn invalid_specs_are_rejected() {
    let misaligned = ModelSpec {
        eda: StreamConfig { widths: [4, 8, 8], ..tiny_stream() },
        ..tiny_spec()
    };
    assert!(Model::new(&misaligned, 0).is_err());
    // misaligned streams are fine when only one is used
    assert!(Model::new(&ModelSpec { modalities: Modalities::EcgOnly, ..misaligned }, 0).is_ok());
    let unimodal_link = ModelSpec {
        modalities: Modalities::EdaOnly,
        ..tiny_spec().with_attx(Some(AttXSpec::new(ConnType::III, &[1])))
    };
    assert!(Model::new(&unimodal_link, 0).is_err());
    let one_class = ModelSpec { n_classes: 1, ..tiny_spec() };
    assert!(Model::new(&one_class, 0).is_err());
}

#[test]
fn mismatched_input_lengths_are_rejected() {
    let mut m = Model::new(&tiny_spec(), 0).unwrap();
    let mut tape = Tape::new();
    let e = tape.leaf(&rand_tensor(&[1, 256, 1], 1));
    let d = tape.leaf(&rand_tensor(&[1, 128, 1], 2));
    assert!(m.forward(&mut tape, e, d, Mode::Eval).is_err());
}
