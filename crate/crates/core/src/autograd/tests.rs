use super::*;
use crate::gradcheck::{check_inputs, weighted_sum, FdOptions};
use crate::par;
use crate::rng::substream;

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape.to_vec(), 1.0, &mut substream(seed, "autograd-test")).with_grad()
}

fn max_err(results: &[(usize, f64, usize)]) -> f64 {
    results.iter().map(|r| r.1).fold(0.0, f64::max)
}

#[test]
fn conv1d_hand_example() {
    let mut t = Tape::new();
    let x = t.constant([1, 4, 1], vec![1., 2., 3., 4.]).unwrap();
    let k = t.constant([3, 1, 1], vec![1., 0., -1.]).unwrap();
    let b = t.constant([1], vec![0.]).unwrap();
    let y = t.conv1d(x, k, b, 1, Padding::Valid).unwrap();
    assert_eq!(t.shape(y), [1, 2, 1]);
    assert_eq!(t.value(y), [-2., -2.]);
}

#[test]
fn conv1d_identity_tap() {
    let x_t = rand_t(&[2, 9, 1], 1);
    let mut t = Tape::new();
    let x = t.leaf(&x_t);
    let k = t.constant([1, 1, 1], vec![1.]).unwrap();
    let b = t.constant([1], vec![0.]).unwrap();
    let y = t.conv1d(x, k, b, 1, Padding::Valid).unwrap();
    assert_eq!(t.value(y), x_t.data.as_slice());
}

#[test]
fn conv1d_same_padding_shapes() {
    for (time, k, stride, expect) in [(10, 7, 1, 10), (10, 7, 2, 5), (11, 7, 2, 6), (2560, 7, 2, 1280), (5, 3, 4, 2)] {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::zeros([1, time, 2]));
        let kk = t.leaf(&Tensor::zeros([k, 2, 3]));
        let b = t.leaf(&Tensor::zeros([3]));
        let y = t.conv1d(x, kk, b, stride, Padding::Same).unwrap();
        assert_eq!(t.shape(y), [1, expect, 3], "time {time} k {k} stride {stride}");
    }
}

#[test]
fn conv1d_rejects_channel_mismatch() {
    let mut t = Tape::new();
    let x = t.leaf(&Tensor::zeros([1, 8, 2]));
    let k = t.leaf(&Tensor::zeros([3, 3, 4]));
    let b = t.leaf(&Tensor::zeros([4]));
    assert!(matches!(t.conv1d(x, k, b, 1, Padding::Same), Err(Error::Shape { .. })));
    let k2 = t.leaf(&Tensor::zeros([9, 2, 4]));
    assert!(t.conv1d(x, k2, b, 1, Padding::Valid).is_err());
    assert!(t.conv1d(x, k2, b, 0, Padding::Same).is_err());
}

#[test]
fn conv1d_gradients_match_finite_differences() {
    let inputs = [rand_t(&[2, 16, 3], 2), rand_t(&[5, 3, 4], 3), rand_t(&[4], 4)];
    let res = check_inputs(
        &inputs,
        |t, v| {
            let y = t.conv1d(v[0], v[1], v[2], 2, Padding::Same)?;
            weighted_sum(t, y, 5)
        },
        FdOptions::default(),
    )
    .unwrap();
    assert_eq!(res.len(), 3);
    assert!(max_err(&res) < 1e-4, "{res:?}");
}

#[test]
fn conv1d_parallel_and_sequential_agree_bitwise() {
    let inputs = [rand_t(&[6, 40, 3], 6), rand_t(&[7, 3, 5], 7), rand_t(&[5], 8)];
    let run = || {
        let mut t = Tape::new();
        let v: Vec<Var> = inputs.iter().map(|x| t.leaf(x)).collect();
        let y = t.conv1d(v[0], v[1], v[2], 2, Padding::Same).unwrap();
        let l = weighted_sum(&mut t, y, 1).unwrap();
        t.backward(l).unwrap();
        (t.value(y).to_vec(), t.grad(v[0]).unwrap().to_vec(), t.grad(v[1]).unwrap().to_vec())
    };
    par::set_enabled(false);
    let seq = run();
    par::set_enabled(true);
    let parl = run();
    assert_eq!(seq, parl);
}

fn bn(t: &mut Tape, x: Var, c: usize, gamma: f64, beta: f64, mode: Mode, eps: f64) -> Var {
    let g = t.leaf(&Tensor::full([c], gamma));
    let b = t.leaf(&Tensor::full([c], beta));
    let mut rm = vec![0.0; c];
    let mut rv = vec![1.0; c];
    t.batchnorm1d(x, g, b, &mut rm, &mut rv, mode, BatchNormConfig { momentum: 0.1, eps }).unwrap()
}

#[test]
fn batchnorm_standardized_input_is_unchanged() {
    let mut t = Tape::new();
    let x = t.constant([2, 1, 1], vec![-1., 1.]).unwrap();
    let y = bn(&mut t, x, 1, 1.0, 0.0, Mode::Train, 1e-12);
    for (a, b) in t.value(y).iter().zip([-1., 1.]) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn batchnorm_zero_gamma_gives_beta() {
    let mut t = Tape::new();
    let x = t.leaf(&rand_t(&[3, 4, 2], 9));
    let y = bn(&mut t, x, 2, 0.0, 0.25, Mode::Train, 1e-5);
    assert!(t.value(y).iter().all(|&v| v == 0.25));
}

#[test]
fn batchnorm_train_output_statistics() {
    let mut t = Tape::new();
    let x = t.leaf(&rand_t(&[4, 8, 2], 10));
    let eps = 1e-5;
    let y = bn(&mut t, x, 2, 1.0, 0.0, Mode::Train, eps);
    let xv = t.value(x);
    let yv = t.value(y);
    for ch in 0..2 {
        let col: Vec<f64> = yv.iter().skip(ch).step_by(2).copied().collect();
        let xcol: Vec<f64> = xv.iter().skip(ch).step_by(2).copied().collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let xm = xcol.iter().sum::<f64>() / n;
        let xvar = xcol.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6);
        // Exact expected variance with eps in the denominator.
        assert!((var - xvar / (xvar + eps)).abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn batchnorm_degenerate_batch_rejected() {
    let mut t = Tape::new();
    let x = t.leaf(&Tensor::zeros([1, 1, 3]));
    let g = t.leaf(&Tensor::full([3], 1.0));
    let b = t.leaf(&Tensor::zeros([3]));
    let (mut rm, mut rv) = (vec![0.0; 3], vec![1.0; 3]);
    let r = t.batchnorm1d(x, g, b, &mut rm, &mut rv, Mode::Train, BatchNormConfig::default());
    assert!(matches!(r, Err(Error::DegenerateBatch(1))));
    // Eval mode is fine with a single position.
    assert!(t.batchnorm1d(x, g, b, &mut rm, &mut rv, Mode::Eval, BatchNormConfig::default()).is_ok());
}

#[test]
fn batchnorm_running_stats_update() {
    let mut t = Tape::new();
    let x = t.constant([4, 1, 1], vec![1., 2., 3., 4.]).unwrap();
    let g = t.leaf(&Tensor::full([1], 1.0));
    let b = t.leaf(&Tensor::zeros([1]));
    let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
    t.batchnorm1d(x, g, b, &mut rm, &mut rv, Mode::Train, BatchNormConfig::default()).unwrap();
    assert!((rm[0] - 0.25).abs() < 1e-15);
    // unbiased variance of 1..4 is 5/3
    assert!((rv[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-15);
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    for mode in [Mode::Train, Mode::Eval] {
        let inputs = [rand_t(&[3, 5, 4], 11), rand_t(&[4], 12), rand_t(&[4], 13)];
        let res = check_inputs(
            &inputs,
            |t, v| {
                let mut rm = vec![0.1; 4];
                let mut rv = vec![0.7; 4];
                let y = t.batchnorm1d(v[0], v[1], v[2], &mut rm, &mut rv, mode, BatchNormConfig::default())?;
                weighted_sum(t, y, 3)
            },
            FdOptions::default(),
        )
        .unwrap();
        assert!(max_err(&res) < 1e-4, "{mode:?}: {res:?}");
    }
}

#[test]
fn activation_examples() {
    let mut t = Tape::new();
    let x = t.constant([2], vec![-1., 2.]).unwrap();
    let r = t.relu(x);
    assert_eq!(t.value(r), [0., 2.]);
    let z = t.constant([2], vec![0., 0.]).unwrap();
    let s = t.softmax(z, 0).unwrap();
    assert_eq!(t.value(s), [0.5, 0.5]);
    let l = t.constant([2], vec![1f64.ln(), 3f64.ln()]).unwrap();
    let s = t.softmax(l, 0).unwrap();
    assert!((t.value(s)[0] - 0.25).abs() < 1e-15);
    assert!((t.value(s)[1] - 0.75).abs() < 1e-15);
    let sg = t.sigmoid(z);
    assert_eq!(t.value(sg), [0.5, 0.5]);
    assert!(t.softmax(z, 1).is_err());
}

#[test]
fn smooth_op_gradients() {
    let opts = FdOptions::default();
    // Keep relu inputs away from the kink.
    let mut x = rand_t(&[3, 4, 5], 20);
    x.data.iter_mut().for_each(|v| {
        if v.abs() < 1e-2 {
            *v += 0.05
        }
    });
    let res = check_inputs(&[x.clone()], |t, v| { let y = t.relu(v[0]); weighted_sum(t, y, 1) }, opts).unwrap();
    assert!(max_err(&res) < 1e-4);
    let res = check_inputs(&[x.clone()], |t, v| { let y = t.sigmoid(v[0]); weighted_sum(t, y, 2) }, opts).unwrap();
    assert!(max_err(&res) < 1e-4);
    for axis in 0..3 {
        let res = check_inputs(&[x.clone()], |t, v| { let y = t.softmax(v[0], axis)?; weighted_sum(t, y, 3) }, opts).unwrap();
        assert!(max_err(&res) < 1e-4, "softmax axis {axis}");
    }
    let res = check_inputs(&[x.clone()], |t, v| { let y = t.global_avg_pool(v[0])?; weighted_sum(t, y, 4) }, opts).unwrap();
    assert!(max_err(&res) < 1e-4);
    let res = check_inputs(&[x.clone()], |t, v| { let y = t.swap_axes(v[0], 0, 2)?; weighted_sum(t, y, 5) }, opts).unwrap();
    assert!(max_err(&res) < 1e-4);
    let res = check_inputs(&[x.clone()], |t, v| { let y = t.select(v[0], 1, 2)?; weighted_sum(t, y, 6) }, opts).unwrap();
    assert!(max_err(&res) < 1e-4);
    let res = check_inputs(&[x.clone()], |t, v| { let y = t.sum_last(v[0]); weighted_sum(t, y, 7) }, opts).unwrap();
    assert!(max_err(&res) < 1e-4);
    let res = check_inputs(&[x], |t, v| { let y = t.repeat_last(v[0], 3)?; weighted_sum(t, y, 8) }, opts).unwrap();
    assert!(max_err(&res) < 1e-4);
}

#[test]
fn dense_examples_and_gradients() {
    let mut t = Tape::new();
    let x = t.constant([1, 2], vec![1., 2.]).unwrap();
    let w = t.constant([2, 1], vec![1., 1.]).unwrap();
    let b = t.constant([1], vec![1.]).unwrap();
    let y = t.dense(x, w, b).unwrap();
    assert_eq!(t.value(y), [4.]);
    let eye = t.constant([2, 2], vec![1., 0., 0., 1.]).unwrap();
    let zb = t.constant([2], vec![0., 0.]).unwrap();
    let y = t.dense(x, eye, zb).unwrap();
    assert_eq!(t.value(y), [1., 2.]);
    let bad = t.constant([3, 1], vec![1., 1., 1.]).unwrap();
    assert!(t.dense(x, bad, b).is_err());

    let inputs = [rand_t(&[3, 5], 30), rand_t(&[5, 7], 31), rand_t(&[7], 32)];
    let res = check_inputs(&inputs, |t, v| { let y = t.dense(v[0], v[1], v[2])?; weighted_sum(t, y, 9) }, FdOptions::default()).unwrap();
    assert!(max_err(&res) < 1e-4, "{res:?}");
}

#[test]
fn gap_examples() {
    let mut t = Tape::new();
    let x = t.constant([1, 2, 1], vec![2., 4.]).unwrap();
    let y = t.global_avg_pool(x).unwrap();
    assert_eq!(t.value(y), [3.]);
    let x1 = t.constant([1, 1, 3], vec![5., 6., 7.]).unwrap();
    let y1 = t.global_avg_pool(x1).unwrap();
    assert_eq!(t.value(y1), [5., 6., 7.]);

    let xt = rand_t(&[2, 10, 4], 40);
    let xv = t.leaf(&xt);
    let y = t.global_avg_pool(xv).unwrap();
    for b in 0..2 {
        for c in 0..4 {
            let brute: f64 = (0..10).map(|i| xt.data[(b * 10 + i) * 4 + c]).sum::<f64>() / 10.0;
            assert!((t.value(y)[b * 4 + c] - brute).abs() < 1e-12);
        }
    }
}

#[test]
fn concat_add_mul() {
    let mut t = Tape::new();
    let a = t.leaf(&Tensor::new([1, 2, 1], vec![1., 2.]).unwrap().with_grad());
    let b = t.leaf(&Tensor::new([1, 2, 2], vec![3., 4., 5., 6.]).unwrap().with_grad());
    let c = t.concat(a, b, 2).unwrap();
    assert_eq!(t.shape(c), [1, 2, 3]);
    assert_eq!(t.value(c), [1., 3., 4., 2., 5., 6.]);
    let s = t.sum(c);
    t.backward(s).unwrap();
    assert!(t.grad(a).unwrap().iter().all(|&g| g == 1.0));
    assert!(t.grad(b).unwrap().iter().all(|&g| g == 1.0));

    let x = t.leaf(&rand_t(&[2, 3], 41));
    let ones = t.leaf(&Tensor::full([2, 3], 1.0));
    let y = t.mul(x, ones).unwrap();
    assert_eq!(t.value(y), t.value(x));
    let bad = t.leaf(&Tensor::zeros([2]));
    assert!(t.add(x, bad).is_err());
    assert!(t.concat(a, x, 0).is_err());

    let opts = FdOptions::default();
    let ins = [rand_t(&[2, 3, 4], 42), rand_t(&[2, 3, 4], 43)];
    let res = check_inputs(&ins, |t, v| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y, 1) }, opts).unwrap();
    assert!(max_err(&res) < 1e-4);
    let ins = [rand_t(&[2, 3, 4], 44), rand_t(&[4], 45)];
    let res = check_inputs(&ins, |t, v| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y, 2) }, opts).unwrap();
    assert!(max_err(&res) < 1e-4);
    let res = check_inputs(&ins, |t, v| { let y = t.add(v[0], v[1])?; weighted_sum(t, y, 3) }, opts).unwrap();
    assert!(max_err(&res) < 1e-4);
    let ins = [rand_t(&[2, 3, 4], 46), rand_t(&[2, 5, 4], 47)];
    let res = check_inputs(&ins, |t, v| { let y = t.concat(v[0], v[1], 1)?; weighted_sum(t, y, 4) }, opts).unwrap();
    assert!(max_err(&res) < 1e-4);
    let ins = [rand_t(&[2, 3, 4], 48), rand_t(&[2, 4], 49)];
    let res = check_inputs(&ins, |t, v| { let y = t.scale_channels(v[0], v[1])?; weighted_sum(t, y, 5) }, opts).unwrap();
    assert!(max_err(&res) < 1e-4);
}

#[test]
fn cross_entropy_examples() {
    let mut t = Tape::new();
    let l = t.constant([1, 2], vec![0., 0.]).unwrap();
    let ce = t.cross_entropy(l, &[0]).unwrap();
    assert!((t.value(ce)[0] - std::f64::consts::LN_2).abs() < 1e-15);
    let l = t.constant([1, 2], vec![1., 0.]).unwrap();
    let ce = t.cross_entropy(l, &[1]).unwrap();
    assert!((t.value(ce)[0] - (1.0 + 1f64.exp()).ln()).abs() < 1e-15);
    assert!((t.value(ce)[0] - 1.313262).abs() < 1e-6);
    let l = t.constant([1, 2], vec![800., 0.]).unwrap();
    let ce = t.cross_entropy(l, &[0]).unwrap();
    assert!(t.value(ce)[0].abs() < 1e-300);
    assert!(matches!(t.cross_entropy(l, &[2]), Err(Error::LabelOutOfRange { label: 2, n_classes: 2 })));

    let ins = [rand_t(&[4, 3], 50)];
    let res = check_inputs(&ins, |t, v| t.cross_entropy(v[0], &[0, 2, 1, 2]), FdOptions::default()).unwrap();
    assert!(max_err(&res) < 1e-4);
}

#[test]
fn backward_basics() {
    let mut t = Tape::new();
    let x = t.leaf(&Tensor::scalar(3.0).with_grad());
    t.backward(x).unwrap();
    assert_eq!(t.grad(x).unwrap(), [1.0]);

    let mut t = Tape::new();
    let x = t.leaf(&Tensor::scalar(3.0).with_grad());
    let y = t.mul(x, x).unwrap();
    t.backward(y).unwrap();
    assert_eq!(t.grad(x).unwrap(), [6.0]);

    let mut t = Tape::new();
    let x = t.leaf(&Tensor::zeros([2]).with_grad());
    assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn multi_use_accumulates_every_contribution() {
    // x feeds k = 4 ops with distinct scales; dL/dx must be their sum.
    let mut t = Tape::new();
    let x = t.leaf(&Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap().with_grad());
    let scales = [1.0, 2.0, -3.0, 0.5];
    let mut parts = Vec::new();
    for s in scales {
        let y = t.scale(x, s);
        parts.push(t.sum(y));
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = t.add(total, p).unwrap();
    }
    t.backward(total).unwrap();
    let expect: f64 = scales.iter().sum();
    assert!(t.grad(x).unwrap().iter().all(|&g| g == expect));
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::new();
    let c = t.constant([2], vec![1., 2.]).unwrap();
    let x = t.leaf(&Tensor::new([2], vec![3., 4.]).unwrap().with_grad());
    let y = t.mul(x, c).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert!(t.grad(c).is_none());
    assert_eq!(t.grad(x).unwrap(), [1., 2.]);
}
