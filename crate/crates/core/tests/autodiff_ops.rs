use std::rc::Rc;

use htt_core::autodiff::gradcheck::{central_difference, mismatches};
use htt_core::autodiff::{AdamState, Graph, Tensor, Var, LAYER_NORM_EPS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = dyn Fn(&mut Graph, &[Var]) -> Var;

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Analytic gradients of every input, each compared against central differences.
fn grad_check(inputs: &[(Vec<usize>, Vec<f64>)], build: &Build, rel: f64) {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(s, d)| g.variable(s.clone(), d.clone()).unwrap())
        .collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    for (k, (_, data)) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; data.len()]);
        let numeric = central_difference(data, 1e-5, |probe| {
            let mut g = Graph::<f64>::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(i, (s, d))| g.constant(s.clone(), if i == k { probe.to_vec() } else { d.clone() }).unwrap())
                .collect();
            let l = build(&mut g, &vars);
            g.item(l)
        });
        let bad = mismatches(&analytic, &numeric, rel, 1e-8);
        assert!(bad.is_empty(), "input {k}: {bad:?}");
    }
}

#[test]
fn matmul_examples() {
    let mut g = Graph::<f64>::new();
    let i = g.tensor(&Tensor::eye(2));
    let m = g.constant([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let out = g.matmul(i, m).unwrap();
    assert_eq!(g.value(out), &[1.0, 2.0, 3.0, 4.0]);
    let p = g.constant([2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let m = g.constant([2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
    let out = g.matmul(p, m).unwrap();
    assert_eq!(g.value(out), &[5.0, 6.0, 0.0, 0.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.zeros([2, 3]);
    let b = g.zeros([2, 3]);
    let msg = g.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2x3]") && msg.matches("[2x3]").count() == 2, "{msg}");
}

#[test]
fn matmul_gradient_is_row_sums_of_b() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (av, bv) = (random(&mut rng, 12), random(&mut rng, 8));
    let mut g = Graph::<f64>::new();
    let a = g.variable([3, 4], av.clone()).unwrap();
    let b = g.variable([4, 2], bv.clone()).unwrap();
    let c = g.matmul(a, b).unwrap();
    let s = g.sum(c);
    g.backward(s).unwrap();
    // d sum(AB) / dA[i][k] = sum_j B[k][j]
    let expected: Vec<f64> = (0..3).flat_map(|_| (0..4).map(|k| bv[2 * k] + bv[2 * k + 1]).collect::<Vec<_>>()).collect();
    for (x, y) in g.grad(a).unwrap().iter().zip(&expected) {
        assert!((x - y).abs() < 1e-15);
    }
    let inputs = vec![(vec![3, 4], av), (vec![4, 2], bv)];
    grad_check(
        &inputs,
        &|g, v| {
            let c = g.matmul(v[0], v[1]).unwrap();
            g.sum(c)
        },
        1e-6,
    );
}

#[test]
fn masked_softmax_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant([3], vec![0.0; 3]).unwrap();
    let y = g.softmax(x).unwrap();
    for v in g.value(y) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = g.constant([2], vec![5.0, 5.0]).unwrap();
    let y = g.masked_softmax(x, Some(Rc::from(vec![true, false]))).unwrap();
    assert_eq!(g.value(y), &[1.0, 0.0]);
    let x = g.constant([3], vec![1.0, 2.0, 3.0]).unwrap();
    let y = g.softmax(x).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (v, l) in g.value(y).iter().zip([1.0f64, 2.0, 3.0]) {
        assert!((v - l.exp() / z).abs() < 1e-15);
    }
    for (v, e) in g.value(y).iter().zip([0.09003057, 0.24472847, 0.66524096]) {
        assert!((v - e).abs() < 5e-9);
    }
}

#[test]
fn fully_masked_row_is_an_error() {
    let mut g = Graph::<f64>::new();
    let x = g.constant([2, 2], vec![1.0; 4]).unwrap();
    assert!(g.masked_softmax(x, Some(Rc::from(vec![true, true, false, false]))).is_err());
    assert!(g.masked_softmax(x, Some(Rc::from(vec![false, false]))).is_err());
    assert!(g.masked_softmax(x, Some(Rc::from(vec![true, true, true]))).is_err());
}

#[test]
fn masked_positions_get_no_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.variable([2, 3], vec![0.1, -0.4, 0.9, 1.5, 0.2, -0.3]).unwrap();
    let mask = Rc::from(vec![true, false, true]);
    let y = g.masked_softmax(x, Some(mask)).unwrap();
    let w = g.constant([2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
    let l = g.mul(y, w).unwrap();
    let l = g.sum(l);
    g.backward(l).unwrap();
    let gx = g.grad(x).unwrap();
    assert_eq!((gx[1], gx[4]), (0.0, 0.0));
    let inputs = vec![(vec![2, 3], vec![0.1, -0.4, 0.9, 1.5, 0.2, -0.3])];
    grad_check(
        &inputs,
        &|g, v| {
            let y = g.masked_softmax(v[0], Some(Rc::from(vec![true, false, true]))).unwrap();
            let w = g.constant([2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
            let l = g.mul(y, w).unwrap();
            g.sum(l)
        },
        1e-4,
    );
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::<f64>::new();
    let gain = g.constant([4], vec![1.0; 4]).unwrap();
    let bias = g.constant([4], vec![0.0; 4]).unwrap();
    let x = g.constant([4], vec![1.0; 4]).unwrap();
    let y = g.layer_norm(x, gain, bias).unwrap();
    assert_eq!(g.value(y), &[0.0; 4]);

    let gain = g.constant([2], vec![1.0; 2]).unwrap();
    let bias = g.constant([2], vec![0.0; 2]).unwrap();
    let x = g.constant([2], vec![-1.0, 1.0]).unwrap();
    let y = g.layer_norm(x, gain, bias).unwrap();
    let expected = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
    assert!((g.value(y)[0] + expected).abs() < 1e-15 && (g.value(y)[1] - expected).abs() < 1e-15);

    let x = g.constant([1], vec![1.0]).unwrap();
    let one = g.constant([1], vec![1.0]).unwrap();
    assert!(g.layer_norm(x, one, one).is_err());
}

#[test]
fn layer_norm_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 64;
    let mut g = Graph::<f64>::new();
    let gain = g.constant([d], vec![1.0; d]).unwrap();
    let bias = g.constant([d], vec![0.0; d]).unwrap();
    let x = g.constant([d], random(&mut rng, d).iter().map(|v| 3.0 * v + 2.0).collect::<Vec<_>>()).unwrap();
    let y = g.layer_norm(x, gain, bias).unwrap();
    let ys = g.value(y);
    let mean = ys.iter().sum::<f64>() / d as f64;
    let var = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
    assert!(mean.abs() <= 1e-12);
    assert!((var - 1.0).abs() <= 1e-4);
}

#[test]
fn linear_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant([2], vec![1.0, 2.0]).unwrap();
    let w = g.tensor(&Tensor::eye(2));
    let b = g.constant([2], vec![0.0, 0.0]).unwrap();
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y), &[1.0, 2.0]);
    let x = g.constant([2], vec![1.0, 1.0]).unwrap();
    let w = g.constant([2, 1], vec![1.0, 1.0]).unwrap();
    let b = g.constant([1], vec![1.0]).unwrap();
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y), &[3.0]);
    let bad = g.constant([3, 1], vec![1.0; 3]).unwrap();
    assert!(g.linear(x, bad, None).is_err());
}

#[test]
fn linear_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = vec![
        (vec![3, 4], random(&mut rng, 12)),
        (vec![4, 2], random(&mut rng, 8)),
        (vec![2], random(&mut rng, 2)),
    ];
    grad_check(
        &inputs,
        &|g, v| {
            let y = g.linear(v[0], v[1], Some(v[2])).unwrap();
            let y = g.mul(y, y).unwrap();
            g.sum(y)
        },
        1e-6,
    );
}

#[test]
fn leaky_relu_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.variable([3], vec![2.0, -1.0, -3.0]).unwrap();
    let y = g.leaky_relu(x, 0.01);
    assert_eq!(g.value(y)[..2], [2.0, -0.01]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 0.01, 0.01]);
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::<f64>::new();
    let p = g.constant([3], vec![1.0, 0.0, 0.0]).unwrap();
    let l = g.cross_entropy(p, &[0]).unwrap();
    assert_eq!(g.value(l), &[0.0]);
    let p = g.constant([2], vec![0.5, 0.5]).unwrap();
    let l = g.cross_entropy(p, &[1]).unwrap();
    assert!((g.value(l)[0] - std::f64::consts::LN_2).abs() < 1e-15);
    let p = g.constant([3], vec![0.1, 0.2, 0.7]).unwrap();
    let l = g.cross_entropy(p, &[2]).unwrap();
    assert!((g.value(l)[0] - 0.356675).abs() < 1e-6);
    assert!((g.value(l)[0] + 0.7f64.ln()).abs() < 1e-15);
    assert!(g.cross_entropy(p, &[3]).is_err());
    let q = g.constant([2], vec![0.5, 0.6]).unwrap();
    assert!(g.cross_entropy(q, &[0]).is_err());
    let z = g.constant([2], vec![1.0, 0.0]).unwrap();
    let l = g.cross_entropy(z, &[1]).unwrap();
    assert!((g.value(l)[0] + 1e-12f64.ln()).abs() < 1e-12);
}

#[test]
fn backward_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.variable([2, 3, 2], vec![0.5; 12]).unwrap();
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 12]);

    let mut g = Graph::<f64>::new();
    let x = g.variable([1], vec![3.0]).unwrap();
    let y = g.mul(x, x).unwrap();
    let y = g.sum(y);
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0]);
    // a second call accumulates
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[12.0]);

    let not_scalar = g.variable([2], vec![1.0, 2.0]).unwrap();
    assert!(g.backward(not_scalar).is_err());
}

#[test]
fn structural_ops_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![(vec![4, 3], random(&mut rng, 12)), (vec![2, 3], random(&mut rng, 6))];
    grad_check(
        &inputs,
        &|g, v| {
            let a = g.slice_rows(v[0], 1, 2).unwrap();
            let b = g.concat_rows(&[a, v[1]]).unwrap();
            let c = g.slice_cols(b, 1, 2).unwrap();
            let t = g.transpose(v[0]).unwrap();
            let rows = g.slice_rows(t, 1, 2).unwrap();
            let d = g.matmul(c, rows).unwrap();
            let e = g.concat_cols(&[d, c]).unwrap();
            let f = g.abs(e);
            let h = g.mean_rows(f).unwrap();
            let r = g.reshape(h, [h_len(g, h)]).unwrap();
            let s = g.sum_rows(r);
            let m = g.matmul_nt(b, v[1]).unwrap();
            let m = g.scale(m, 0.5);
            let m = g.sum(m);
            let out = g.add(s, m).unwrap();
            g.sum(out)
        },
        1e-5,
    );
}

fn h_len(g: &Graph, v: Var) -> usize {
    g.value(v).len()
}

#[test]
fn composed_softmax_chain_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![
        (vec![3, 4], random(&mut rng, 12)),
        (vec![4], random(&mut rng, 4).iter().map(|v| 1.0 + 0.3 * v).collect()),
        (vec![4], random(&mut rng, 4)),
        (vec![4, 3], random(&mut rng, 12)),
    ];
    grad_check(
        &inputs,
        &|g, v| {
            let n = g.layer_norm(v[0], v[1], v[2]).unwrap();
            let h = g.leaky_relu(n, 0.01);
            let logits = g.matmul(h, v[3]).unwrap();
            let p = g.softmax(logits).unwrap();
            let l = g.cross_entropy(p, &[0, 2, 1]).unwrap();
            g.sum(l)
        },
        1e-3,
    );
}

#[test]
fn im2col_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = vec![(vec![5, 4, 3], random(&mut rng, 60)), (vec![27, 2], random(&mut rng, 54))];
    grad_check(
        &inputs,
        &|g, v| {
            let cols = g.im2col(v[0], 3, 2).unwrap();
            let y = g.matmul(cols, v[1]).unwrap();
            let y = g.mul(y, y).unwrap();
            g.sum(y)
        },
        1e-6,
    );
}

#[test]
fn adam_first_step_on_a_scalar() {
    let mut p = vec![Tensor::<f64>::new([1], vec![1.0]).unwrap().with_grad()];
    let mut adam = AdamState::new(&p, 0.1);
    p[0].accumulate_grad(&[1.0]).unwrap();
    adam.step(&mut p).unwrap();
    // m_hat = 1, v_hat = 1: the update is lr / (1 + eps)
    assert!((p[0].data()[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    assert_eq!(adam.step_count(), 1);
    assert!(p[0].grad.as_ref().unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn f32_graphs_work() {
    let mut g: Graph<f32> = Graph::new();
    let x = g.variable([2], vec![1.0f32, 2.0]).unwrap();
    let y = g.softmax(x).unwrap();
    let l = g.cross_entropy(y, &[1]).unwrap();
    let l = g.sum(l);
    g.backward(l).unwrap();
    let gx = g.grad(x).unwrap();
    assert!((gx[0] + gx[1]).abs() < 1e-6);
}

fn row_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, 2..12)
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(x in row_strategy(), mask_bits in prop::collection::vec(any::<bool>(), 12)) {
        let n = x.len();
        let mut mask: Vec<bool> = mask_bits[..n].to_vec();
        mask[0] = true;
        let mut g = Graph::<f64>::new();
        let v = g.constant([n], x).unwrap();
        let y = g.masked_softmax(v, Some(Rc::from(mask.clone()))).unwrap();
        let ys = g.value(y);
        prop_assert!(ys.iter().all(|&p| p >= 0.0));
        prop_assert!((ys.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (p, m) in ys.iter().zip(&mask) {
            if !m { prop_assert_eq!(*p, 0.0); }
        }
    }

    #[test]
    fn layer_norm_ignores_row_shift(x in row_strategy(), c in -50.0f64..50.0) {
        let n = x.len();
        let mut g = Graph::<f64>::new();
        let gain = g.constant([n], vec![1.0; n]).unwrap();
        let bias = g.constant([n], vec![0.0; n]).unwrap();
        let a = g.constant([n], x.clone()).unwrap();
        let b = g.constant([n], x.iter().map(|v| v + c).collect::<Vec<_>>()).unwrap();
        let ya = g.layer_norm(a, gain, bias).unwrap();
        let yb = g.layer_norm(b, gain, bias).unwrap();
        for (p, q) in g.value(ya).iter().zip(g.value(yb)) {
            prop_assert!((p - q).abs() <= 1e-10);
        }
    }

    #[test]
    fn backward_is_deterministic(seed in 0u64..1000) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::<f64>::new();
            let a = g.variable([3, 3], random(&mut rng, 9)).unwrap();
            let b = g.matmul(a, a).unwrap();
            let p = g.softmax(b).unwrap();
            let l = g.cross_entropy(p, &[0, 1, 2]).unwrap();
            let l = g.sum(l);
            g.backward(l).unwrap();
            (g.item(l).to_bits(), g.grad(a).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn random_composition_matches_finite_differences(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![(vec![2, 3], random(&mut rng, 6)), (vec![3, 3], random(&mut rng, 9))];
        grad_check(&inputs, &|g, v| {
            let y = g.linear(v[0], v[1], None).unwrap();
            let y = g.sub(y, v[0]).unwrap();
            let z = g.mul(y, y).unwrap();
            let row = g.constant([3], vec![0.1, 0.2, 0.3]).unwrap();
            let z = g.add_row(z, row).unwrap();
            g.sum(z)
        }, 1e-4);
    }
}
