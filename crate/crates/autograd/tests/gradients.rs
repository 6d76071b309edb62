use cifm_autograd::check::{numeric_gradient, relative_error};
use cifm_autograd::{Graph, Matrix, Var};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Checks d(build(x))/dx against central differences.
fn check(x: Matrix, build: impl Fn(&mut Graph, Var) -> Var) -> f64 {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = build(&mut g, xv);
    let analytic = g.backward(out).get(xv).cloned().unwrap();
    let numeric = numeric_gradient(&x, 1e-5, |probe| {
        let mut g = Graph::new();
        let xv = g.input(probe.clone());
        let out = build(&mut g, xv);
        g.scalar_value(out)
    });
    relative_error(&analytic, &numeric)
}

/// Weighted sum with fixed random weights, so every output entry matters.
fn probe_sum(g: &mut Graph, v: Var, seed: u64) -> Var {
    let (r, c) = g.shape(v);
    let w = g.constant(random(r, c, seed));
    let p = g.mul(v, w);
    g.sum(p)
}

#[test]
fn matmul_and_transpose() {
    let b = random(4, 3, 1);
    let err = check(random(5, 4, 2), |g, x| {
        let bv = g.constant(b.clone());
        let y = g.matmul(x, bv);
        let y = g.transpose(y);
        probe_sum(g, y, 3)
    });
    assert!(err < 1e-7, "{err}");
    let a = random(2, 5, 4);
    let err = check(random(5, 4, 5), |g, x| {
        let av = g.constant(a.clone());
        let y = g.matmul(av, x);
        probe_sum(g, y, 6)
    });
    assert!(err < 1e-7, "{err}");
}

#[test]
fn elementwise_ops() {
    for (i, f) in [
        (|g: &mut Graph, x: Var| g.relu(x)) as fn(&mut Graph, Var) -> Var,
        |g, x| g.tanh(x),
        |g, x| g.gelu(x),
        |g, x| g.scale(x, -2.5),
        |g, x| g.add_scalar(x, 3.0),
        |g, x| g.mul(x, x),
        |g, x| {
            let y = g.tanh(x);
            g.sub(x, y)
        },
        |g, x| g.add(x, x),
    ]
    .into_iter()
    .enumerate()
    {
        let err = check(random(3, 4, 10 + i as u64), |g, x| {
            let y = f(g, x);
            probe_sum(g, y, 99)
        });
        assert!(err < 1e-7, "op {i}: {err}");
    }
}

#[test]
fn broadcast_gather_pick_reduce() {
    let err = check(random(1, 4, 20), |g, row| {
        let a = g.constant(random(3, 4, 21));
        let y = g.add_row(a, row);
        let y = g.tanh(y);
        probe_sum(g, y, 22)
    });
    assert!(err < 1e-7, "{err}");
    let err = check(random(5, 3, 23), |g, x| {
        let y = g.rows(x, &[4, 0, 4, 2]);
        probe_sum(g, y, 24)
    });
    assert!(err < 1e-7, "{err}");
    let err = check(random(3, 4, 25), |g, x| {
        let y = g.pick(x, &[1, 3, 0]);
        let y = g.tanh(y);
        g.mean(y)
    });
    assert!(err < 1e-7, "{err}");
    let err = check(random(3, 2, 26), |g, x| {
        let y = g.tanh(x);
        let c = g.concat_cols(&[x, y, x]);
        probe_sum(g, c, 27)
    });
    assert!(err < 1e-7, "{err}");
}

#[test]
fn softmax_normalize_layernorm() {
    let err = check(random(4, 5, 30), |g, x| {
        let y = g.log_softmax(x);
        probe_sum(g, y, 31)
    });
    assert!(err < 1e-7, "{err}");
    let err = check(random(4, 5, 32), |g, x| {
        let y = g.normalize_rows(x);
        probe_sum(g, y, 33)
    });
    assert!(err < 1e-7, "{err}");
    let gamma = random(1, 6, 34);
    let beta = random(1, 6, 35);
    let err = check(random(3, 6, 36), |g, x| {
        let ga = g.constant(gamma.clone());
        let be = g.constant(beta.clone());
        let y = g.layer_norm(x, ga, be, 1e-5);
        probe_sum(g, y, 37)
    });
    assert!(err < 1e-6, "{err}");
    let x = random(3, 6, 38);
    let err = check(random(1, 6, 39), |g, ga| {
        let xv = g.constant(x.clone());
        let be = g.constant(beta.clone());
        let y = g.layer_norm(xv, ga, be, 1e-5);
        probe_sum(g, y, 40)
    });
    assert!(err < 1e-7, "{err}");
}

#[test]
fn segment_pooling() {
    let mask = Array2::from_shape_vec((2, 3), vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    let err = check(random(6, 4, 41), |g, x| {
        let y = g.segment_mean(x, &mask);
        probe_sum(g, y, 42)
    });
    assert!(err < 1e-7, "{err}");
    let err = check(random(6, 4, 43), |g, x| {
        let y = g.segment_max(x, 3);
        probe_sum(g, y, 44)
    });
    assert!(err < 1e-7, "{err}");
}

#[test]
fn attention_matches_finite_differences() {
    let mask = vec![1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    let k = random(8, 4, 50);
    let v = random(8, 4, 51);
    let err = check(random(8, 4, 52), |g, q| {
        let kv = g.constant(k.clone());
        let vv = g.constant(v.clone());
        let y = g.attention(q, kv, vv, &mask, 2, 4);
        probe_sum(g, y, 53)
    });
    assert!(err < 1e-6, "q: {err}");
    let q = random(8, 4, 54);
    let err = check(random(8, 4, 55), |g, k| {
        let qv = g.constant(q.clone());
        let y = g.attention(qv, k, k, &mask, 2, 4);
        probe_sum(g, y, 56)
    });
    assert!(err < 1e-6, "kv: {err}");
}

#[test]
fn masked_keys_get_no_weight() {
    let mut g = Graph::new();
    let q = g.constant(random(3, 2, 60));
    let k = g.constant(random(3, 2, 61));
    let mut vm = random(3, 2, 62);
    let v = g.constant(vm.clone());
    let out = g.attention(q, k, v, &[1.0, 1.0, 0.0], 1, 3);
    let before = g.value(out).clone();
    vm.row_mut(2).fill(1e6);
    let mut g2 = Graph::new();
    let q = g2.constant(random(3, 2, 60));
    let k = g2.constant(random(3, 2, 61));
    let v = g2.constant(vm);
    let out2 = g2.attention(q, k, v, &[1.0, 1.0, 0.0], 1, 3);
    assert_eq!(&before, g2.value(out2));
}

#[test]
fn log_mean_exp_exact_and_surrogate() {
    let err = check(random(6, 1, 70), |g, x| g.log_mean_exp(x, None));
    assert!(err < 1e-8, "{err}");

    // A surrogate denominator equal to the batch mean reproduces the exact gradient.
    let x = random(5, 1, 71);
    let lme = (x.mapv(f64::exp).sum() / 5.0).ln();
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = g.log_mean_exp(xv, Some(lme));
    let surrogate = g.backward(out).get(xv).cloned().unwrap();
    let mut g = Graph::new();
    let xv = g.input(x);
    let out = g.log_mean_exp(xv, None);
    let exact = g.backward(out).get(xv).cloned().unwrap();
    assert!(relative_error(&surrogate, &exact) < 1e-12);

    // Large inputs stay finite.
    let mut g = Graph::new();
    let xv = g.input(Array2::from_elem((3, 1), 800.0));
    let out = g.log_mean_exp(xv, None);
    assert!((g.scalar_value(out) - 800.0).abs() < 1e-9);
}

#[test]
fn params_are_shared_and_accumulate() {
    let w = random(3, 3, 80);
    let x = random(2, 3, 81);
    let mut g = Graph::new();
    let a = g.param(&w);
    let b = g.param(&w);
    assert_eq!(a, b);
    let xv = g.constant(x.clone());
    let y1 = g.matmul(xv, a);
    let y2 = g.matmul(y1, b);
    let out = probe_sum(&mut g, y2, 82);
    let grads = g.backward(out);
    let analytic = grads.wrt(&g, &w).unwrap();
    let wr = random(2, 3, 82);
    let numeric = numeric_gradient(&w, 1e-6, |p| {
        let y = x.dot(p).dot(p);
        (&y * &wr).sum()
    });
    assert!(relative_error(&analytic, &numeric) < 1e-7);
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(random(2, 2, 90));
    let x = g.input(random(2, 2, 91));
    let y = g.mul(c, x);
    let d = g.detach(y);
    let z = g.add(y, d);
    let out = g.sum(z);
    let grads = g.backward(out);
    assert!(grads.get(c).is_none());
    assert!(grads.get(d).is_none());
    assert_eq!(grads.get(x).unwrap(), g.value(c));
}
