use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

const EPS: f64 = 1e-3;
const TOL: f64 = 1e-3;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, 1.0)
}

fn assert_grads(store: &mut ParamStore, build: impl Fn(&mut Tape, &ParamStore) -> Var) {
    for c in check_gradients(store, EPS, 64, build) {
        assert!(c.rel_error <= TOL, "{}: rel error {:.3e} over {} entries", c.name, c.rel_error, c.checked);
    }
}

// Projects to a scalar with fixed random weights so every output entry
// receives a distinct upstream gradient.
fn probe(t: &mut Tape, v: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = t.shape(v).to_vec();
    let w = t.leaf(rand_t(&mut rng, &shape));
    let m = t.mul(v, w);
    t.sum(m)
}

#[test]
fn elementwise_and_matmul_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = store_of(vec![
        ("a", rand_t(&mut rng, &[3, 4])),
        ("b", rand_t(&mut rng, &[3, 4])),
        ("w", rand_t(&mut rng, &[4, 5])),
        ("bias", rand_t(&mut rng, &[5])),
    ]);
    assert_grads(&mut s, |t, s| {
        let a = t.param(s, s.find("a").unwrap());
        let b = t.param(s, s.find("b").unwrap());
        let w = t.param(s, s.find("w").unwrap());
        let bias = t.param(s, s.find("bias").unwrap());
        let x = t.mul(a, b);
        let x = t.sub(x, b);
        let x = t.add(x, a);
        let x = t.scale(x, 0.7);
        let y = t.matmul(x, w);
        let y = t.add_bias(y, bias);
        let y = t.gelu(y);
        probe(t, y, 9)
    });
}

#[test]
fn shape_op_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut s = store_of(vec![
        ("x", rand_t(&mut rng, &[2, 3, 4])),
        ("y", rand_t(&mut rng, &[3, 4])),
        ("v", rand_t(&mut rng, &[6])),
    ]);
    assert_grads(&mut s, |t, s| {
        let x = t.param(s, s.find("x").unwrap());
        let y = t.param(s, s.find("y").unwrap());
        let v = t.param(s, s.find("v").unwrap());
        let z = t.add_broadcast(x, y);
        let zt = t.transpose12(z);
        let zt = t.reshape(zt, &[2, 12]);
        let sl = t.slice_last(zt, 3, 5);
        let vb = t.broadcast_rows(v, 2);
        let c = t.concat_last(&[sl, vb, zt]);
        let g = t.gather_rows(c, &[1, 0, 1]);
        probe(t, g, 10)
    });
}

#[test]
fn bmm_softmax_and_layer_norm_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = store_of(vec![
        ("a", rand_t(&mut rng, &[2, 3, 4])),
        ("b", rand_t(&mut rng, &[2, 4, 3])),
        ("g", rand_t(&mut rng, &[3])),
        ("be", rand_t(&mut rng, &[3])),
    ]);
    assert_grads(&mut s, |t, s| {
        let a = t.param(s, s.find("a").unwrap());
        let b = t.param(s, s.find("b").unwrap());
        let g = t.param(s, s.find("g").unwrap());
        let be = t.param(s, s.find("be").unwrap());
        let m = t.bmm(a, b);
        let sm = t.softmax(m);
        let ln = t.layer_norm(sm, g, be);
        probe(t, ln, 11)
    });
}

#[test]
fn moving_avg_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = store_of(vec![("x", rand_t(&mut rng, &[2, 7, 3]))]);
    for k in [1, 3, 5, 13] {
        if k / 2 >= 7 {
            continue;
        }
        assert_grads(&mut s, |t, s| {
            let x = t.param(s, s.find("x").unwrap());
            let m = t.moving_avg(x, k);
            probe(t, m, 12)
        });
    }
}

#[test]
fn moving_avg_reflects_without_repeating_edge() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::new(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]));
    let m = t.moving_avg(x, 3);
    // padded sequence: 2 1 2 3 4 3
    let want = [5.0 / 3.0, 2.0, 3.0, 10.0 / 3.0];
    for (a, b) in t.value(m).data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn feb_grads_even_and_odd_lengths() {
    for (l, modes) in [(8, 5), (8, 3), (7, 4), (6, 1)] {
        let mut rng = ChaCha8Rng::seed_from_u64(5 + l as u64);
        let mut s = store_of(vec![
            ("x", rand_t(&mut rng, &[2, l, 3])),
            ("w", rand_t(&mut rng, &[modes, 3, 3, 2])),
        ]);
        assert_grads(&mut s, |t, s| {
            let x = t.param(s, s.find("x").unwrap());
            let w = t.param(s, s.find("w").unwrap());
            let y = t.feb(x, w, modes);
            probe(t, y, 13)
        });
    }
}

#[test]
fn feb_identity_weights_low_pass() {
    // With identity mixing and all bins kept the block reproduces its input.
    let l = 6;
    let modes = l / 2 + 1;
    let mut w = vec![0.0; modes * 2 * 2 * 2];
    for k in 0..modes {
        for i in 0..2 {
            w[((k * 2 + i) * 2 + i) * 2] = 1.0;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let xt = rand_t(&mut rng, &[1, l, 2]);
    let mut t = Tape::new();
    let x = t.leaf(xt.clone());
    let wv = t.leaf(Tensor::new(&[modes, 2, 2, 2], w));
    let y = t.feb(x, wv, modes);
    for (a, b) in t.value(y).data().iter().zip(xt.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv_group_norm_pool_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut s = store_of(vec![
        ("x", rand_t(&mut rng, &[2, 4, 6, 6])),
        ("w", rand_t(&mut rng, &[4, 1, 3, 3])),
        ("b", rand_t(&mut rng, &[4])),
        ("w2", rand_t(&mut rng, &[2, 4, 3, 3])),
        ("g", rand_t(&mut rng, &[2])),
        ("be", rand_t(&mut rng, &[2])),
    ]);
    assert_grads(&mut s, |t, s| {
        let x = t.param(s, s.find("x").unwrap());
        let w = t.param(s, s.find("w").unwrap());
        let b = t.param(s, s.find("b").unwrap());
        let w2 = t.param(s, s.find("w2").unwrap());
        let g = t.param(s, s.find("g").unwrap());
        let be = t.param(s, s.find("be").unwrap());
        let y = t.conv2d(x, w, Some(b), Conv2dSpec::same(3, 2, 4));
        let spec = Conv2dSpec { stride: 2, padding: 1, dilation: 1, groups: 1 };
        let y = t.conv2d(y, w2, None, spec);
        let y = t.group_norm(y, g, be);
        let p = t.avg_pool_hw(y);
        probe(t, p, 14)
    });
}

#[test]
fn weighted_ce_grads_and_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels = [0u8, 1, 1, 0, 1];
    let w = [0.516, 15.327];
    let mut s = store_of(vec![("z", rand_t(&mut rng, &[5, 2]))]);
    assert_grads(&mut s, |t, s| {
        let z = t.param(s, s.find("z").unwrap());
        t.weighted_ce(z, &labels, w)
    });

    // hand value: logits (2, 0) with label 0 -> -ln(0.880797)
    let v = weighted_ce_from_logits(&[2.0, 0.0], &[0], [1.0, 1.0]);
    assert!((v - 0.126_928_011_042_972_6).abs() < 1e-12);
    let v = weighted_ce_from_logits(&[2.0, 0.0, 2.0, 0.0], &[0, 1], [1.0, 3.0]);
    assert!((v - (0.126_928_011_042_972_6 + 3.0 * 2.126_928_011_042_972_6) / 2.0).abs() < 1e-12);
}

#[test]
fn dropout_style_mask_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut s = store_of(vec![("x", rand_t(&mut rng, &[10]))]);
    let mask: Vec<f64> = (0..10).map(|i| if i % 3 == 0 { 0.0 } else { 1.5 }).collect();
    assert_grads(&mut s, |t, s| {
        let x = t.param(s, s.find("x").unwrap());
        let y = t.mul_const(x, mask.clone());
        probe(t, y, 15)
    });
}

#[test]
fn param_used_twice_accumulates() {
    let mut s = store_of(vec![("x", Tensor::new(&[2], vec![1.5, -2.0]))]);
    let mut t = Tape::new();
    let x = t.param(&s, s.find("x").unwrap());
    let x2 = t.param(&s, s.find("x").unwrap());
    let y = t.mul(x, x2);
    let l = t.sum(y);
    let g = t.backward(l).for_params(&t, &s);
    assert_eq!(g[0].data(), &[3.0, -4.0]);
    assert_grads(&mut s, |t, s| {
        let x = t.param(s, s.find("x").unwrap());
        let y = t.mul(x, x);
        t.sum(y)
    });
}

#[test]
fn relative_error_edge_cases() {
    assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    assert!((relative_error(&[1.0], &[-1.0]) - 1.0).abs() < 1e-12);
    // Roundoff around a vanishing gradient stays below tolerance.
    assert!(relative_error(&[0.0], &[1e-12]) < 1e-5);
}
