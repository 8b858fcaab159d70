//! Finite-difference checks for every op at randomized small shapes.

use super::*;
use crate::optim::grad_check;
use crate::rng::Rng;

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    rng.normal_tensor(shape)
}

fn check<F>(f: F, inputs: &[Tensor<f64>], tol: f64)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let err = grad_check(&f, inputs, 1e-5).unwrap();
    assert!(err < tol, "grad check failed: max rel err {err} > {tol}");
}

#[test]
fn elementwise_ops() {
    let mut rng = Rng::new(1);
    let x = randn(&mut rng, &[2, 3]);
    let y = randn(&mut rng, &[2, 3]);
    check(
        |t, v| {
            let a = t.add(v[0], v[1]);
            let s = t.sub(a, v[1]);
            let q = t.square(s);
            let g = t.gelu(q);
            let sc = t.scale(g, 0.7);
            t.sum_all(sc)
        },
        &[x, y],
        1e-6,
    );
}

#[test]
fn gelu_matches_reference_curve() {
    // spot values of the tanh-approximation gelu
    let g = super::linalg::gelu_scalar(1.0f64);
    assert!((g - 0.841192).abs() < 1e-5, "{g}");
    let g0 = super::linalg::gelu_scalar(0.0f64);
    assert_eq!(g0, 0.0);
}

#[test]
fn linear_op() {
    let mut rng = Rng::new(2);
    let x = randn(&mut rng, &[5, 4]);
    let w = randn(&mut rng, &[4, 3]);
    let b = randn(&mut rng, &[3]);
    check(
        |t, v| {
            let y = t.linear(v[0], v[1], v[2]);
            let s = t.square(y);
            t.mean_all(s)
        },
        &[x, w, b],
        1e-7,
    );
}

#[test]
fn conv_ops() {
    let mut rng = Rng::new(3);
    // stride 1, pad 1
    let x = randn(&mut rng, &[2, 5, 4, 3]);
    let w = randn(&mut rng, &[3, 3, 3, 2]).scale(0.4);
    let b = randn(&mut rng, &[2]);
    check(
        |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1);
            let q = t.square(y);
            t.mean_all(q)
        },
        &[x.clone(), w, b.clone()],
        1e-6,
    );
    // stride 2 downsample
    let w2 = randn(&mut rng, &[3, 3, 3, 4]).scale(0.4);
    let b2 = randn(&mut rng, &[4]);
    let x2 = randn(&mut rng, &[1, 4, 4, 3]);
    check(
        |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 2, 1);
            let q = t.square(y);
            t.mean_all(q)
        },
        &[x2, w2, b2],
        1e-6,
    );
    // 1x1 conv (skip projections)
    let w3 = randn(&mut rng, &[1, 1, 3, 2]);
    let b3 = randn(&mut rng, &[2]);
    check(
        |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 0);
            let q = t.square(y);
            t.mean_all(q)
        },
        &[x, w3, b3],
        1e-6,
    );
}

#[test]
fn upsample_op() {
    let mut rng = Rng::new(4);
    let x = randn(&mut rng, &[2, 3, 2, 3]);
    check(
        |t, v| {
            let y = t.upsample_nearest2(v[0]);
            let q = t.square(y);
            t.mean_all(q)
        },
        &[x],
        1e-7,
    );
}

#[test]
fn norm_ops() {
    let mut rng = Rng::new(5);
    let x = randn(&mut rng, &[2, 3, 2, 4]);
    let g = randn(&mut rng, &[4]).map(|v| v * 0.3 + 1.0);
    let b = randn(&mut rng, &[4]);
    check(
        |t, v| {
            let y = t.group_norm(v[0], v[1], v[2], 2);
            let q = t.square(y);
            t.mean_all(q)
        },
        &[x.clone(), g.clone(), b.clone()],
        1e-5,
    );
    check(
        |t, v| {
            let y = t.layer_norm_last(v[0], v[1], v[2]);
            let q = t.square(y);
            t.mean_all(q)
        },
        &[x, g, b],
        1e-5,
    );
}

#[test]
fn concat_and_chan_vec_ops() {
    let mut rng = Rng::new(6);
    let a = randn(&mut rng, &[2, 2, 2, 3]);
    let b = randn(&mut rng, &[2, 2, 2, 2]);
    let v = randn(&mut rng, &[2, 5]);
    check(
        |t, vars| {
            let c = t.concat_channels(vars[0], vars[1]);
            let c = t.add_chan_vec(c, vars[2]);
            let q = t.square(c);
            t.mean_all(q)
        },
        &[a, b, v],
        1e-7,
    );
}

#[test]
fn embed_rows_op() {
    let mut rng = Rng::new(7);
    let table = randn(&mut rng, &[6, 4]);
    check(
        |t, v| {
            let rows = t.embed_rows(v[0], &[3, 0, 3]);
            let q = t.square(rows);
            t.mean_all(q)
        },
        &[table],
        1e-7,
    );
}

#[test]
fn self_attention_op() {
    let mut rng = Rng::new(8);
    let x = randn(&mut rng, &[2, 5, 4]).scale(0.6);
    let wq = randn(&mut rng, &[4, 4]).scale(0.5);
    let wk = randn(&mut rng, &[4, 4]).scale(0.5);
    let wv = randn(&mut rng, &[4, 4]).scale(0.5);
    let wo = randn(&mut rng, &[4, 4]).scale(0.5);
    check(
        |t, v| {
            let y = t.self_attention(v[0], v[1], v[2], v[3], v[4]);
            let y = t.add(y, v[0]);
            let q = t.square(y);
            t.mean_all(q)
        },
        &[x, wq, wk, wv, wo],
        1e-5,
    );
}

#[test]
fn prompt_inject_op() {
    let mut rng = Rng::new(9);
    let x = randn(&mut rng, &[2, 4, 3]);
    let emb = randn(&mut rng, &[2, 5]);
    let wv = randn(&mut rng, &[5, 3]);
    let bv = randn(&mut rng, &[3]);
    let wo = randn(&mut rng, &[3, 3]);
    let bo = randn(&mut rng, &[3]);
    check(
        |t, v| {
            let y = t.prompt_inject(v[0], v[1], v[2], v[3], v[4], v[5]);
            let q = t.square(y);
            t.mean_all(q)
        },
        &[x, emb, wv, bv, wo, bo],
        1e-6,
    );
}

#[test]
fn reshape_is_transparent() {
    let mut rng = Rng::new(10);
    let x = randn(&mut rng, &[2, 6]);
    check(
        |t, v| {
            let y = t.reshape(v[0], &[3, 4]);
            let q = t.square(y);
            t.sum_all(q)
        },
        &[x],
        1e-9,
    );
}

#[test]
fn forward_values_are_deterministic() {
    // same inputs, two raw runs: bitwise-equal outputs
    let mut rng = Rng::new(11);
    let x: Tensor<f32> = rng.normal_tensor(&[2, 8, 8, 4]);
    let w: Tensor<f32> = rng.normal_tensor(&[3, 3, 4, 4]);
    let b: Tensor<f32> = rng.normal_tensor(&[4]);
    let run = || {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let wv = t.leaf(w.clone());
        let bv = t.leaf(b.clone());
        let y = t.conv2d(xv, wv, bv, 1, 1);
        let y = t.gelu(y);
        t.value(y).clone()
    };
    let a = run();
    let b2 = run();
    assert_eq!(a.data(), b2.data());
}

#[test]
fn conv_threads_do_not_change_bits() {
    let mut rng = Rng::new(12);
    let x: Tensor<f32> = rng.normal_tensor(&[4, 8, 8, 3]);
    let w: Tensor<f32> = rng.normal_tensor(&[3, 3, 3, 5]);
    let b: Tensor<f32> = rng.normal_tensor(&[5]);
    let run = |threads: usize| {
        crate::parallel::set_threads(threads);
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let wv = t.leaf(w.clone());
        let bv = t.leaf(b.clone());
        let y = t.conv2d(xv, wv, bv, 1, 1);
        let loss = t.mean_all(y);
        let grads = t.backward(loss);
        let out = (t.value(y).clone(), grads.get(wv).unwrap().clone(), grads.get(xv).unwrap().clone());
        crate::parallel::set_threads(0);
        out
    };
    let (y1, gw1, gx1) = run(1);
    let (y2, gw2, gx2) = run(2);
    let (y4, gw4, gx4) = run(4);
    assert_eq!(y1.data(), y2.data());
    assert_eq!(y1.data(), y4.data());
    assert_eq!(gw1.data(), gw2.data());
    assert_eq!(gw1.data(), gw4.data());
    assert_eq!(gx1.data(), gx4.data());
}
