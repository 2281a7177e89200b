//! Finite-difference checks for every tape op, in f64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skinssl_tensor::{grad_check, Tape, Tensor, Var};

const TOL: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn grad_add_sub_mul_scale() {
    let mut r = rng(1);
    let a = Tensor::randn(&[3, 4], 1.0, &mut r);
    let b = Tensor::randn(&[3, 4], 1.0, &mut r);
    grad_check(
        &[a, b],
        |t, v| {
            let s = t.add(v[0], v[1]);
            let d = t.sub(s, v[1]);
            let m = t.mul(d, v[1]);
            let k = t.scale(m, 0.7);
            t.sum_all(k)
        },
        200,
        0,
    )
    .assert_close(TOL);
}

#[test]
fn grad_mul_const_and_mean() {
    let mut r = rng(2);
    let x = Tensor::randn(&[4, 5], 1.0, &mut r);
    let c = Tensor::randn(&[4, 5], 1.0, &mut r);
    grad_check(
        &[x],
        move |t, v| {
            let m = t.mul_const(v[0], &c);
            t.mean_all(m)
        },
        200,
        0,
    )
    .assert_close(TOL);
}

#[test]
fn grad_add_row() {
    let mut r = rng(3);
    let x = Tensor::randn(&[5, 3], 1.0, &mut r);
    let row = Tensor::randn(&[3], 1.0, &mut r);
    grad_check(
        &[x, row],
        |t, v| {
            let y = t.add_row(v[0], v[1]);
            let sq = t.mul(y, y);
            t.sum_all(sq)
        },
        200,
        0,
    )
    .assert_close(TOL);
}

#[test]
fn grad_linear() {
    let mut r = rng(4);
    let x = Tensor::randn(&[6, 4], 1.0, &mut r);
    let w = Tensor::randn(&[4, 3], 0.5, &mut r);
    let b = Tensor::randn(&[3], 0.5, &mut r);
    grad_check(
        &[x, w, b],
        |t, v| {
            let y = t.linear(v[0], v[1], v[2]);
            let sq = t.mul(y, y);
            t.sum_all(sq)
        },
        200,
        0,
    )
    .assert_close(TOL);
}

#[test]
fn grad_matmul_both_orients() {
    let mut r = rng(5);
    let a = Tensor::randn(&[3, 4], 1.0, &mut r);
    let b = Tensor::randn(&[4, 5], 1.0, &mut r);
    grad_check(
        &[a.clone(), b],
        |t, v| {
            let y = t.matmul(v[0], v[1]);
            let sq = t.mul(y, y);
            t.sum_all(sq)
        },
        200,
        0,
    )
    .assert_close(TOL);

    let bt = Tensor::randn(&[5, 4], 1.0, &mut rng(6));
    grad_check(
        &[a, bt],
        |t, v| {
            let y = t.matmul_nt(v[0], v[1]);
            let sq = t.mul(y, y);
            t.sum_all(sq)
        },
        200,
        0,
    )
    .assert_close(TOL);
}

#[test]
fn grad_attention() {
    let mut r = rng(7);
    // 5 tokens, d=6, 2 heads
    let qkv = Tensor::randn(&[5, 18], 0.8, &mut r);
    grad_check(
        &[qkv],
        |t, v| {
            let y = t.attention(v[0], 2);
            let sq = t.mul(y, y);
            t.sum_all(sq)
        },
        200,
        0,
    )
    .assert_close(TOL);
}

#[test]
fn grad_layer_norm() {
    let mut r = rng(8);
    let x = Tensor::randn(&[4, 6], 2.0, &mut r);
    let g = Tensor::randn(&[6], 0.5, &mut r).map(|v| v + 1.0);
    let b = Tensor::randn(&[6], 0.5, &mut r);
    grad_check(
        &[x, g, b],
        |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-6);
            let sq = t.mul(y, y);
            t.sum_all(sq)
        },
        200,
        0,
    )
    .assert_close(TOL);
}

#[test]
fn grad_gelu() {
    let mut r = rng(9);
    let x = Tensor::randn(&[5, 5], 2.0, &mut r);
    grad_check(
        &[x],
        |t, v| {
            let y = t.gelu(v[0]);
            t.sum_all(y)
        },
        200,
        0,
    )
    .assert_close(TOL);
}

#[test]
fn grad_softmax_and_log_softmax() {
    let mut r = rng(10);
    let x = Tensor::randn(&[4, 7], 1.5, &mut r);
    let w = Tensor::randn(&[4, 7], 1.0, &mut r);
    let w2 = w.clone();
    grad_check(
        &[x.clone()],
        move |t, v| {
            let y = t.softmax_rows(v[0]);
            let m = t.mul_const(y, &w);
            t.sum_all(m)
        },
        200,
        0,
    )
    .assert_close(TOL);
    grad_check(
        &[x],
        move |t, v| {
            let y = t.log_softmax_rows(v[0]);
            let m = t.mul_const(y, &w2);
            t.sum_all(m)
        },
        200,
        0,
    )
    .assert_close(TOL);
}

#[test]
fn grad_row_ops() {
    let mut r = rng(11);
    let a = Tensor::randn(&[4, 3], 1.0, &mut r);
    let b = Tensor::randn(&[2, 3], 1.0, &mut r);
    grad_check(
        &[a, b],
        |t, v| {
            let cat = t.concat_rows(&[v[0], v[1]]);
            let sel = t.select_rows(cat, &[0, 5, 5, 2]);
            let sl = t.slice_rows(sel, 1, 4);
            let sq = t.mul(sl, sl);
            t.sum_all(sq)
        },
        200,
        0,
    )
    .assert_close(TOL);
}

#[test]
fn grad_transformer_block_composite() {
    // one full pre-norm block wired from primitives, checked end to end
    let mut r = rng(12);
    let t_len = 4;
    let d = 6;
    let heads = 2;
    let x = Tensor::randn(&[t_len, d], 1.0, &mut r);
    let ln1_g = Tensor::full(&[d], 1.0);
    let ln1_b = Tensor::zeros(&[d]);
    let w_qkv = Tensor::randn(&[d, 3 * d], 0.4, &mut r);
    let b_qkv = Tensor::zeros(&[3 * d]);
    let w_o = Tensor::randn(&[d, d], 0.4, &mut r);
    let b_o = Tensor::zeros(&[d]);
    let ln2_g = Tensor::full(&[d], 1.0);
    let ln2_b = Tensor::zeros(&[d]);
    let w1 = Tensor::randn(&[d, 2 * d], 0.4, &mut r);
    let b1 = Tensor::zeros(&[2 * d]);
    let w2 = Tensor::randn(&[2 * d, d], 0.4, &mut r);
    let b2 = Tensor::zeros(&[d]);

    let inputs = vec![
        x, ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w1, b1, w2, b2,
    ];
    let block = move |t: &mut Tape<f64>, v: &[Var]| {
        let h = t.layer_norm(v[0], v[1], v[2], 1e-6);
        let qkv = t.linear(h, v[3], v[4]);
        let att = t.attention(qkv, heads);
        let att = t.linear(att, v[5], v[6]);
        let x1 = t.add(v[0], att);
        let h2 = t.layer_norm(x1, v[7], v[8], 1e-6);
        let m = t.linear(h2, v[9], v[10]);
        let m = t.gelu(m);
        let m = t.linear(m, v[11], v[12]);
        let x2 = t.add(x1, m);
        let sq = t.mul(x2, x2);
        t.sum_all(sq)
    };
    grad_check(&inputs, block, 400, 0).assert_close(TOL);
}
