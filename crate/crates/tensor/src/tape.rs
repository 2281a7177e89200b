//! Tape-based reverse-mode autodiff.
//!
//! Ops execute eagerly and append a node holding the result plus a
//! one-shot backward closure. Node ids grow in creation order, so ids
//! are already a topological order and `backward` is a single reverse
//! sweep. A tape built with [`Tape::inference`] records values only,
//! which is the stop-gradient path: run the same forward code and no
//! graph exists to differentiate.
//!
//! Big ops (attention, layer norm) are single fused nodes with
//! hand-derived backward formulas; the formulas are algebraic in the
//! stored forward outputs, so they stay consistent with whatever
//! exp/tanh approximation produced those outputs.

use std::rc::Rc;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

type BackFn<S> = Box<dyn FnOnce(&Tensor<S>, &mut [Option<Tensor<S>>])>;

struct Node<S: Scalar> {
    value: Rc<Tensor<S>>,
    back: Option<BackFn<S>>,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    record: bool,
}

/// Gradients keyed by [`Var`], produced by [`Tape::backward`].
pub struct Grads<S: Scalar>(Vec<Option<Tensor<S>>>);

impl<S: Scalar> Grads<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.0.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accum<S: Scalar>(slot: &mut Option<Tensor<S>>, g: Tensor<S>) {
    match slot {
        Some(t) => {
            debug_assert_eq!(t.shape(), g.shape());
            for (a, b) in t.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Max over a slice with 8 parallel accumulators; a plain fold is a
/// 4-cycle latency chain per element and dominates softmax otherwise.
#[inline(always)]
fn fast_max<S: Scalar>(xs: &[S]) -> S {
    let mut acc = [xs[0]; 8];
    let chunks = xs.chunks_exact(8);
    let rem = chunks.remainder();
    for c in chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a = a.max_s(v);
        }
    }
    for &v in rem {
        acc[0] = acc[0].max_s(v);
    }
    let mut m = acc[0];
    for &a in &acc[1..] {
        m = m.max_s(a);
    }
    m
}

/// Sum with 8 parallel accumulators. Order is fixed by the code, so
/// results stay deterministic run to run.
#[inline(always)]
fn fast_sum<S: Scalar>(xs: &[S]) -> S {
    let mut acc = [S::ZERO; 8];
    let chunks = xs.chunks_exact(8);
    let rem = chunks.remainder();
    for c in chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    let mut s = S::ZERO;
    for &v in rem {
        s += v;
    }
    for &a in &acc {
        s += a;
    }
    s
}

#[inline(always)]
fn fast_sum_sq_diff<S: Scalar>(xs: &[S], mean: S) -> S {
    let mut acc = [S::ZERO; 8];
    let chunks = xs.chunks_exact(8);
    let rem = chunks.remainder();
    for c in chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            let d = v - mean;
            *a += d * d;
        }
    }
    let mut s = S::ZERO;
    for &v in rem {
        let d = v - mean;
        s += d * d;
    }
    for &a in &acc {
        s += a;
    }
    s
}

fn colsum<S: Scalar>(x: &Tensor<S>) -> Vec<S> {
    let (_, c) = x.rows_cols();
    let mut out = vec![S::ZERO; c];
    for row in x.data().chunks_exact(c) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += *v;
        }
    }
    out
}

/// Uninitialized scratch; every element must be written (gemm with
/// beta=0, copy_from_slice) before anything reads it.
fn uninit_vec<S: Scalar>(n: usize) -> Vec<S> {
    let mut v = Vec::with_capacity(n);
    #[allow(clippy::uninit_vec)]
    unsafe {
        v.set_len(n)
    };
    v
}

fn softmax_rows_in_place<S: Scalar>(x: &mut [S], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut x[r * cols..(r + 1) * cols];
        let m = fast_max(row);
        // exp kept separate from the sum so the exp loop vectorizes
        for v in row.iter_mut() {
            *v = (*v - m).exp_s();
        }
        let inv = S::ONE / fast_sum(row);
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// Value-only tape: same ops, no backward graph. This is the
    /// stop-gradient / eval path.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn value_rc(&self, v: Var) -> Rc<Tensor<S>> {
        self.nodes[v.0].value.clone()
    }

    fn rc(&self, v: Var) -> Rc<Tensor<S>> {
        self.nodes[v.0].value.clone()
    }

    fn push_rc(&mut self, value: Rc<Tensor<S>>, back: Option<BackFn<S>>) -> Var {
        let back = if self.record { back } else { None };
        self.nodes.push(Node { value, back });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<S>, back: Option<BackFn<S>>) -> Var {
        self.push_rc(Rc::new(value), back)
    }

    pub fn leaf(&mut self, t: &Tensor<S>) -> Var {
        self.push(t.clone(), None)
    }

    pub fn leaf_owned(&mut self, t: Tensor<S>) -> Var {
        self.push(t, None)
    }

    /// Current node count; pair with [`Tape::truncate`] to reuse one
    /// tape (and its leaf bindings) across a stream of forwards.
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drop every node created after `mark` was taken. Vars issued
    /// since then become invalid.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    /// Reverse sweep from `loss`, seeded with ones. Consumes the
    /// backward closures, so call at most once per tape.
    pub fn backward(&mut self, loss: Var) -> Grads<S> {
        assert!(self.record, "backward on an inference tape");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<S>>> = Vec::new();
        grads.resize_with(n, || None);
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), S::ONE));
        for id in (0..=loss.0).rev() {
            let Some(back) = self.nodes[id].back.take() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            back(&g, &mut grads);
            grads[id] = Some(g);
        }
        Grads(grads)
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(av.shape(), data);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                accum(&mut grads[ai], go.clone());
                accum(&mut grads[bi], go.clone());
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        assert_eq!(av.shape(), bv.shape(), "sub shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::new(av.shape(), data);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                accum(&mut grads[ai], go.clone());
                accum(&mut grads[bi], go.map(|v| -v));
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(av.shape(), data);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                let ga = Tensor::new(
                    go.shape(),
                    go.data()
                        .iter()
                        .zip(bv.data())
                        .map(|(&g, &y)| g * y)
                        .collect(),
                );
                let gb = Tensor::new(
                    go.shape(),
                    go.data()
                        .iter()
                        .zip(av.data())
                        .map(|(&g, &x)| g * x)
                        .collect(),
                );
                accum(&mut grads[ai], ga);
                accum(&mut grads[bi], gb);
            })),
        )
    }

    /// Elementwise product with a constant tensor (no gradient flows
    /// into `c`). Doubles as a mask.
    pub fn mul_const(&mut self, x: Var, c: &Tensor<S>) -> Var {
        let xv = self.rc(x);
        assert_eq!(xv.shape(), c.shape(), "mul_const shape mismatch");
        let data = xv
            .data()
            .iter()
            .zip(c.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let out = Tensor::new(xv.shape(), data);
        let xi = x.0;
        let c = c.clone();
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                let gx = Tensor::new(
                    go.shape(),
                    go.data()
                        .iter()
                        .zip(c.data())
                        .map(|(&g, &b)| g * b)
                        .collect(),
                );
                accum(&mut grads[xi], gx);
            })),
        )
    }

    pub fn scale(&mut self, x: Var, k: S) -> Var {
        let xv = self.rc(x);
        let out = xv.map(|v| v * k);
        let xi = x.0;
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                accum(&mut grads[xi], go.map(|v| v * k));
            })),
        )
    }

    /// Broadcast-add a length-d row vector to every row of x.
    pub fn add_row(&mut self, x: Var, r: Var) -> Var {
        let xv = self.rc(x);
        let rv = self.rc(r);
        let (n, d) = xv.rows_cols();
        assert_eq!(rv.len(), d, "add_row width mismatch");
        let mut data = xv.data().to_vec();
        for i in 0..n {
            for (v, b) in data[i * d..(i + 1) * d].iter_mut().zip(rv.data()) {
                *v += *b;
            }
        }
        let out = Tensor::new(xv.shape(), data);
        let (xi, ri) = (x.0, r.0);
        let rshape = rv.shape().to_vec();
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                accum(&mut grads[xi], go.clone());
                accum(&mut grads[ri], Tensor::new(&rshape, colsum(go)));
            })),
        )
    }

    // ---- matrix products ----

    /// y = x . w + b with x [.. x in], w [in x out], b [out].
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = self.rc(x);
        let wv = self.rc(w);
        let bv = self.rc(b);
        let (n, d_in) = xv.rows_cols();
        assert_eq!(wv.ndim(), 2, "linear weight must be 2-d");
        assert_eq!(wv.shape()[0], d_in, "linear in_features mismatch");
        let d_out = wv.shape()[1];
        assert_eq!(bv.len(), d_out, "linear bias mismatch");
        // bias rows prefilled, gemm accumulates on top (saves a memset
        // and a separate bias pass)
        let mut data = uninit_vec::<S>(n * d_out);
        for row in data.chunks_exact_mut(d_out) {
            row.copy_from_slice(bv.data());
        }
        S::gemm(
            false,
            false,
            n,
            d_out,
            d_in,
            S::ONE,
            xv.data(),
            wv.data(),
            S::ONE,
            &mut data,
        );
        let mut shape = xv.shape().to_vec();
        if shape.is_empty() {
            shape = vec![d_out];
        } else {
            *shape.last_mut().unwrap() = d_out;
        }
        let out = Tensor::new(&shape, data);
        let (xi, wi, bi) = (x.0, w.0, b.0);
        let bshape = bv.shape().to_vec();
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                let mut gx = uninit_vec::<S>(n * d_in);
                S::gemm(
                    false,
                    true,
                    n,
                    d_in,
                    d_out,
                    S::ONE,
                    go.data(),
                    wv.data(),
                    S::ZERO,
                    &mut gx,
                );
                accum(&mut grads[xi], Tensor::new(xv.shape(), gx));
                let mut gw = uninit_vec::<S>(d_in * d_out);
                S::gemm(
                    true,
                    false,
                    d_in,
                    d_out,
                    n,
                    S::ONE,
                    xv.data(),
                    go.data(),
                    S::ZERO,
                    &mut gw,
                );
                accum(&mut grads[wi], Tensor::new(&[d_in, d_out], gw));
                accum(&mut grads[bi], Tensor::new(&bshape, colsum(go)));
            })),
        )
    }

    /// a [.. x k] . b [k x n]
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        let (m, k) = av.rows_cols();
        assert_eq!(bv.ndim(), 2, "matmul rhs must be 2-d");
        assert_eq!(bv.shape()[0], k, "matmul inner dim mismatch");
        let n = bv.shape()[1];
        let mut data = uninit_vec::<S>(m * n);
        S::gemm(
            false,
            false,
            m,
            n,
            k,
            S::ONE,
            av.data(),
            bv.data(),
            S::ZERO,
            &mut data,
        );
        let mut shape = av.shape().to_vec();
        if shape.is_empty() {
            shape = vec![n];
        } else {
            *shape.last_mut().unwrap() = n;
        }
        let out = Tensor::new(&shape, data);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                let mut ga = uninit_vec::<S>(m * k);
                S::gemm(
                    false,
                    true,
                    m,
                    k,
                    n,
                    S::ONE,
                    go.data(),
                    bv.data(),
                    S::ZERO,
                    &mut ga,
                );
                accum(&mut grads[ai], Tensor::new(av.shape(), ga));
                let mut gb = uninit_vec::<S>(k * n);
                S::gemm(
                    true,
                    false,
                    k,
                    n,
                    m,
                    S::ONE,
                    av.data(),
                    go.data(),
                    S::ZERO,
                    &mut gb,
                );
                accum(&mut grads[bi], Tensor::new(&[k, n], gb));
            })),
        )
    }

    /// a [m x k] . b^T with b stored [n x k].
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        let (m, k) = av.rows_cols();
        let (n, kb) = bv.rows_cols();
        assert_eq!(k, kb, "matmul_nt inner dim mismatch");
        let mut data = uninit_vec::<S>(m * n);
        S::gemm(
            false,
            true,
            m,
            n,
            k,
            S::ONE,
            av.data(),
            bv.data(),
            S::ZERO,
            &mut data,
        );
        let out = Tensor::new(&[m, n], data);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                let mut ga = uninit_vec::<S>(m * k);
                S::gemm(
                    false,
                    false,
                    m,
                    k,
                    n,
                    S::ONE,
                    go.data(),
                    bv.data(),
                    S::ZERO,
                    &mut ga,
                );
                accum(&mut grads[ai], Tensor::new(av.shape(), ga));
                let mut gb = uninit_vec::<S>(n * k);
                S::gemm(
                    true,
                    false,
                    n,
                    k,
                    m,
                    S::ONE,
                    go.data(),
                    av.data(),
                    S::ZERO,
                    &mut gb,
                );
                accum(&mut grads[bi], Tensor::new(bv.shape(), gb));
            })),
        )
    }

    // ---- fused network layers ----

    /// Multi-head self-attention over a packed [T x 3d] qkv matrix
    /// (column layout: q | k | v, each d wide, heads sliced within).
    /// One node per call; per-head attention probabilities are kept
    /// for the backward pass.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Var {
        let qv = self.rc(qkv);
        let (t, three_d) = qv.rows_cols();
        assert_eq!(three_d % 3, 0, "qkv width must be 3*d");
        let d = three_d / 3;
        assert_eq!(d % heads, 0, "model width not divisible by heads");
        let dh = d / heads;
        let inv_sqrt = S::from_f64(1.0 / (dh as f64).sqrt());

        // per-head q/k/v live in column bands of qkv; gemm_ld reads
        // them in place (stride 3d) instead of copying them out
        let mut out = uninit_vec::<S>(t * d);
        let mut probs: Vec<Tensor<S>> = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            let mut s = uninit_vec::<S>(t * t);
            let qd = qv.data();
            S::gemm_ld(
                false, true, t, t, dh, inv_sqrt, qd, qo, three_d, qd, ko, three_d, S::ZERO,
                &mut s, 0, t,
            );
            softmax_rows_in_place(&mut s, t, t);
            S::gemm_ld(
                false, false, t, dh, t, S::ONE, &s, 0, t, qd, vo, three_d, S::ZERO, &mut out,
                h * dh, d,
            );
            if self.record {
                probs.push(Tensor::new(&[t, t], s));
            }
        }
        let out = Tensor::new(&[t, d], out);
        let qi = qkv.0;
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                // per-head bands in gqkv are disjoint, plain writes
                let mut gqkv = uninit_vec::<S>(t * three_d);
                for h in 0..heads {
                    let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                    let p = probs[h].data();
                    let qd = qv.data();
                    let god = go.data();

                    S::gemm_ld(
                        true, false, t, dh, t, S::ONE, p, 0, t, god, h * dh, d, S::ZERO,
                        &mut gqkv, vo, three_d,
                    );
                    let mut gp = uninit_vec::<S>(t * t);
                    S::gemm_ld(
                        false, true, t, t, dh, S::ONE, god, h * dh, d, qd, vo, three_d, S::ZERO,
                        &mut gp, 0, t,
                    );
                    // softmax jacobian: gs = p . (gp - rowsum(gp . p))
                    let mut gs = gp;
                    for r in 0..t {
                        let row_p = &p[r * t..(r + 1) * t];
                        let row = &mut gs[r * t..(r + 1) * t];
                        let mut dot = [S::ZERO; 8];
                        for (c, cp) in row.chunks_exact(8).zip(row_p.chunks_exact(8)) {
                            for ((a, &x), &y) in dot.iter_mut().zip(c).zip(cp) {
                                *a += x * y;
                            }
                        }
                        let rem = row.chunks_exact(8).remainder();
                        let rem_p = row_p.chunks_exact(8).remainder();
                        let mut dsum = S::ZERO;
                        for (&x, &y) in rem.iter().zip(rem_p) {
                            dsum += x * y;
                        }
                        for &a in &dot {
                            dsum += a;
                        }
                        for (a, b) in row.iter_mut().zip(row_p) {
                            *a = (*a - dsum) * *b;
                        }
                    }
                    S::gemm_ld(
                        false, false, t, dh, t, inv_sqrt, &gs, 0, t, qd, ko, three_d, S::ZERO,
                        &mut gqkv, qo, three_d,
                    );
                    S::gemm_ld(
                        true, false, t, dh, t, inv_sqrt, &gs, 0, t, qd, qo, three_d, S::ZERO,
                        &mut gqkv, ko, three_d,
                    );
                }
                accum(&mut grads[qi], Tensor::new(qv.shape(), gqkv));
            })),
        )
    }

    /// Per-row layer norm with affine parameters gamma, beta [d].
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.rc(x);
        let gv = self.rc(gamma);
        let bv = self.rc(beta);
        let (n, d) = xv.rows_cols();
        assert_eq!(gv.len(), d, "layer_norm gamma mismatch");
        assert_eq!(bv.len(), d, "layer_norm beta mismatch");
        let eps = S::from_f64(eps);
        let inv_d = S::ONE / S::from_usize(d);

        let mut xhat = vec![S::ZERO; n * d];
        let mut inv_std = vec![S::ZERO; n];
        let mut out = vec![S::ZERO; n * d];
        let gd = gv.data();
        let bd = bv.data();
        for i in 0..n {
            let row = &xv.data()[i * d..(i + 1) * d];
            let xh_row = &mut xhat[i * d..(i + 1) * d];
            let out_row = &mut out[i * d..(i + 1) * d];
            let mean = fast_sum(row) * inv_d;
            let var = fast_sum_sq_diff(row, mean) * inv_d;
            let is = S::ONE / (var + eps).sqrt();
            inv_std[i] = is;
            for ((xh, o), ((&v, &gj), &bj)) in xh_row
                .iter_mut()
                .zip(out_row.iter_mut())
                .zip(row.iter().zip(gd).zip(bd))
            {
                let x = (v - mean) * is;
                *xh = x;
                *o = gj * x + bj;
            }
        }
        let out = Tensor::new(xv.shape(), out);
        let (xi, gi, bi) = (x.0, gamma.0, beta.0);
        let gshape = gv.shape().to_vec();
        let bshape = bv.shape().to_vec();
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                let mut gx = vec![S::ZERO; n * d];
                let mut ggamma = vec![S::ZERO; d];
                let mut gbeta = vec![S::ZERO; d];
                let gd = gv.data();
                for i in 0..n {
                    let go_row = &go.data()[i * d..(i + 1) * d];
                    let xh_row = &xhat[i * d..(i + 1) * d];
                    let gx_row = &mut gx[i * d..(i + 1) * d];
                    let mut m1 = S::ZERO;
                    let mut m2 = S::ZERO;
                    for (((&g, &xh), (gg, gb)), &gj) in go_row
                        .iter()
                        .zip(xh_row)
                        .zip(ggamma.iter_mut().zip(gbeta.iter_mut()))
                        .zip(gd)
                    {
                        let dxh = g * gj;
                        m1 += dxh;
                        m2 += dxh * xh;
                        *gg += g * xh;
                        *gb += g;
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    let is = inv_std[i];
                    for ((o, (&g, &gj)), &xh) in gx_row
                        .iter_mut()
                        .zip(go_row.iter().zip(gd))
                        .zip(xh_row)
                    {
                        let dxh = g * gj;
                        *o = is * (dxh - m1 - xh * m2);
                    }
                }
                accum(&mut grads[xi], Tensor::new(xv.shape(), gx));
                accum(&mut grads[gi], Tensor::new(&gshape, ggamma));
                accum(&mut grads[bi], Tensor::new(&bshape, gbeta));
            })),
        )
    }

    /// GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
    pub fn gelu(&mut self, x: Var) -> Var {
        const C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const C1: f64 = 0.044_715;
        let c0 = S::from_f64(C0);
        let c1 = S::from_f64(C1);
        let half = S::from_f64(0.5);
        let three_c1 = S::from_f64(3.0 * C1);

        let xv = self.rc(x);
        let n = xv.len();
        let mut out = vec![S::ZERO; n];
        let mut t_store = Vec::new();
        if self.record {
            t_store.resize(n, S::ZERO);
            for ((t, o), &v) in t_store.iter_mut().zip(out.iter_mut()).zip(xv.data()) {
                let th = (c0 * (v + c1 * v * v * v)).tanh_s();
                *t = th;
                *o = half * v * (S::ONE + th);
            }
        } else {
            for (o, &v) in out.iter_mut().zip(xv.data()) {
                let th = (c0 * (v + c1 * v * v * v)).tanh_s();
                *o = half * v * (S::ONE + th);
            }
        }
        let out = Tensor::new(xv.shape(), out);
        let xi = x.0;
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                let mut gx = vec![S::ZERO; n];
                for (((o, &g), &v), &t) in gx
                    .iter_mut()
                    .zip(go.data())
                    .zip(xv.data())
                    .zip(&t_store)
                {
                    let sech2 = S::ONE - t * t;
                    let inner = c0 * (S::ONE + three_c1 * v * v);
                    *o = g * (half * (S::ONE + t) + half * v * sech2 * inner);
                }
                accum(&mut grads[xi], Tensor::new(xv.shape(), gx));
            })),
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.rc(x);
        let (n, d) = xv.rows_cols();
        let mut data = xv.data().to_vec();
        softmax_rows_in_place(&mut data, n, d);
        let out_rc = Rc::new(Tensor::new(xv.shape(), data));
        let back: Option<BackFn<S>> = if self.record {
            let y = out_rc.clone();
            let xi = x.0;
            Some(Box::new(move |go, grads| {
                let mut gx = vec![S::ZERO; n * d];
                for i in 0..n {
                    let yr = &y.data()[i * d..(i + 1) * d];
                    let gr = &go.data()[i * d..(i + 1) * d];
                    let mut dot = S::ZERO;
                    for (a, b) in gr.iter().zip(yr) {
                        dot += *a * *b;
                    }
                    for j in 0..d {
                        gx[i * d + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accum(&mut grads[xi], Tensor::new(y.shape(), gx));
            }))
        } else {
            None
        };
        self.push_rc(out_rc, back)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.rc(x);
        let (n, d) = xv.rows_cols();
        let mut data = xv.data().to_vec();
        for i in 0..n {
            let row = &mut data[i * d..(i + 1) * d];
            let mut m = row[0];
            for &v in row.iter() {
                m = m.max_s(v);
            }
            let mut sum = S::ZERO;
            for &v in row.iter() {
                sum += (v - m).exp_s();
            }
            let lse = m + sum.ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out_rc = Rc::new(Tensor::new(xv.shape(), data));
        let back: Option<BackFn<S>> = if self.record {
            let y = out_rc.clone();
            let xi = x.0;
            Some(Box::new(move |go, grads| {
                let mut gx = vec![S::ZERO; n * d];
                for i in 0..n {
                    let yr = &y.data()[i * d..(i + 1) * d];
                    let gr = &go.data()[i * d..(i + 1) * d];
                    let mut gsum = S::ZERO;
                    for &g in gr {
                        gsum += g;
                    }
                    for j in 0..d {
                        gx[i * d + j] = gr[j] - yr[j].exp_s() * gsum;
                    }
                }
                accum(&mut grads[xi], Tensor::new(y.shape(), gx));
            }))
        } else {
            None
        };
        self.push_rc(out_rc, back)
    }

    // ---- row selection / assembly ----

    /// Gather rows by index. Backward scatter-adds, so duplicate ids
    /// accumulate (this is what embedding-style lookups need).
    pub fn select_rows(&mut self, x: Var, ids: &[usize]) -> Var {
        let xv = self.rc(x);
        let (n, d) = xv.rows_cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < n, "select_rows id {id} out of {n}");
            data.extend_from_slice(&xv.data()[id * d..(id + 1) * d]);
        }
        let out = Tensor::new(&[ids.len(), d], data);
        let xi = x.0;
        let ids = ids.to_vec();
        let xshape = xv.shape().to_vec();
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                let mut gx = vec![S::ZERO; n * d];
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gx[id * d + j] += go.data()[i * d + j];
                    }
                }
                accum(&mut grads[xi], Tensor::new(&xshape, gx));
            })),
        )
    }

    /// Stack row blocks vertically. All parts must share a column
    /// count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<Rc<Tensor<S>>> = parts.iter().map(|&p| self.rc(p)).collect();
        let d = views[0].rows_cols().1;
        let mut rows = Vec::with_capacity(views.len());
        let mut data = Vec::new();
        for v in &views {
            let (r, c) = v.rows_cols();
            assert_eq!(c, d, "concat_rows column mismatch");
            rows.push(r);
            data.extend_from_slice(v.data());
        }
        let total: usize = rows.iter().sum();
        let out = Tensor::new(&[total, d], data);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let shapes: Vec<Vec<usize>> = views.iter().map(|v| v.shape().to_vec()).collect();
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                let mut r0 = 0;
                for ((pid, r), shape) in ids.iter().zip(&rows).zip(&shapes) {
                    let g = Tensor::new(shape, go.data()[r0 * d..(r0 + r) * d].to_vec());
                    accum(&mut grads[*pid], g);
                    r0 += r;
                }
            })),
        )
    }

    /// Contiguous row slice [r0, r1).
    pub fn slice_rows(&mut self, x: Var, r0: usize, r1: usize) -> Var {
        let xv = self.rc(x);
        let (n, d) = xv.rows_cols();
        assert!(r0 <= r1 && r1 <= n, "slice_rows {r0}..{r1} of {n}");
        let out = Tensor::new(&[r1 - r0, d], xv.data()[r0 * d..r1 * d].to_vec());
        let xi = x.0;
        let xshape = xv.shape().to_vec();
        self.push(
            out,
            Some(Box::new(move |go, grads| {
                let mut gx = vec![S::ZERO; n * d];
                gx[r0 * d..r1 * d].copy_from_slice(go.data());
                accum(&mut grads[xi], Tensor::new(&xshape, gx));
            })),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, x: Var) -> Var {
        let xv = self.rc(x);
        let s = xv.data().iter().copied().sum::<S>();
        let xi = x.0;
        self.push(
            Tensor::scalar(s),
            Some(Box::new(move |go, grads| {
                let g = go.item();
                accum(&mut grads[xi], Tensor::full(xv.shape(), g));
            })),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.rc(x);
        let inv = S::ONE / S::from_usize(xv.len());
        let s = xv.data().iter().copied().sum::<S>() * inv;
        let xi = x.0;
        self.push(
            Tensor::scalar(s),
            Some(Box::new(move |go, grads| {
                let g = go.item() * inv;
                accum(&mut grads[xi], Tensor::full(xv.shape(), g));
            })),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_forward_matches_manual() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]));
        let w = t.leaf(&Tensor::new(&[3, 2], vec![1., 0., 0., 1., 1., 1.]));
        let b = t.leaf(&Tensor::new(&[2], vec![10., 20.]));
        let y = t.linear(x, w, b);
        assert_eq!(t.value(y).data(), &[14.0, 25.0, 20.0, 31.0]);
    }

    #[test]
    fn backward_through_add_chain() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Tensor::new(&[2], vec![3.0, 4.0]));
        let y = t.add(x, x); // 2x
        let z = t.mul(y, x); // 2x^2
        let l = t.sum_all(z);
        let g = t.backward(l);
        // d/dx 2x^2 = 4x
        assert_eq!(g.get(x).unwrap().data(), &[12.0, 16.0]);
    }

    #[test]
    fn select_rows_duplicates_accumulate() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Tensor::new(&[3, 2], vec![1., 2., 3., 4., 5., 6.]));
        let y = t.select_rows(x, &[1, 1, 0]);
        assert_eq!(t.value(y).data(), &[3., 4., 3., 4., 1., 2.]);
        let l = t.sum_all(y);
        let g = t.backward(l);
        assert_eq!(g.get(x).unwrap().data(), &[1., 1., 2., 2., 0., 0.]);
    }

    #[test]
    fn concat_slice_roundtrip() {
        let mut t = Tape::<f32>::new();
        let a = t.leaf(&Tensor::new(&[1, 2], vec![1., 2.]));
        let b = t.leaf(&Tensor::new(&[2, 2], vec![3., 4., 5., 6.]));
        let c = t.concat_rows(&[a, b]);
        let s = t.slice_rows(c, 1, 3);
        assert_eq!(t.value(s).data(), &[3., 4., 5., 6.]);
        let l = t.sum_all(s);
        let g = t.backward(l);
        assert_eq!(g.get(a).unwrap().data(), &[0., 0.]);
        assert_eq!(g.get(b).unwrap().data(), &[1., 1., 1., 1.]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::<f32>::inference();
        let x = t.leaf(&Tensor::new(&[2, 3], vec![1., 2., 3., -1., 0., 100.]));
        let y = t.softmax_rows(x);
        for i in 0..2 {
            let s: f32 = t.value(y).row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        assert!(t.value(y).data()[5] > 0.999);
    }

    #[test]
    fn inference_tape_builds_no_graph() {
        let mut t = Tape::<f32>::inference();
        let x = t.leaf(&Tensor::new(&[2, 2], vec![1., 2., 3., 4.]));
        let y = t.softmax_rows(x);
        let _ = y;
        assert!(!t.recording());
    }

    #[test]
    fn attention_rows_average_value_when_scores_flat() {
        // equal q.k for all pairs -> output row = mean of v rows
        let mut t = Tape::<f64>::inference();
        let d = 4;
        let heads = 2;
        let rows = 3;
        let mut qkv = vec![0.0; rows * 3 * d];
        // q = k = 0 -> uniform attention; v distinct per row
        for r in 0..rows {
            for j in 0..d {
                qkv[r * 3 * d + 2 * d + j] = (r * d + j) as f64;
            }
        }
        let x = t.leaf(&Tensor::new(&[rows, 3 * d], qkv));
        let y = t.attention(x, heads);
        let mean: Vec<f64> = (0..d)
            .map(|j| (0..rows).map(|r| (r * d + j) as f64).sum::<f64>() / rows as f64)
            .collect();
        for r in 0..rows {
            for j in 0..d {
                assert!((t.value(y).data()[r * d + j] - mean[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut t = Tape::<f64>::inference();
        let x = t.leaf(&Tensor::new(&[2, 4], vec![1., 2., 3., 4., -5., 0., 5., 10.]));
        let g = t.leaf(&Tensor::new(&[4], vec![1.; 4]));
        let b = t.leaf(&Tensor::new(&[4], vec![0.; 4]));
        let y = t.layer_norm(x, g, b, 1e-12);
        for i in 0..2 {
            let row = t.value(y).row(i);
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }
}
