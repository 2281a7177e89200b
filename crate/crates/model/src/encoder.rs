//! Tactile transformer: per-taxel tokenization, pad-type embeddings,
//! pre-norm encoder blocks, prototype projection head, and an attentive
//! pooler for set-valued readout.
//!
//! Taxel positions enter only through token features, so the encoder is
//! permutation-equivariant over taxels and the class token / pooled
//! readout are permutation-invariant.

use crate::error::{ModelError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use skinssl_sim::hand::HandLayout;
use skinssl_sim::rng::substream;
use skinssl_sim::signal::TactileWindow;
use skinssl_tensor::{Scalar, Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub prototypes: usize,
    pub taxels: usize,
    pub pad_types: usize,
    pub frames: usize,
    pub channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::full()
    }
}

impl EncoderConfig {
    pub fn full() -> Self {
        EncoderConfig {
            dim: 192,
            layers: 12,
            heads: 3,
            mlp_ratio: 4,
            prototypes: 65536,
            taxels: 368,
            pad_types: 3,
            frames: 10,
            channels: 6,
        }
    }

    /// Desk-scale default: small enough to pretrain on a CPU in
    /// minutes, wide enough for the probes to have signal.
    pub fn desk() -> Self {
        EncoderConfig { dim: 64, layers: 4, heads: 4, prototypes: 1024, ..EncoderConfig::full() }
    }

    /// Oracle config for float64 finite-difference tests.
    pub fn tiny() -> Self {
        EncoderConfig {
            dim: 16,
            layers: 2,
            heads: 2,
            prototypes: 8,
            taxels: 8,
            ..EncoderConfig::full()
        }
    }

    pub fn token_width(&self) -> usize {
        self.frames * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % self.heads != 0 {
            return Err(ModelError::InvalidInput(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.prototypes < 2 {
            return Err(ModelError::InvalidInput("need at least 2 prototypes".into()));
        }
        if self.layers == 0 || self.taxels == 0 || self.frames == 0 || self.mlp_ratio == 0 {
            return Err(ModelError::InvalidInput("zero-sized encoder dimension".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<S: Scalar> {
    pub ln1_g: Tensor<S>,
    pub ln1_b: Tensor<S>,
    pub qkv_w: Tensor<S>,
    pub qkv_b: Tensor<S>,
    pub proj_w: Tensor<S>,
    pub proj_b: Tensor<S>,
    pub ln2_g: Tensor<S>,
    pub ln2_b: Tensor<S>,
    pub mlp1_w: Tensor<S>,
    pub mlp1_b: Tensor<S>,
    pub mlp2_w: Tensor<S>,
    pub mlp2_b: Tensor<S>,
}

pub(crate) const BLOCK_FIELDS: [&str; 12] = [
    "ln1_g", "ln1_b", "qkv_w", "qkv_b", "proj_w", "proj_b", "ln2_g", "ln2_b", "mlp1_w",
    "mlp1_b", "mlp2_w", "mlp2_b",
];

impl<S: Scalar> BlockParams<S> {
    fn fields(&self) -> [&Tensor<S>; 12] {
        [
            &self.ln1_g,
            &self.ln1_b,
            &self.qkv_w,
            &self.qkv_b,
            &self.proj_w,
            &self.proj_b,
            &self.ln2_g,
            &self.ln2_b,
            &self.mlp1_w,
            &self.mlp1_b,
            &self.mlp2_w,
            &self.mlp2_b,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Tensor<S>; 12] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.qkv_w,
            &mut self.qkv_b,
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.mlp1_w,
            &mut self.mlp1_b,
            &mut self.mlp2_w,
            &mut self.mlp2_b,
        ]
    }
}

/// Encoder + projection head weights. `named`/`flatten` iterate in one
/// fixed order shared by binding, gradient accumulation, optimizer
/// state, and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<S: Scalar> {
    pub token_w: Tensor<S>,
    pub token_b: Tensor<S>,
    pub pad_embed: Tensor<S>,
    pub class_token: Tensor<S>,
    pub blocks: Vec<BlockParams<S>>,
    pub final_ln_g: Tensor<S>,
    pub final_ln_b: Tensor<S>,
    pub head1_w: Tensor<S>,
    pub head1_b: Tensor<S>,
    pub head2_w: Tensor<S>,
    pub head2_b: Tensor<S>,
    pub head3_w: Tensor<S>,
    pub head3_b: Tensor<S>,
}

impl<S: Scalar> EncoderParams<S> {
    pub fn names(&self) -> Vec<String> {
        let mut v = vec![
            "token_w".to_string(),
            "token_b".to_string(),
            "pad_embed".to_string(),
            "class_token".to_string(),
        ];
        for (i, _) in self.blocks.iter().enumerate() {
            for f in BLOCK_FIELDS {
                v.push(format!("block{i}.{f}"));
            }
        }
        for f in ["final_ln_g", "final_ln_b", "head1_w", "head1_b", "head2_w", "head2_b",
                  "head3_w", "head3_b"] {
            v.push(f.to_string());
        }
        v
    }

    pub fn flatten(&self) -> Vec<&Tensor<S>> {
        let mut v = vec![&self.token_w, &self.token_b, &self.pad_embed, &self.class_token];
        for b in &self.blocks {
            v.extend(b.fields());
        }
        v.extend([
            &self.final_ln_g,
            &self.final_ln_b,
            &self.head1_w,
            &self.head1_b,
            &self.head2_w,
            &self.head2_b,
            &self.head3_w,
            &self.head3_b,
        ]);
        v
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut v: Vec<&mut Tensor<S>> = vec![
            &mut self.token_w,
            &mut self.token_b,
            &mut self.pad_embed,
            &mut self.class_token,
        ];
        for b in &mut self.blocks {
            v.extend(b.fields_mut());
        }
        v.extend([
            &mut self.final_ln_g,
            &mut self.final_ln_b,
            &mut self.head1_w,
            &mut self.head1_b,
            &mut self.head2_w,
            &mut self.head2_b,
            &mut self.head3_w,
            &mut self.head3_b,
        ]);
        v
    }

    pub fn cast<T: Scalar>(&self) -> EncoderParams<T> {
        EncoderParams {
            token_w: self.token_w.cast(),
            token_b: self.token_b.cast(),
            pad_embed: self.pad_embed.cast(),
            class_token: self.class_token.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    ln1_g: b.ln1_g.cast(),
                    ln1_b: b.ln1_b.cast(),
                    qkv_w: b.qkv_w.cast(),
                    qkv_b: b.qkv_b.cast(),
                    proj_w: b.proj_w.cast(),
                    proj_b: b.proj_b.cast(),
                    ln2_g: b.ln2_g.cast(),
                    ln2_b: b.ln2_b.cast(),
                    mlp1_w: b.mlp1_w.cast(),
                    mlp1_b: b.mlp1_b.cast(),
                    mlp2_w: b.mlp2_w.cast(),
                    mlp2_b: b.mlp2_b.cast(),
                })
                .collect(),
            final_ln_g: self.final_ln_g.cast(),
            final_ln_b: self.final_ln_b.cast(),
            head1_w: self.head1_w.cast(),
            head1_b: self.head1_b.cast(),
            head2_w: self.head2_w.cast(),
            head2_b: self.head2_b.cast(),
            head3_w: self.head3_w.cast(),
            head3_b: self.head3_b.cast(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.flatten().iter().all(|t| t.all_finite())
    }
}

/// Tape bindings for every encoder tensor, in `flatten` order.
pub struct BoundEncoder {
    pub token_w: Var,
    pub token_b: Var,
    pub pad_embed: Var,
    pub class_token: Var,
    pub blocks: Vec<BoundBlock>,
    pub final_ln_g: Var,
    pub final_ln_b: Var,
    pub head1_w: Var,
    pub head1_b: Var,
    pub head2_w: Var,
    pub head2_b: Var,
    pub head3_w: Var,
    pub head3_b: Var,
}

pub struct BoundBlock {
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub qkv_w: Var,
    pub qkv_b: Var,
    pub proj_w: Var,
    pub proj_b: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
    pub mlp1_w: Var,
    pub mlp1_b: Var,
    pub mlp2_w: Var,
    pub mlp2_b: Var,
}

impl BoundEncoder {
    pub fn flatten(&self) -> Vec<Var> {
        let mut v = vec![self.token_w, self.token_b, self.pad_embed, self.class_token];
        for b in &self.blocks {
            v.extend([
                b.ln1_g, b.ln1_b, b.qkv_w, b.qkv_b, b.proj_w, b.proj_b, b.ln2_g, b.ln2_b,
                b.mlp1_w, b.mlp1_b, b.mlp2_w, b.mlp2_b,
            ]);
        }
        v.extend([
            self.final_ln_g,
            self.final_ln_b,
            self.head1_w,
            self.head1_b,
            self.head2_w,
            self.head2_b,
            self.head3_w,
            self.head3_b,
        ]);
        v
    }
}

/// Rebuild a `BoundEncoder` view over tape vars laid out in `flatten`
/// order (the finite-difference harness hands parameters back this way).
pub fn encoder_from_vars(cfg: &EncoderConfig, vars: &[Var]) -> BoundEncoder {
    let mut it = vars.iter().copied();
    let mut next = || it.next().expect("enough vars for encoder");
    let token_w = next();
    let token_b = next();
    let pad_embed = next();
    let class_token = next();
    let blocks = (0..cfg.layers)
        .map(|_| BoundBlock {
            ln1_g: next(),
            ln1_b: next(),
            qkv_w: next(),
            qkv_b: next(),
            proj_w: next(),
            proj_b: next(),
            ln2_g: next(),
            ln2_b: next(),
            mlp1_w: next(),
            mlp1_b: next(),
            mlp2_w: next(),
            mlp2_b: next(),
        })
        .collect();
    BoundEncoder {
        token_w,
        token_b,
        pad_embed,
        class_token,
        blocks,
        final_ln_g: next(),
        final_ln_b: next(),
        head1_w: next(),
        head1_b: next(),
        head2_w: next(),
        head2_b: next(),
        head3_w: next(),
        head3_b: next(),
    }
}

pub(crate) fn bind_block<S: Scalar>(tape: &mut Tape<S>, b: &BlockParams<S>) -> BoundBlock {
    BoundBlock {
        ln1_g: tape.leaf(&b.ln1_g),
        ln1_b: tape.leaf(&b.ln1_b),
        qkv_w: tape.leaf(&b.qkv_w),
        qkv_b: tape.leaf(&b.qkv_b),
        proj_w: tape.leaf(&b.proj_w),
        proj_b: tape.leaf(&b.proj_b),
        ln2_g: tape.leaf(&b.ln2_g),
        ln2_b: tape.leaf(&b.ln2_b),
        mlp1_w: tape.leaf(&b.mlp1_w),
        mlp1_b: tape.leaf(&b.mlp1_b),
        mlp2_w: tape.leaf(&b.mlp2_w),
        mlp2_b: tape.leaf(&b.mlp2_b),
    }
}

pub fn bind_encoder<S: Scalar>(tape: &mut Tape<S>, p: &EncoderParams<S>) -> BoundEncoder {
    BoundEncoder {
        token_w: tape.leaf(&p.token_w),
        token_b: tape.leaf(&p.token_b),
        pad_embed: tape.leaf(&p.pad_embed),
        class_token: tape.leaf(&p.class_token),
        blocks: p.blocks.iter().map(|b| bind_block(tape, b)).collect(),
        final_ln_g: tape.leaf(&p.final_ln_g),
        final_ln_b: tape.leaf(&p.final_ln_b),
        head1_w: tape.leaf(&p.head1_w),
        head1_b: tape.leaf(&p.head1_b),
        head2_w: tape.leaf(&p.head2_w),
        head2_b: tape.leaf(&p.head2_b),
        head3_w: tape.leaf(&p.head3_w),
        head3_b: tape.leaf(&p.head3_b),
    }
}

/// Normal(0, std) truncated at two standard deviations.
pub fn trunc_normal<S: Scalar>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        for z in [r * a.cos(), r * a.sin()] {
            if z.abs() <= 2.0 && data.len() < n {
                data.push(S::from_f64(z * std));
            }
        }
    }
    Tensor::new(shape, data)
}

const INIT_STD: f64 = 0.02;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) — the conventional affine
/// init. The prototype head uses it instead of the transformer's
/// 0.02-std init: a flat MLP at 0.02 scale emits ~1e-4 logits, and the
/// sharpened teacher distributions would start indistinguishable from
/// uniform, giving early training nothing to match.
pub fn fan_in_uniform<S: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<S> {
    let bound = 1.0 / (shape[0] as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape, data)
}

pub(crate) fn init_block<S: Scalar>(d: usize, mlp: usize, rng: &mut ChaCha8Rng) -> BlockParams<S> {
    BlockParams {
        ln1_g: Tensor::full(&[d], S::ONE),
        ln1_b: Tensor::zeros(&[d]),
        qkv_w: trunc_normal(&[d, 3 * d], INIT_STD, rng),
        qkv_b: Tensor::zeros(&[3 * d]),
        proj_w: trunc_normal(&[d, d], INIT_STD, rng),
        proj_b: Tensor::zeros(&[d]),
        ln2_g: Tensor::full(&[d], S::ONE),
        ln2_b: Tensor::zeros(&[d]),
        mlp1_w: trunc_normal(&[d, mlp * d], INIT_STD, rng),
        mlp1_b: Tensor::zeros(&[mlp * d]),
        mlp2_w: trunc_normal(&[mlp * d, d], INIT_STD, rng),
        mlp2_b: Tensor::zeros(&[d]),
    }
}

pub fn init_encoder<S: Scalar>(cfg: &EncoderConfig, seed: u64) -> EncoderParams<S> {
    let mut rng = substream(seed, "init");
    let d = cfg.dim;
    EncoderParams {
        token_w: trunc_normal(&[cfg.token_width(), d], INIT_STD, &mut rng),
        token_b: Tensor::zeros(&[d]),
        pad_embed: trunc_normal(&[cfg.pad_types, d], INIT_STD, &mut rng),
        class_token: trunc_normal(&[1, d], INIT_STD, &mut rng),
        blocks: (0..cfg.layers).map(|_| init_block(d, cfg.mlp_ratio, &mut rng)).collect(),
        final_ln_g: Tensor::full(&[d], S::ONE),
        final_ln_b: Tensor::zeros(&[d]),
        head1_w: fan_in_uniform(&[d, d], &mut rng),
        head1_b: Tensor::zeros(&[d]),
        head2_w: fan_in_uniform(&[d, d], &mut rng),
        head2_b: Tensor::zeros(&[d]),
        head3_w: fan_in_uniform(&[d, cfg.prototypes], &mut rng),
        head3_b: Tensor::zeros(&[cfg.prototypes]),
    }
}

/// Per-taxel token matrix [taxels, frames*(3 flux + 3 pos)], frame-major
/// within a row. Selecting `kept` rows later removes masked taxels.
pub fn window_tokens<S: Scalar>(window: &TactileWindow, cfg: &EncoderConfig) -> Result<Tensor<S>> {
    let n = window.taxel_count();
    if n != cfg.taxels {
        return Err(ModelError::InvalidInput(format!(
            "window has {n} taxels, config expects {}",
            cfg.taxels
        )));
    }
    let frames = cfg.frames;
    if window.x.len() != frames * n * 3 || window.p.len() != frames * n * 3 {
        return Err(ModelError::InvalidInput("window channel layout mismatch".into()));
    }
    let width = cfg.token_width();
    let mut data = vec![S::ZERO; n * width];
    for f in 0..frames {
        for t in 0..n {
            let src = (f * n + t) * 3;
            let dst = t * width + f * 6;
            for c in 0..3 {
                data[dst + c] = S::from_f64(f64::from(window.x[src + c]));
                data[dst + 3 + c] = S::from_f64(f64::from(window.p[src + c]));
            }
        }
    }
    Ok(Tensor::new(&[n, width], data))
}

/// Rows of `tokens` for the kept taxel ids.
pub fn select_token_rows<S: Scalar>(tokens: &Tensor<S>, kept: &[usize]) -> Tensor<S> {
    let (_, w) = tokens.rows_cols();
    let mut data = Vec::with_capacity(kept.len() * w);
    for &id in kept {
        data.extend_from_slice(tokens.row(id));
    }
    Tensor::new(&[kept.len(), w], data)
}

/// One-hot pad-type rows for the kept taxels; multiplying by the pad
/// embedding table keeps the lookup differentiable.
pub fn pad_onehot<S: Scalar>(layout: &HandLayout, kept: &[usize], pad_types: usize) -> Tensor<S> {
    let types = layout.taxel_pad_types();
    let mut data = vec![S::ZERO; kept.len() * pad_types];
    for (i, &id) in kept.iter().enumerate() {
        data[i * pad_types + types[id].index()] = S::ONE;
    }
    Tensor::new(&[kept.len(), pad_types], data)
}

pub(crate) fn encoder_block<S: Scalar>(
    tape: &mut Tape<S>,
    b: &BoundBlock,
    x: Var,
    heads: usize,
) -> Var {
    let h = tape.layer_norm(x, b.ln1_g, b.ln1_b, LN_EPS);
    let qkv = tape.linear(h, b.qkv_w, b.qkv_b);
    let a = tape.attention(qkv, heads);
    let a = tape.linear(a, b.proj_w, b.proj_b);
    let x = tape.add(x, a);
    let h = tape.layer_norm(x, b.ln2_g, b.ln2_b, LN_EPS);
    let m = tape.linear(h, b.mlp1_w, b.mlp1_b);
    let m = tape.gelu(m);
    let m = tape.linear(m, b.mlp2_w, b.mlp2_b);
    tape.add(x, m)
}

/// Token rows [n, 60] + pad one-hot [n, pad_types] -> features
/// [1 + n, d]; row 0 is the class feature.
pub fn encode<S: Scalar>(
    tape: &mut Tape<S>,
    b: &BoundEncoder,
    cfg: &EncoderConfig,
    tokens: Var,
    pad_oh: Var,
) -> Var {
    let x = tape.linear(tokens, b.token_w, b.token_b);
    let pe = tape.matmul(pad_oh, b.pad_embed);
    let x = tape.add(x, pe);
    let mut x = tape.concat_rows(&[b.class_token, x]);
    for blk in &b.blocks {
        x = encoder_block(tape, blk, x, cfg.heads);
    }
    tape.layer_norm(x, b.final_ln_g, b.final_ln_b, LN_EPS)
}

/// Prototype logits for any feature rows: three affine layers with GELU
/// between them, d -> d -> d -> k.
pub fn project<S: Scalar>(tape: &mut Tape<S>, b: &BoundEncoder, features: Var) -> Var {
    let h = tape.linear(features, b.head1_w, b.head1_b);
    let h = tape.gelu(h);
    let h = tape.linear(h, b.head2_w, b.head2_b);
    let h = tape.gelu(h);
    tape.linear(h, b.head3_w, b.head3_b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolParams<S: Scalar> {
    pub query: Tensor<S>,
    pub out_w: Tensor<S>,
    pub out_b: Tensor<S>,
}

impl<S: Scalar> PoolParams<S> {
    pub fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        PoolParams {
            query: trunc_normal(&[1, dim], INIT_STD, rng),
            out_w: trunc_normal(&[dim, dim], INIT_STD, rng),
            out_b: Tensor::zeros(&[dim]),
        }
    }

    pub fn flatten(&self) -> Vec<&Tensor<S>> {
        vec![&self.query, &self.out_w, &self.out_b]
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.query, &mut self.out_w, &mut self.out_b]
    }

    pub fn names(prefix: &str) -> Vec<String> {
        ["query", "out_w", "out_b"].iter().map(|f| format!("{prefix}.{f}")).collect()
    }

    pub fn cast<T: Scalar>(&self) -> PoolParams<T> {
        PoolParams { query: self.query.cast(), out_w: self.out_w.cast(), out_b: self.out_b.cast() }
    }
}

pub struct BoundPool {
    pub query: Var,
    pub out_w: Var,
    pub out_b: Var,
}

pub fn bind_pool<S: Scalar>(tape: &mut Tape<S>, p: &PoolParams<S>) -> BoundPool {
    BoundPool {
        query: tape.leaf(&p.query),
        out_w: tape.leaf(&p.out_w),
        out_b: tape.leaf(&p.out_b),
    }
}

/// Softmax cross-attention of one learned query over the feature rows,
/// then an output map: [n, d] -> [1, d]. Order-invariant over rows.
pub fn attentive_pool<S: Scalar>(
    tape: &mut Tape<S>,
    p: &BoundPool,
    features: Var,
    dim: usize,
) -> Var {
    let scores = tape.matmul_nt(p.query, features);
    let scores = tape.scale(scores, S::from_f64(1.0 / (dim as f64).sqrt()));
    let probs = tape.softmax_rows(scores);
    let pooled = tape.matmul(probs, features);
    tape.linear(pooled, p.out_w, p.out_b)
}
