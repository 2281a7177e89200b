//! Masked-view self-distillation: a student encoder sees many masked
//! views of a window and matches, in prototype space, the sharpened and
//! centered predictions a momentum teacher makes from the large views.
//! Also hosts the masked-reconstruction baseline objective trained on
//! the same masks.

use crate::encoder::{
    bind_encoder, encode, pad_onehot, project, select_token_rows, trunc_normal, BlockParams,
    BoundBlock, BoundEncoder, EncoderConfig, EncoderParams, LN_EPS,
};
use crate::error::{ModelError, Result};
use crate::mask::ViewMask;
use skinssl_sim::hand::HandLayout;
use skinssl_sim::rng::substream;
use skinssl_tensor::{Scalar, Tape, Tensor, Var};

/// Full-window constants every view of one window draws from.
pub struct WindowInputs<S: Scalar> {
    pub tokens: Tensor<S>,
    pub pad_oh: Tensor<S>,
}

impl<S: Scalar> WindowInputs<S> {
    pub fn new(
        window: &skinssl_sim::signal::TactileWindow,
        layout: &HandLayout,
        cfg: &EncoderConfig,
    ) -> Result<Self> {
        let tokens = crate::encoder::window_tokens(window, cfg)?;
        let all: Vec<usize> = (0..cfg.taxels).collect();
        let pad_oh = pad_onehot(layout, &all, cfg.pad_types);
        Ok(WindowInputs { tokens, pad_oh })
    }
}

/// Encode one masked view and project it to prototype logits.
/// Returns (features [1+K, d], logits [1+K, k]).
pub fn view_forward<S: Scalar>(
    tape: &mut Tape<S>,
    enc: &BoundEncoder,
    cfg: &EncoderConfig,
    inputs: &WindowInputs<S>,
    kept: &[usize],
) -> (Var, Var) {
    let tokens = select_token_rows(&inputs.tokens, kept);
    let pad_oh = select_token_rows(&inputs.pad_oh, kept);
    let tok = tape.leaf_owned(tokens);
    let oh = tape.leaf_owned(pad_oh);
    let feats = encode(tape, enc, cfg, tok, oh);
    let logits = project(tape, enc, feats);
    (feats, logits)
}

/// Teacher logits for the global views, computed without gradients.
pub fn teacher_global_logits<S: Scalar>(
    teacher: &EncoderParams<S>,
    cfg: &EncoderConfig,
    inputs: &WindowInputs<S>,
    globals: &[ViewMask],
) -> Vec<Tensor<S>> {
    globals
        .iter()
        .map(|view| {
            let mut tape = Tape::inference();
            let bound = bind_encoder(&mut tape, teacher);
            let (_, logits) = view_forward(&mut tape, &bound, cfg, inputs, &view.kept);
            tape.value(logits).clone()
        })
        .collect()
}

/// Centered, sharpened teacher distributions: softmax((l - c) / temp)
/// per row, computed in float64.
pub fn teacher_targets<S: Scalar>(
    logits: &Tensor<S>,
    center: &Tensor<f64>,
    temp: f64,
) -> Tensor<S> {
    let (rows, k) = logits.rows_cols();
    assert_eq!(center.len(), k, "center width must match prototype count");
    let c = center.data();
    let mut out = Vec::with_capacity(rows * k);
    let mut buf = vec![0.0f64; k];
    for r in 0..rows {
        let row = logits.row(r);
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            buf[j] = (row[j].to_f64() - c[j]) / temp;
            max = max.max(buf[j]);
        }
        let mut sum = 0.0;
        for v in buf.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        out.extend(buf.iter().map(|&v| S::from_f64(v / sum)));
    }
    Tensor::new(&[rows, k], out)
}

/// Running sum of teacher logit rows (class and patch alike) feeding
/// the center update.
#[derive(Debug, Clone)]
pub struct CenterAccumulator {
    sum: Vec<f64>,
    rows: usize,
}

impl CenterAccumulator {
    pub fn new(k: usize) -> Self {
        CenterAccumulator { sum: vec![0.0; k], rows: 0 }
    }

    pub fn add<S: Scalar>(&mut self, logits: &Tensor<S>) {
        let (rows, k) = logits.rows_cols();
        assert_eq!(k, self.sum.len());
        for r in 0..rows {
            for (a, v) in self.sum.iter_mut().zip(logits.row(r)) {
                *a += v.to_f64();
            }
        }
        self.rows += rows;
    }

    pub fn mean(&self) -> Result<Tensor<f64>> {
        if self.rows == 0 {
            return Err(ModelError::InvalidInput("center update saw no teacher rows".into()));
        }
        let n = self.rows as f64;
        Ok(Tensor::new(&[self.sum.len()], self.sum.iter().map(|&s| s / n).collect()))
    }
}

/// c' = momentum * c + (1 - momentum) * batch_mean.
pub fn update_center(center: &mut Tensor<f64>, batch_mean: &Tensor<f64>, momentum: f64) {
    assert_eq!(center.shape(), batch_mean.shape());
    let m = batch_mean.data().to_vec();
    for (c, b) in center.data_mut().iter_mut().zip(m) {
        *c = momentum * *c + (1.0 - momentum) * b;
    }
}

/// Collapse monitor: entropy of the MEAN teacher class distribution
/// over a batch of targets. Individual targets are sharp by design
/// (low teacher temperature), but a healthy run selects different
/// prototypes for different windows, so their mean stays broad; a run
/// collapsing onto few prototypes drives this toward zero.
pub fn mean_class_entropy<S: Scalar>(targets: &[Tensor<S>]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let k = targets[0].rows_cols().1;
    let mut mean = vec![0.0f64; k];
    for t in targets {
        for (a, v) in mean.iter_mut().zip(t.row(0)) {
            *a += v.to_f64();
        }
    }
    let n = targets.len() as f64;
    let mut h = 0.0;
    for &p in &mean {
        let p = p / n;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// The tape-resident loss plus plain numbers for logging.
pub struct DistillParts {
    pub loss: Var,
    pub class_value: f64,
    pub patch_value: f64,
    pub class_pairs: usize,
    pub patch_pairs: usize,
}

impl DistillParts {
    pub fn total_value(&self, patch_weight: f64) -> f64 {
        self.class_value + patch_weight * self.patch_value
    }
}

/// Cross-entropy distillation over every (teacher global, other student
/// view) pair. Class terms average over all pairs; patch terms compare
/// co-visible taxels (kept in both views, matched by id) and average
/// over pairs that share any.
#[allow(clippy::too_many_arguments)]
pub fn distillation_loss<S: Scalar>(
    tape: &mut Tape<S>,
    student: &BoundEncoder,
    cfg: &EncoderConfig,
    inputs: &WindowInputs<S>,
    views: &[ViewMask],
    n_global: usize,
    targets: &[Tensor<S>],
    student_temp: f64,
    patch_weight: f64,
) -> Result<DistillParts> {
    if n_global == 0 || n_global > views.len() {
        return Err(ModelError::InvalidInput(format!(
            "{n_global} teacher views with {} student views",
            views.len()
        )));
    }
    if targets.len() != n_global {
        return Err(ModelError::InvalidInput(format!(
            "{} teacher target sets for {n_global} global views",
            targets.len()
        )));
    }
    for (g, t) in targets.iter().enumerate() {
        let want = views[g].kept.len() + 1;
        if t.rows_cols().0 != want {
            return Err(ModelError::InvalidInput(format!(
                "teacher targets {g}: {} rows, view keeps {}",
                t.rows_cols().0,
                want - 1
            )));
        }
    }

    // student forward on every view, log-probabilities at student temp
    let mut logq = Vec::with_capacity(views.len());
    for view in views {
        let (_, logits) = view_forward(tape, student, cfg, inputs, &view.kept);
        let scaled = tape.scale(logits, S::from_f64(1.0 / student_temp));
        logq.push(tape.log_softmax_rows(scaled));
    }

    // taxel id -> position in each view's kept list
    let pos: Vec<Vec<Option<usize>>> = views
        .iter()
        .map(|v| {
            let mut p = vec![None; cfg.taxels];
            for (i, &id) in v.kept.iter().enumerate() {
                p[id] = Some(i);
            }
            p
        })
        .collect();

    let mut class_terms: Vec<Var> = Vec::new();
    let mut patch_terms: Vec<Var> = Vec::new();
    for g in 0..n_global {
        let t_class = Tensor::new(&[1, cfg.prototypes], targets[g].row(0).to_vec());
        for v in 0..views.len() {
            if v == g {
                continue;
            }
            let q_class = tape.select_rows(logq[v], &[0]);
            let prod = tape.mul_const(q_class, &t_class);
            let s = tape.sum_all(prod);
            class_terms.push(tape.scale(s, S::from_f64(-1.0)));

            // co-visible taxels, ascending id order
            let mut student_rows = Vec::new();
            let mut t_rows: Vec<S> = Vec::new();
            for &id in &views[g].kept {
                if let (Some(pg), Some(pv)) = (pos[g][id], pos[v][id]) {
                    student_rows.push(1 + pv);
                    t_rows.extend_from_slice(targets[g].row(1 + pg));
                }
            }
            if student_rows.is_empty() {
                continue;
            }
            let m = student_rows.len();
            let t_patch = Tensor::new(&[m, cfg.prototypes], t_rows);
            let q_patch = tape.select_rows(logq[v], &student_rows);
            let prod = tape.mul_const(q_patch, &t_patch);
            let s = tape.sum_all(prod);
            patch_terms.push(tape.scale(s, S::from_f64(-1.0 / m as f64)));
        }
    }

    let class_pairs = class_terms.len();
    let patch_pairs = patch_terms.len();
    let mean_of = |tape: &mut Tape<S>, terms: &[Var]| -> Var {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t);
        }
        tape.scale(acc, S::from_f64(1.0 / terms.len() as f64))
    };
    let class_loss = mean_of(tape, &class_terms);
    let patch_loss = if patch_terms.is_empty() {
        let zero = tape.leaf_owned(Tensor::zeros(&[1, 1]));
        tape.sum_all(zero)
    } else {
        mean_of(tape, &patch_terms)
    };
    let weighted = tape.scale(patch_loss, S::from_f64(patch_weight));
    let loss = tape.add(class_loss, weighted);
    Ok(DistillParts {
        loss,
        class_value: tape.value(class_loss).item().to_f64(),
        patch_value: tape.value(patch_loss).item().to_f64(),
        class_pairs,
        patch_pairs,
    })
}

/// teacher <- momentum * teacher + (1 - momentum) * student, in float64.
pub fn ema_update<S: Scalar>(
    teacher: &mut EncoderParams<S>,
    student: &EncoderParams<S>,
    momentum: f64,
) {
    let sources = student.flatten();
    let mut targets = teacher.flatten_mut();
    assert_eq!(sources.len(), targets.len());
    for (t, s) in targets.iter_mut().zip(sources) {
        assert_eq!(t.shape(), s.shape());
        let sd = s.data();
        for (tv, sv) in t.data_mut().iter_mut().zip(sd) {
            *tv = S::from_f64(momentum * tv.to_f64() + (1.0 - momentum) * sv.to_f64());
        }
    }
}

/// Decoder for the masked-reconstruction baseline: a learned token
/// stands in for each hidden taxel, two attention blocks mix it with
/// the visible features, and a linear head predicts the 60 raw token
/// values. Without positional information every hidden taxel gets the
/// same prediction, which is exactly why this baseline is weak.
#[derive(Debug, Clone, PartialEq)]
pub struct MaeParams<S: Scalar> {
    pub mask_token: Tensor<S>,
    pub blocks: Vec<BlockParams<S>>,
    pub ln_g: Tensor<S>,
    pub ln_b: Tensor<S>,
    pub out_w: Tensor<S>,
    pub out_b: Tensor<S>,
}

pub const MAE_DECODER_LAYERS: usize = 2;

impl<S: Scalar> MaeParams<S> {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Self {
        let mut rng = substream(seed, "mae-init");
        let d = cfg.dim;
        let blocks = (0..MAE_DECODER_LAYERS)
            .map(|_| BlockParams {
                ln1_g: Tensor::full(&[d], S::ONE),
                ln1_b: Tensor::zeros(&[d]),
                qkv_w: trunc_normal(&[d, 3 * d], 0.02, &mut rng),
                qkv_b: Tensor::zeros(&[3 * d]),
                proj_w: trunc_normal(&[d, d], 0.02, &mut rng),
                proj_b: Tensor::zeros(&[d]),
                ln2_g: Tensor::full(&[d], S::ONE),
                ln2_b: Tensor::zeros(&[d]),
                mlp1_w: trunc_normal(&[d, cfg.mlp_ratio * d], 0.02, &mut rng),
                mlp1_b: Tensor::zeros(&[cfg.mlp_ratio * d]),
                mlp2_w: trunc_normal(&[cfg.mlp_ratio * d, d], 0.02, &mut rng),
                mlp2_b: Tensor::zeros(&[d]),
            })
            .collect();
        MaeParams {
            mask_token: trunc_normal(&[1, d], 0.02, &mut rng),
            blocks,
            ln_g: Tensor::full(&[d], S::ONE),
            ln_b: Tensor::zeros(&[d]),
            out_w: trunc_normal(&[d, cfg.token_width()], 0.02, &mut rng),
            out_b: Tensor::zeros(&[cfg.token_width()]),
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut v = vec!["mae.mask_token".to_string()];
        for (i, _) in self.blocks.iter().enumerate() {
            for f in [
                "ln1_g", "ln1_b", "qkv_w", "qkv_b", "proj_w", "proj_b", "ln2_g", "ln2_b",
                "mlp1_w", "mlp1_b", "mlp2_w", "mlp2_b",
            ] {
                v.push(format!("mae.block{i}.{f}"));
            }
        }
        for f in ["mae.ln_g", "mae.ln_b", "mae.out_w", "mae.out_b"] {
            v.push(f.to_string());
        }
        v
    }

    pub fn flatten(&self) -> Vec<&Tensor<S>> {
        let mut v = vec![&self.mask_token];
        for b in &self.blocks {
            v.extend([
                &b.ln1_g, &b.ln1_b, &b.qkv_w, &b.qkv_b, &b.proj_w, &b.proj_b, &b.ln2_g,
                &b.ln2_b, &b.mlp1_w, &b.mlp1_b, &b.mlp2_w, &b.mlp2_b,
            ]);
        }
        v.extend([&self.ln_g, &self.ln_b, &self.out_w, &self.out_b]);
        v
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut v: Vec<&mut Tensor<S>> = vec![&mut self.mask_token];
        for b in &mut self.blocks {
            v.extend([
                &mut b.ln1_g,
                &mut b.ln1_b,
                &mut b.qkv_w,
                &mut b.qkv_b,
                &mut b.proj_w,
                &mut b.proj_b,
                &mut b.ln2_g,
                &mut b.ln2_b,
                &mut b.mlp1_w,
                &mut b.mlp1_b,
                &mut b.mlp2_w,
                &mut b.mlp2_b,
            ]);
        }
        v.extend([&mut self.ln_g, &mut self.ln_b, &mut self.out_w, &mut self.out_b]);
        v
    }

    pub fn all_finite(&self) -> bool {
        self.flatten().iter().all(|t| t.all_finite())
    }
}

pub struct BoundMae {
    pub mask_token: Var,
    pub blocks: Vec<BoundBlock>,
    pub ln_g: Var,
    pub ln_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

pub fn bind_mae<S: Scalar>(tape: &mut Tape<S>, p: &MaeParams<S>) -> BoundMae {
    BoundMae {
        mask_token: tape.leaf(&p.mask_token),
        blocks: p
            .blocks
            .iter()
            .map(|b| BoundBlock {
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
            })
            .collect(),
        ln_g: tape.leaf(&p.ln_g),
        ln_b: tape.leaf(&p.ln_b),
        out_w: tape.leaf(&p.out_w),
        out_b: tape.leaf(&p.out_b),
    }
}

/// `vars` laid out as MaeParams::flatten.
pub fn mae_from_vars(vars: &[Var]) -> BoundMae {
    let mut it = vars.iter().copied();
    let mut next = || it.next().expect("enough vars for decoder");
    let mask_token = next();
    let blocks = (0..MAE_DECODER_LAYERS)
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
    BoundMae { mask_token, blocks, ln_g: next(), ln_b: next(), out_w: next(), out_b: next() }
}

fn decoder_block<S: Scalar>(tape: &mut Tape<S>, b: &BoundBlock, x: Var, heads: usize) -> Var {
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

pub struct MaeParts {
    pub loss: Var,
    pub value: f64,
    /// Predicted full token rows [taxels, frames*channels], for tests.
    pub predictions: Var,
}

/// Encode the kept taxels, decode the full sheet with mask tokens at
/// hidden positions, and score mean squared error on the flux channels
/// of hidden taxels only.
pub fn mae_loss<S: Scalar>(
    tape: &mut Tape<S>,
    enc: &BoundEncoder,
    dec: &BoundMae,
    cfg: &EncoderConfig,
    inputs: &WindowInputs<S>,
    view: &ViewMask,
) -> Result<MaeParts> {
    if view.masked.is_empty() {
        return Err(ModelError::InvalidInput(
            "reconstruction objective needs at least one hidden taxel".into(),
        ));
    }
    let tokens = select_token_rows(&inputs.tokens, &view.kept);
    let pad_oh = select_token_rows(&inputs.pad_oh, &view.kept);
    let tok = tape.leaf_owned(tokens);
    let oh = tape.leaf_owned(pad_oh);
    let feats = encode(tape, enc, cfg, tok, oh);

    // row source per taxel: its feature row if kept, else the shared
    // mask token appended after the features
    let k = view.kept.len();
    let cat = tape.concat_rows(&[feats, dec.mask_token]);
    let mut row_of = vec![1 + k; cfg.taxels]; // mask token row
    for (i, &id) in view.kept.iter().enumerate() {
        row_of[id] = 1 + i; // skip class row
    }
    let mut seq = tape.select_rows(cat, &row_of);
    for b in &dec.blocks {
        seq = decoder_block(tape, b, seq, cfg.heads);
    }
    let seq = tape.layer_norm(seq, dec.ln_g, dec.ln_b, LN_EPS);
    let pred = tape.linear(seq, dec.out_w, dec.out_b);

    let pred_hidden = tape.select_rows(pred, &view.masked);
    let width = cfg.token_width();
    let mut target = Vec::with_capacity(view.masked.len() * width);
    for &id in &view.masked {
        target.extend_from_slice(inputs.tokens.row(id));
    }
    let target = Tensor::new(&[view.masked.len(), width], target);
    // flux channels are the first 3 of each frame's 6 columns
    let mut flux_cols = vec![S::ZERO; view.masked.len() * width];
    for r in 0..view.masked.len() {
        for f in 0..cfg.frames {
            for c in 0..3 {
                flux_cols[r * width + f * 6 + c] = S::ONE;
            }
        }
    }
    let flux_mask = Tensor::new(&[view.masked.len(), width], flux_cols);

    let t = tape.leaf_owned(target);
    let diff = tape.sub(pred_hidden, t);
    let masked_diff = tape.mul_const(diff, &flux_mask);
    let sq = tape.mul(masked_diff, masked_diff);
    let total = tape.sum_all(sq);
    let denom = (view.masked.len() * cfg.frames * 3) as f64;
    let loss = tape.scale(total, S::from_f64(1.0 / denom));
    let value = tape.value(loss).item().to_f64();
    Ok(MaeParts { loss, value, predictions: pred })
}

/// Per-step loss summary, shaped by the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossReport {
    Distill { total: f64, class: f64, patch: f64, teacher_entropy: f64 },
    Mae { mse: f64 },
}

impl LossReport {
    pub fn total(&self) -> f64 {
        match *self {
            LossReport::Distill { total, .. } => total,
            LossReport::Mae { mse } => mse,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encoder_from_vars, init_encoder};
    use crate::mask::{build_views, TaxelGraph, ViewSpec};
    use skinssl_sim::hand::{build_default_layout, forward_kinematics, rest_baseline_config};
    use skinssl_sim::signal::TactileWindow;
    use skinssl_tensor::grad_check;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig { prototypes: 4, ..EncoderConfig::tiny() }
    }

    fn tiny_inputs<S: Scalar>(cfg: &EncoderConfig, seed: u64) -> WindowInputs<S> {
        let mut rng = substream(seed, "inputs");
        let tokens = trunc_normal(&[cfg.taxels, cfg.token_width()], 0.5, &mut rng);
        let mut oh = vec![S::ZERO; cfg.taxels * cfg.pad_types];
        for t in 0..cfg.taxels {
            oh[t * cfg.pad_types + t % cfg.pad_types] = S::ONE;
        }
        WindowInputs { tokens, pad_oh: Tensor::new(&[cfg.taxels, cfg.pad_types], oh) }
    }

    fn manual_views(n: usize) -> Vec<ViewMask> {
        // two globals and two locals over n taxels, hand-picked ids
        let view = |kept: Vec<usize>| {
            let masked = (0..n).filter(|t| !kept.contains(t)).collect();
            ViewMask { retention: kept.len() as f64 / n as f64, kept, masked, trace: vec![] }
        };
        vec![
            view((0..n - 2).collect()),
            view((2..n).collect()),
            view(vec![0, 1, 2]),
            view(vec![n - 3, n - 2, n - 1]),
        ]
    }

    fn uniform_targets<S: Scalar>(views: &[ViewMask], n_global: usize, k: usize) -> Vec<Tensor<S>> {
        (0..n_global)
            .map(|g| {
                let rows = views[g].kept.len() + 1;
                Tensor::full(&[rows, k], S::from_f64(1.0 / k as f64))
            })
            .collect()
    }

    #[test]
    fn uniform_teacher_and_uniform_student_score_ln_k() {
        let cfg = tiny_cfg();
        let mut params = init_encoder::<f64>(&cfg, 1);
        // zero projection head -> all logits equal -> uniform student
        params.head3_w = Tensor::zeros(params.head3_w.shape());
        params.head3_b = Tensor::zeros(params.head3_b.shape());
        let inputs = tiny_inputs::<f64>(&cfg, 2);
        let views = manual_views(cfg.taxels);
        let targets = uniform_targets::<f64>(&views, 2, cfg.prototypes);
        let mut tape = Tape::new();
        let bound = bind_encoder(&mut tape, &params);
        let parts =
            distillation_loss(&mut tape, &bound, &cfg, &inputs, &views, 2, &targets, 0.1, 1.0)
                .unwrap();
        let ln_k = (cfg.prototypes as f64).ln();
        assert!((parts.class_value - ln_k).abs() < 1e-9, "{}", parts.class_value);
        assert!((parts.patch_value - ln_k).abs() < 1e-9, "{}", parts.patch_value);
        assert!((parts.total_value(1.0) - 2.0 * ln_k).abs() < 1e-9);
        assert_eq!(parts.class_pairs, 2 * (views.len() - 1));
    }

    #[test]
    fn one_hot_teacher_reads_off_student_log_prob() {
        let cfg = tiny_cfg();
        let params = init_encoder::<f64>(&cfg, 3);
        let inputs = tiny_inputs::<f64>(&cfg, 4);
        let n = cfg.taxels;
        // one teacher view, one student view, no shared taxels so the
        // loss is the single class term
        let views = vec![
            ViewMask {
                kept: (0..n / 2).collect(),
                masked: (n / 2..n).collect(),
                retention: 0.5,
                trace: vec![],
            },
            ViewMask {
                kept: (n / 2..n).collect(),
                masked: (0..n / 2).collect(),
                retention: 0.5,
                trace: vec![],
            },
        ];
        let j = 2usize;
        let rows = views[0].kept.len() + 1;
        let mut t = vec![0.0f64; rows * cfg.prototypes];
        for r in 0..rows {
            t[r * cfg.prototypes + j] = 1.0;
        }
        let targets = vec![Tensor::new(&[rows, cfg.prototypes], t)];

        let mut tape = Tape::new();
        let bound = bind_encoder(&mut tape, &params);
        let parts =
            distillation_loss(&mut tape, &bound, &cfg, &inputs, &views, 1, &targets, 0.1, 1.0)
                .unwrap();
        assert_eq!(parts.class_pairs, 1);
        assert_eq!(parts.patch_pairs, 0, "disjoint views share no taxels");

        // oracle: -log softmax(student logits / temp)[class row, j]
        let (_, logits) = view_forward(&mut tape, &bound, &cfg, &inputs, &views[1].kept);
        let scaled = tape.scale(logits, 0.1f64.recip());
        let lq = tape.log_softmax_rows(scaled);
        let want = -tape.value(lq).row(0)[j];
        assert!((parts.class_value - want).abs() < 1e-9);
    }

    #[test]
    fn default_view_layout_yields_eighteen_pairs() {
        let cfg = tiny_cfg();
        let params = init_encoder::<f64>(&cfg, 5);
        let inputs = tiny_inputs::<f64>(&cfg, 6);
        let layout = build_default_layout();
        let fk = forward_kinematics(&layout, &rest_baseline_config()).unwrap();
        // graph over the first `taxels` rest positions
        let graph = TaxelGraph::build(&fk.positions[..cfg.taxels]);
        let views =
            build_views(&graph, &ViewSpec::default(), &mut substream(7, "views")).unwrap();
        let targets: Vec<Tensor<f64>> = views[..2]
            .iter()
            .map(|v| {
                Tensor::full(
                    &[v.kept.len() + 1, cfg.prototypes],
                    1.0 / cfg.prototypes as f64,
                )
            })
            .collect();
        let mut tape = Tape::new();
        let bound = bind_encoder(&mut tape, &params);
        let parts =
            distillation_loss(&mut tape, &bound, &cfg, &inputs, &views, 2, &targets, 0.1, 1.0)
                .unwrap();
        assert_eq!(parts.class_pairs, 18);
        assert!(parts.patch_pairs <= 18);
        // both globals keep >= 40% of 8 = 4 taxels, so they overlap
        assert!(parts.patch_pairs >= 1);
    }

    #[test]
    fn teacher_targets_center_and_sharpen() {
        let logits = Tensor::<f64>::new(&[1, 4], vec![1.0, 1.0, 3.0, 1.0]);
        // center exactly cancels the odd logit -> uniform
        let center = Tensor::<f64>::new(&[4], vec![0.0, 0.0, 2.0, 0.0]);
        let t = teacher_targets(&logits, &center, 0.04);
        for v in t.row(0) {
            assert!((v - 0.25).abs() < 1e-12);
        }
        // without centering, sharpening at temp 0.04 is near one-hot
        let t = teacher_targets(&logits, &Tensor::zeros(&[4]), 0.04);
        assert!(t.row(0)[2] > 0.999999);
        let s: f64 = t.row(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn center_update_examples() {
        // momentum 0 -> center jumps to the batch mean
        let mut c = Tensor::<f64>::new(&[3], vec![5.0, -1.0, 2.0]);
        let mean = Tensor::<f64>::new(&[3], vec![1.0, 2.0, 3.0]);
        update_center(&mut c, &mean, 0.0);
        assert_eq!(c.data(), mean.data());
        // fixed point: mean equal to center leaves it unchanged
        let mut c = Tensor::<f64>::new(&[3], vec![1.0, 2.0, 3.0]);
        update_center(&mut c, &mean, 0.9);
        assert_eq!(c.data(), mean.data());
        // zero center, momentum 0.9, mean 10 -> 1
        let mut c = Tensor::<f64>::zeros(&[3]);
        let mean = Tensor::<f64>::full(&[3], 10.0);
        update_center(&mut c, &mean, 0.9);
        for &v in c.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn center_accumulator_averages_all_rows() {
        let mut acc = CenterAccumulator::new(2);
        acc.add(&Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        acc.add(&Tensor::<f64>::new(&[1, 2], vec![5.0, 6.0]));
        let m = acc.mean().unwrap();
        assert_eq!(m.data(), &[3.0, 4.0]);
        assert!(CenterAccumulator::new(2).mean().is_err());
    }

    #[test]
    fn entropy_of_uniform_is_ln_k_and_one_hot_is_zero() {
        let uni = Tensor::<f64>::full(&[3, 8], 1.0 / 8.0);
        assert!((mean_class_entropy(&[uni]) - 8.0f64.ln()).abs() < 1e-12);
        let mut oh = vec![0.0; 8];
        oh[3] = 1.0;
        let one_hot = Tensor::<f64>::new(&[1, 8], oh);
        assert_eq!(mean_class_entropy(&[one_hot]), 0.0);
    }

    #[test]
    fn entropy_separates_collapse_from_diverse_sharp_targets() {
        let hot = |j: usize| {
            let mut v = vec![0.0; 8];
            v[j] = 1.0;
            Tensor::<f64>::new(&[1, 8], v)
        };
        // every window on the same prototype: collapse, entropy zero
        assert_eq!(mean_class_entropy(&[hot(2), hot(2), hot(2)]), 0.0);
        // sharp but diverse: mean spreads mass, entropy stays up
        let spread = mean_class_entropy(&[hot(0), hot(3), hot(5), hot(7)]);
        assert!((spread - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ema_endpoints_copy_and_freeze() {
        let cfg = tiny_cfg();
        let student = init_encoder::<f64>(&cfg, 8);
        let teacher0 = init_encoder::<f64>(&cfg, 9);
        let mut t = teacher0.clone();
        ema_update(&mut t, &student, 1.0);
        assert_eq!(t, teacher0, "momentum 1 freezes the teacher");
        ema_update(&mut t, &student, 0.0);
        assert_eq!(t, student, "momentum 0 copies the student");
    }

    #[test]
    fn ema_matches_scalar_recursion() {
        let cfg = tiny_cfg();
        let mut teacher = init_encoder::<f64>(&cfg, 10);
        let student = init_encoder::<f64>(&cfg, 11);
        let t0 = teacher.token_w.data()[0];
        let s0 = student.token_w.data()[0];
        let mut expect = t0;
        for _ in 0..50 {
            ema_update(&mut teacher, &student, 0.994);
            expect = 0.994 * expect + (1.0 - 0.994) * s0;
        }
        assert_eq!(teacher.token_w.data()[0], expect, "identical float64 recursion");
    }

    #[test]
    fn distillation_loss_passes_gradcheck() {
        let cfg = tiny_cfg();
        let params = init_encoder::<f64>(&cfg, 12);
        let inputs = tiny_inputs::<f64>(&cfg, 13);
        let views = manual_views(cfg.taxels);
        // sharpened but not degenerate targets
        let targets: Vec<Tensor<f64>> = (0..2)
            .map(|g| {
                let rows = views[g].kept.len() + 1;
                let mut data = Vec::new();
                for r in 0..rows {
                    let mut row = vec![0.05; cfg.prototypes];
                    row[(r + g) % cfg.prototypes] = 0.85;
                    data.extend(row);
                }
                Tensor::new(&[rows, cfg.prototypes], data)
            })
            .collect();
        let flat: Vec<Tensor<f64>> = params.flatten().into_iter().cloned().collect();
        let cfg2 = cfg.clone();
        let report = grad_check(
            &flat,
            move |tape, vars| {
                let bound = encoder_from_vars(&cfg2, vars);
                distillation_loss(tape, &bound, &cfg2, &inputs, &views, 2, &targets, 0.1, 1.0)
                    .unwrap()
                    .loss
            },
            100,
            21,
        );
        report.assert_close(1e-4);
    }

    #[test]
    fn mae_predictions_are_constant_across_hidden_taxels() {
        let cfg = EncoderConfig::tiny();
        let params = init_encoder::<f64>(&cfg, 14);
        let mae = MaeParams::<f64>::init(&cfg, 15);
        let inputs = tiny_inputs::<f64>(&cfg, 16);
        let view = ViewMask {
            kept: vec![0, 3, 5],
            masked: vec![1, 2, 4, 6, 7],
            retention: 3.0 / 8.0,
            trace: vec![],
        };
        let mut tape = Tape::new();
        let enc = bind_encoder(&mut tape, &params);
        let dec = bind_mae(&mut tape, &mae);
        let parts = mae_loss(&mut tape, &enc, &dec, &cfg, &inputs, &view).unwrap();
        let pred = tape.value(parts.predictions).clone();
        let first = pred.row(view.masked[0]).to_vec();
        for &id in &view.masked[1..] {
            for (a, b) in pred.row(id).iter().zip(&first) {
                assert!(
                    (a - b).abs() < 1e-9,
                    "hidden taxels share one mask token, predictions must match"
                );
            }
        }
        assert!(parts.value.is_finite());
    }

    #[test]
    fn mae_loss_matches_manual_mse_on_hidden_flux() {
        let cfg = EncoderConfig::tiny();
        let params = init_encoder::<f64>(&cfg, 17);
        let mae = MaeParams::<f64>::init(&cfg, 18);
        let inputs = tiny_inputs::<f64>(&cfg, 19);
        let view = ViewMask {
            kept: vec![0, 1, 2, 3, 4, 5],
            masked: vec![6, 7],
            retention: 0.75,
            trace: vec![],
        };
        let mut tape = Tape::new();
        let enc = bind_encoder(&mut tape, &params);
        let dec = bind_mae(&mut tape, &mae);
        let parts = mae_loss(&mut tape, &enc, &dec, &cfg, &inputs, &view).unwrap();
        let pred = tape.value(parts.predictions);
        let mut manual = 0.0;
        let mut count = 0;
        for &id in &view.masked {
            let p = pred.row(id);
            let t = inputs.tokens.row(id);
            for f in 0..cfg.frames {
                for c in 0..3 {
                    manual += (p[f * 6 + c] - t[f * 6 + c]).powi(2);
                    count += 1;
                }
            }
        }
        manual /= count as f64;
        assert!((parts.value - manual).abs() < 1e-9);
        // full retention is rejected
        let full = ViewMask::full(cfg.taxels);
        let mut tape = Tape::new();
        let enc = bind_encoder(&mut tape, &params);
        let dec = bind_mae(&mut tape, &mae);
        assert!(mae_loss(&mut tape, &enc, &dec, &cfg, &inputs, &full).is_err());
    }

    #[test]
    fn mae_loss_passes_gradcheck() {
        let cfg = EncoderConfig::tiny();
        let params = init_encoder::<f64>(&cfg, 20);
        let mae = MaeParams::<f64>::init(&cfg, 21);
        let inputs = tiny_inputs::<f64>(&cfg, 22);
        let view = ViewMask {
            kept: vec![1, 2, 6],
            masked: vec![0, 3, 4, 5, 7],
            retention: 3.0 / 8.0,
            trace: vec![],
        };
        let mut flat: Vec<Tensor<f64>> = params.flatten().into_iter().cloned().collect();
        let n_enc = flat.len();
        flat.extend(mae.flatten().into_iter().cloned());
        let cfg2 = cfg.clone();
        let report = grad_check(
            &flat,
            move |tape, vars| {
                let enc = encoder_from_vars(&cfg2, &vars[..n_enc]);
                let dec = mae_from_vars(&vars[n_enc..]);
                mae_loss(tape, &enc, &dec, &cfg2, &inputs, &view).unwrap().loss
            },
            100,
            23,
        );
        report.assert_close(1e-4);
    }

    #[test]
    fn teacher_logits_need_no_gradients() {
        let cfg = tiny_cfg();
        let teacher = init_encoder::<f64>(&cfg, 24);
        let inputs = tiny_inputs::<f64>(&cfg, 25);
        let views = manual_views(cfg.taxels);
        let logits = teacher_global_logits(&teacher, &cfg, &inputs, &views[..2]);
        assert_eq!(logits.len(), 2);
        for (g, l) in logits.iter().enumerate() {
            assert_eq!(l.shape(), &[views[g].kept.len() + 1, cfg.prototypes]);
            assert!(l.all_finite());
        }
    }

    #[test]
    fn window_view_is_equivalent_to_pre_masked_window() {
        // encoding a masked view must equal encoding a window that
        // only ever contained the kept taxels
        let cfg = EncoderConfig { taxels: 368, ..tiny_cfg() };
        let layout = build_default_layout();
        let params = init_encoder::<f64>(&cfg, 26);
        let mut rng = substream(27, "w");
        let n = cfg.taxels;
        let window = TactileWindow {
            x: (0..cfg.frames * n * 3).map(|_| rng.gen_range(-1.0f64..1.0) as f32).collect(),
            p: (0..cfg.frames * n * 3).map(|_| rng.gen_range(-1.0f64..1.0) as f32).collect(),
            t_end: 0.09,
        };
        let inputs = WindowInputs::<f64>::new(&window, &layout, &cfg).unwrap();
        let kept: Vec<usize> = (0..n).step_by(3).collect();
        let mut tape = Tape::inference();
        let bound = bind_encoder(&mut tape, &params);
        let (feats, _) = view_forward(&mut tape, &bound, &cfg, &inputs, &kept);
        let a = tape.value(feats).clone();

        let pre = WindowInputs {
            tokens: select_token_rows(&inputs.tokens, &kept),
            pad_oh: select_token_rows(&inputs.pad_oh, &kept),
        };
        let all: Vec<usize> = (0..kept.len()).collect();
        let mut tape = Tape::inference();
        let bound = bind_encoder(&mut tape, &params);
        let (feats, _) = view_forward(&mut tape, &bound, &cfg, &pre, &all);
        let b = tape.value(feats).clone();
        assert_eq!(a, b);
    }

    use rand::Rng;
}
