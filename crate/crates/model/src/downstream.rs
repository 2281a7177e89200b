//! Task decoders and the evaluation harness: instantaneous force
//! regression (attentive probe over one window), sequence decoding for
//! pose and joystick (ten pooled windows through one transformer
//! block), frozen / finetuned / end-to-end training modes, metrics,
//! and the sample-efficiency sweep.

use crate::encoder::{
    attentive_pool, bind_block, bind_encoder, bind_pool, encode, encoder_block, fan_in_uniform,
    init_block, init_encoder, pad_onehot, window_tokens, BlockParams, BoundBlock, BoundEncoder,
    BoundPool, EncoderConfig, EncoderParams, PoolParams, BLOCK_FIELDS,
};
use crate::error::{ModelError, Result};
use crate::optim::{AdamW, Schedules};
use crate::pretrain::load_pretrained_encoder;
use crate::ssl::WindowInputs;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use skinssl_sim::dataset::read_baseline;
use skinssl_sim::format::{read_dataset, read_episode};
use skinssl_sim::hand::{HandLayout, JointState};
use skinssl_sim::rng::{substream, substream_indexed};
use skinssl_sim::signal::{
    resample_100hz, subtract_baseline, window_at, CalibratedStream, TactileWindow,
    FRAMES_PER_WINDOW,
};
use skinssl_sim::synth::{wrap_angle, LabeledStep};
use skinssl_tensor::{Scalar, Tape, Tensor, Var};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

/// Windows per decoded second: ten back-to-back 0.1 s windows.
pub const SEQUENCE_LEN: usize = 10;
pub const LABEL_DIMS: usize = 3;
/// Pose accuracy thresholds: 0.02 m translation, 5 degrees rotation.
pub const POSE_THRESHOLDS: (f64, f64) = (0.02, 5.0 * std::f64::consts::PI / 180.0);
/// Labeled-data fractions swept by the sample-efficiency harness.
pub const SWEEP_BUDGETS: [f64; 4] = [0.033, 0.10, 0.33, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Instantaneous 3-axis contact force per window, Newtons.
    Force,
    /// Planar object pose (x, y, heading) at 10 Hz.
    Pose,
    /// Normalized joystick roll/pitch/yaw at 10 Hz.
    Joystick,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Force => "force",
            Task::Pose => "pose",
            Task::Joystick => "joystick",
        }
    }

    pub fn is_sequence(self) -> bool {
        !matches!(self, Task::Force)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Head-only training on a pretrained, frozen encoder.
    Frozen,
    /// Head-only training on a reconstruction-pretrained encoder.
    FrozenMae,
    /// Start from a pretrained encoder, update everything.
    Finetuned,
    /// Random encoder, update everything, no checkpoint involved.
    EndToEnd,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Frozen => "frozen",
            TrainMode::FrozenMae => "frozen_mae",
            TrainMode::Finetuned => "finetuned",
            TrainMode::EndToEnd => "end_to_end",
        }
    }

    pub fn updates_encoder(self) -> bool {
        matches!(self, TrainMode::Finetuned | TrainMode::EndToEnd)
    }

    pub fn needs_checkpoint(self) -> bool {
        !matches!(self, TrainMode::EndToEnd)
    }
}

/// Per-axis affine label normalization, fit on the training split only
/// and carried with the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelNorm {
    pub mean: [f64; LABEL_DIMS],
    pub std: [f64; LABEL_DIMS],
}

impl LabelNorm {
    pub fn fit(labels: &[[f64; LABEL_DIMS]]) -> Result<LabelNorm> {
        if labels.is_empty() {
            return Err(ModelError::InsufficientData("no labels to normalize".into()));
        }
        let n = labels.len() as f64;
        let mut mean = [0.0; LABEL_DIMS];
        for l in labels {
            for d in 0..LABEL_DIMS {
                mean[d] += l[d] / n;
            }
        }
        let mut var = [0.0; LABEL_DIMS];
        for l in labels {
            for d in 0..LABEL_DIMS {
                var[d] += (l[d] - mean[d]).powi(2) / n;
            }
        }
        let std = var.map(|v| v.sqrt().max(1e-6));
        Ok(LabelNorm { mean, std })
    }

    pub fn normalize(&self, l: [f64; LABEL_DIMS]) -> [f64; LABEL_DIMS] {
        std::array::from_fn(|d| (l[d] - self.mean[d]) / self.std[d])
    }

    pub fn denormalize(&self, l: [f64; LABEL_DIMS]) -> [f64; LABEL_DIMS] {
        std::array::from_fn(|d| l[d] * self.std[d] + self.mean[d])
    }
}

// ---------------------------------------------------------------------------
// Task corpora
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TaskEpisode {
    pub stream: CalibratedStream,
    pub joints: Vec<(f64, JointState)>,
    /// Applied force over time (force task), at raw frame times.
    pub force_series: Option<Vec<(f64, [f32; 3])>>,
    /// 10 Hz label steps (pose and joystick tasks).
    pub step_series: Option<Vec<LabeledStep>>,
}

#[derive(Debug, Clone)]
pub struct TaskCorpus {
    pub task: Task,
    pub episodes: Vec<TaskEpisode>,
}

impl TaskCorpus {
    pub fn load(task: Task, manifest_path: &Path, scale: f32) -> Result<TaskCorpus> {
        let (manifest, dir) = read_dataset(manifest_path)?;
        let baseline = read_baseline(&dir)?;
        let mut episodes = Vec::with_capacity(manifest.episodes.len());
        for meta in &manifest.episodes {
            let ep = read_episode(&dir.join(&meta.file))?;
            let cal = subtract_baseline(&ep.raw, &baseline, scale)?;
            let stream = resample_100hz(&cal)?;
            let force_series = ep.labels.per_frame_forces.as_ref().map(|forces| {
                ep.raw.iter().map(|r| r.timestamp).zip(forces.iter().copied()).collect()
            });
            let step_series = match task {
                Task::Force => None,
                Task::Pose => ep.labels.object_pose_se2.clone(),
                Task::Joystick => ep.labels.joystick_rpy.clone(),
            };
            let has_labels = match task {
                Task::Force => force_series.is_some(),
                _ => step_series.is_some(),
            };
            if !has_labels {
                return Err(ModelError::InvalidInput(format!(
                    "episode {} carries no {} labels",
                    meta.file,
                    task.as_str()
                )));
            }
            episodes.push(TaskEpisode { stream, joints: ep.joints, force_series, step_series });
        }
        TaskCorpus::from_episodes(task, episodes)
    }

    pub fn from_episodes(task: Task, episodes: Vec<TaskEpisode>) -> Result<TaskCorpus> {
        if episodes.is_empty() {
            return Err(ModelError::InsufficientData("task corpus needs episodes".into()));
        }
        Ok(TaskCorpus { task, episodes })
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn window(&self, layout: &HandLayout, episode: usize, start: usize) -> Result<TactileWindow> {
        let ep = &self.episodes[episode];
        Ok(window_at(&ep.stream, &ep.joints, layout, start)?)
    }
}

/// One labeled training/eval unit: a window (force) or a run of ten
/// windows (sequence tasks), addressed by episode and start frame.
#[derive(Debug, Clone)]
pub struct TaskSample {
    pub episode: usize,
    pub start: usize,
    /// One label for force; `SEQUENCE_LEN` step labels otherwise.
    pub labels: Vec<[f64; LABEL_DIMS]>,
}

fn nearest_force(series: &[(f64, [f32; 3])], t: f64) -> Option<[f64; LABEL_DIMS]> {
    series
        .iter()
        .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
        .filter(|(ts, _)| (ts - t).abs() <= 0.05)
        .map(|(_, f)| [f64::from(f[0]), f64::from(f[1]), f64::from(f[2])])
}

fn nearest_step(series: &[LabeledStep], t: f64) -> Option<[f64; LABEL_DIMS]> {
    series
        .iter()
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
        .filter(|s| (s.t - t).abs() <= 0.05)
        .map(|s| [f64::from(s.v[0]), f64::from(s.v[1]), f64::from(s.v[2])])
}

fn frame_time(stream: &CalibratedStream, frame: usize) -> f64 {
    stream.frames[frame].timestamp
}

/// Labeled windows for the force task: `per_episode` window starts
/// spread evenly across each episode, each labeled with the applied
/// force at the window's end time.
pub fn force_samples(corpus: &TaskCorpus, per_episode: usize) -> Result<Vec<TaskSample>> {
    if corpus.task != Task::Force {
        return Err(ModelError::InvalidInput("force samples need a force corpus".into()));
    }
    let mut out = Vec::new();
    for (e, ep) in corpus.episodes.iter().enumerate() {
        let series = ep.force_series.as_ref().expect("force corpus has force labels");
        let starts = ep.stream.frames.len().saturating_sub(FRAMES_PER_WINDOW - 1);
        if starts == 0 {
            continue;
        }
        let count = per_episode.min(starts).max(1);
        for i in 0..count {
            let start = if count == 1 { 0 } else { i * (starts - 1) / (count - 1) };
            let t_end = frame_time(&ep.stream, start + FRAMES_PER_WINDOW - 1);
            if let Some(label) = nearest_force(series, t_end) {
                out.push(TaskSample { episode: e, start, labels: vec![label] });
            }
        }
    }
    if out.is_empty() {
        return Err(ModelError::InsufficientData("no labeled force windows".into()));
    }
    Ok(out)
}

/// Labeled one-second runs for the sequence tasks. Runs start one
/// frame in so every window end lands exactly on a 10 Hz label time.
pub fn sequence_samples(corpus: &TaskCorpus) -> Result<Vec<TaskSample>> {
    if !corpus.task.is_sequence() {
        return Err(ModelError::InvalidInput("sequence samples need pose or joystick".into()));
    }
    let span = SEQUENCE_LEN * FRAMES_PER_WINDOW;
    let mut out = Vec::new();
    for (e, ep) in corpus.episodes.iter().enumerate() {
        let series = ep.step_series.as_ref().expect("sequence corpus has step labels");
        let frames = ep.stream.frames.len();
        let mut start = 1;
        while start + span <= frames {
            let mut labels = Vec::with_capacity(SEQUENCE_LEN);
            for i in 0..SEQUENCE_LEN {
                let t_end = frame_time(&ep.stream, start + i * FRAMES_PER_WINDOW + FRAMES_PER_WINDOW - 1);
                match nearest_step(series, t_end) {
                    Some(l) => labels.push(l),
                    None => break,
                }
            }
            if labels.len() == SEQUENCE_LEN {
                out.push(TaskSample { episode: e, start, labels });
            }
            start += span;
        }
    }
    if out.is_empty() {
        return Err(ModelError::InsufficientData("no labeled sequences".into()));
    }
    Ok(out)
}

pub fn samples_for(corpus: &TaskCorpus, windows_per_episode: usize) -> Result<Vec<TaskSample>> {
    match corpus.task {
        Task::Force => force_samples(corpus, windows_per_episode),
        _ => sequence_samples(corpus),
    }
}

// ---------------------------------------------------------------------------
// Decoder parameters and forward passes
// ---------------------------------------------------------------------------

/// Shallow two-layer MLP mapping the pooled token to three outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceHead<S: Scalar> {
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

impl<S: Scalar> ForceHead<S> {
    pub fn init(dim: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        ForceHead {
            w1: fan_in_uniform(&[dim, dim], rng),
            b1: Tensor::zeros(&[dim]),
            w2: fan_in_uniform(&[dim, LABEL_DIMS], rng),
            b2: Tensor::zeros(&[LABEL_DIMS]),
        }
    }

    fn names() -> Vec<String> {
        ["w1", "b1", "w2", "b2"].iter().map(|f| format!("head.{f}")).collect()
    }

    fn flatten(&self) -> Vec<&Tensor<S>> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn flatten_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// One transformer block over the ten pooled step tokens plus a
/// per-step linear readout.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqHead<S: Scalar> {
    pub block: BlockParams<S>,
    pub out_w: Tensor<S>,
    pub out_b: Tensor<S>,
}

impl<S: Scalar> SeqHead<S> {
    pub fn init(dim: usize, mlp_ratio: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        SeqHead {
            block: init_block(dim, mlp_ratio, rng),
            out_w: fan_in_uniform(&[dim, LABEL_DIMS], rng),
            out_b: Tensor::zeros(&[LABEL_DIMS]),
        }
    }

    fn names() -> Vec<String> {
        let mut names: Vec<String> =
            BLOCK_FIELDS.iter().map(|f| format!("head.block.{f}")).collect();
        names.push("head.out_w".into());
        names.push("head.out_b".into());
        names
    }

    fn flatten(&self) -> Vec<&Tensor<S>> {
        let b = &self.block;
        vec![
            &b.ln1_g, &b.ln1_b, &b.qkv_w, &b.qkv_b, &b.proj_w, &b.proj_b, &b.ln2_g, &b.ln2_b,
            &b.mlp1_w, &b.mlp1_b, &b.mlp2_w, &b.mlp2_b, &self.out_w, &self.out_b,
        ]
    }

    fn flatten_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let b = &mut self.block;
        vec![
            &mut b.ln1_g, &mut b.ln1_b, &mut b.qkv_w, &mut b.qkv_b, &mut b.proj_w, &mut b.proj_b,
            &mut b.ln2_g, &mut b.ln2_b, &mut b.mlp1_w, &mut b.mlp1_b, &mut b.mlp2_w, &mut b.mlp2_b,
            &mut self.out_w, &mut self.out_b,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecoderHead<S: Scalar> {
    Force(ForceHead<S>),
    Sequence(SeqHead<S>),
}

impl<S: Scalar> DecoderHead<S> {
    fn names(&self) -> Vec<String> {
        match self {
            DecoderHead::Force(_) => ForceHead::<S>::names(),
            DecoderHead::Sequence(_) => SeqHead::<S>::names(),
        }
    }

    fn flatten(&self) -> Vec<&Tensor<S>> {
        match self {
            DecoderHead::Force(h) => h.flatten(),
            DecoderHead::Sequence(h) => h.flatten(),
        }
    }

    fn flatten_mut(&mut self) -> Vec<&mut Tensor<S>> {
        match self {
            DecoderHead::Force(h) => h.flatten_mut(),
            DecoderHead::Sequence(h) => h.flatten_mut(),
        }
    }
}

/// A trained task decoder: encoder + attentive pooler + task head +
/// the label normalization fit on its training split.
#[derive(Debug, Clone)]
pub struct TaskDecoder {
    pub task: Task,
    pub encoder_cfg: EncoderConfig,
    pub encoder: EncoderParams<f32>,
    pub pool: PoolParams<f32>,
    pub head: DecoderHead<f32>,
    pub norm: LabelNorm,
}

enum BoundHead {
    Force { w1: Var, b1: Var, w2: Var, b2: Var },
    Sequence { block: BoundBlock, out_w: Var, out_b: Var },
}

fn bind_head<S: Scalar>(tape: &mut Tape<S>, head: &DecoderHead<S>) -> BoundHead {
    match head {
        DecoderHead::Force(h) => BoundHead::Force {
            w1: tape.leaf(&h.w1),
            b1: tape.leaf(&h.b1),
            w2: tape.leaf(&h.w2),
            b2: tape.leaf(&h.b2),
        },
        DecoderHead::Sequence(h) => BoundHead::Sequence {
            block: bind_block(tape, &h.block),
            out_w: tape.leaf(&h.out_w),
            out_b: tape.leaf(&h.out_b),
        },
    }
}

fn head_vars(bound: &BoundHead) -> Vec<Var> {
    match bound {
        BoundHead::Force { w1, b1, w2, b2 } => vec![*w1, *b1, *w2, *b2],
        BoundHead::Sequence { block: b, out_w, out_b } => vec![
            b.ln1_g, b.ln1_b, b.qkv_w, b.qkv_b, b.proj_w, b.proj_b, b.ln2_g, b.ln2_b, b.mlp1_w,
            b.mlp1_b, b.mlp2_w, b.mlp2_b, *out_w, *out_b,
        ],
    }
}

/// Encoder features for a full (unmasked) window.
fn window_features<S: Scalar>(
    tape: &mut Tape<S>,
    enc: &BoundEncoder,
    cfg: &EncoderConfig,
    inputs: &WindowInputs<S>,
) -> Var {
    let tok = tape.leaf(&inputs.tokens);
    let oh = tape.leaf(&inputs.pad_oh);
    encode(tape, enc, cfg, tok, oh)
}

/// Pooled window representation -> two-layer MLP -> normalized force.
fn force_out<S: Scalar>(
    tape: &mut Tape<S>,
    pool: &BoundPool,
    head: &BoundHead,
    dim: usize,
    features: Var,
) -> Var {
    let pooled = attentive_pool(tape, pool, features, dim);
    match head {
        BoundHead::Force { w1, b1, w2, b2 } => {
            let h = tape.linear(pooled, *w1, *b1);
            let h = tape.gelu(h);
            tape.linear(h, *w2, *b2)
        }
        BoundHead::Sequence { .. } => unreachable!("force forward with sequence head"),
    }
}

/// Ten pooled windows -> one transformer block -> per-step readout.
fn sequence_out<S: Scalar>(
    tape: &mut Tape<S>,
    pool: &BoundPool,
    head: &BoundHead,
    cfg: &EncoderConfig,
    features: &[Var],
) -> Var {
    let pooled: Vec<Var> =
        features.iter().map(|&f| attentive_pool(tape, pool, f, cfg.dim)).collect();
    let seq = tape.concat_rows(&pooled);
    match head {
        BoundHead::Sequence { block, out_w, out_b } => {
            let mixed = encoder_block(tape, block, seq, cfg.heads);
            tape.linear(mixed, *out_w, *out_b)
        }
        BoundHead::Force { .. } => unreachable!("sequence forward with force head"),
    }
}

fn check_sequence_windows(windows: &[TactileWindow]) -> Result<()> {
    if windows.len() != SEQUENCE_LEN {
        return Err(ModelError::InvalidInput(format!(
            "sequence decoding needs {SEQUENCE_LEN} windows, got {}",
            windows.len()
        )));
    }
    for pair in windows.windows(2) {
        let dt = pair[1].t_end - pair[0].t_end;
        if (dt - 0.1).abs() > 1e-6 {
            return Err(ModelError::InvalidInput(format!(
                "gap in sequence windows: ends {:.4} s apart, want 0.1 s",
                dt
            )));
        }
    }
    Ok(())
}

/// Predict the instantaneous contact force for one window, in Newtons.
pub fn force_predict(
    dec: &TaskDecoder,
    layout: &HandLayout,
    window: &TactileWindow,
) -> Result<[f64; LABEL_DIMS]> {
    if dec.task != Task::Force {
        return Err(ModelError::InvalidInput("decoder was not trained for force".into()));
    }
    let inputs = WindowInputs::<f32>::new(window, layout, &dec.encoder_cfg)?;
    let mut tape: Tape<f32> = Tape::inference();
    let enc = bind_encoder(&mut tape, &dec.encoder);
    let pool = bind_pool(&mut tape, &dec.pool);
    let head = bind_head(&mut tape, &dec.head);
    let feats = window_features(&mut tape, &enc, &dec.encoder_cfg, &inputs);
    let out = force_out(&mut tape, &pool, &head, dec.encoder_cfg.dim, feats);
    let row = tape.value(out).row(0).to_vec();
    Ok(dec.norm.denormalize(std::array::from_fn(|d| f64::from(row[d]))))
}

/// Predict ten labels at 10 Hz from ten contiguous windows spanning
/// one second.
pub fn sequence_predict(
    dec: &TaskDecoder,
    layout: &HandLayout,
    windows: &[TactileWindow],
) -> Result<Vec<[f64; LABEL_DIMS]>> {
    if !dec.task.is_sequence() {
        return Err(ModelError::InvalidInput("decoder was not trained for sequences".into()));
    }
    check_sequence_windows(windows)?;
    let mut tape: Tape<f32> = Tape::inference();
    let enc = bind_encoder(&mut tape, &dec.encoder);
    let pool = bind_pool(&mut tape, &dec.pool);
    let head = bind_head(&mut tape, &dec.head);
    let mut feats = Vec::with_capacity(SEQUENCE_LEN);
    for w in windows {
        let inputs = WindowInputs::<f32>::new(w, layout, &dec.encoder_cfg)?;
        feats.push(window_features(&mut tape, &enc, &dec.encoder_cfg, &inputs));
    }
    let out = sequence_out(&mut tape, &pool, &head, &dec.encoder_cfg, &feats);
    let vals = tape.value(out).clone();
    Ok((0..SEQUENCE_LEN)
        .map(|i| {
            let row = vals.row(i);
            dec.norm.denormalize(std::array::from_fn(|d| f64::from(row[d])))
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Force-task windows sampled per episode.
    pub windows_per_episode: usize,
    /// Encoder shape for end-to-end training (other modes take it from
    /// the checkpoint).
    pub encoder: EncoderConfig,
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            epochs: 100,
            batch_size: 8,
            lr: 1e-4,
            windows_per_episode: 8,
            encoder: EncoderConfig::desk(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskMetrics {
    /// Root mean squared error per output dimension.
    pub rmse: Vec<f64>,
    /// Fraction of pose predictions within both thresholds.
    pub pose_accuracy: Option<f64>,
    pub n_eval: usize,
}

/// floor(budget * episodes): whole episodes only.
pub fn subsample_count(episodes: usize, budget: f64) -> usize {
    (budget * episodes as f64).floor() as usize
}

/// The first floor(budget*n) entries of a seed-keyed permutation, so a
/// smaller budget's subset is always contained in a larger one's.
pub fn subsample_episodes(episodes: usize, budget: f64, seed: u64) -> Result<Vec<usize>> {
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(ModelError::InvalidInput(format!("budget {budget} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..episodes).collect();
    order.shuffle(&mut substream(seed, "subsample"));
    let n = subsample_count(episodes, budget);
    if n == 0 {
        return Err(ModelError::InsufficientData(format!(
            "budget {budget} of {episodes} episodes selects none"
        )));
    }
    order.truncate(n);
    Ok(order)
}

struct Forward<'a> {
    cfg: &'a EncoderConfig,
    /// Pre-encoded features per (episode, start window), for frozen
    /// modes; None trains through the encoder.
    cache: Option<HashMap<(usize, usize), Tensor<f32>>>,
}

fn sample_window_starts(task: Task, sample: &TaskSample) -> Vec<(usize, usize)> {
    match task {
        Task::Force => vec![(sample.episode, sample.start)],
        _ => (0..SEQUENCE_LEN)
            .map(|i| (sample.episode, sample.start + i * FRAMES_PER_WINDOW))
            .collect(),
    }
}

impl<'a> Forward<'a> {
    /// Feature rows for one window: cached constant or encoder forward.
    fn features(
        &self,
        tape: &mut Tape<f32>,
        enc: &BoundEncoder,
        corpus: &TaskCorpus,
        layout: &HandLayout,
        key: (usize, usize),
    ) -> Result<Var> {
        if let Some(cache) = &self.cache {
            let t = cache.get(&key).expect("cached features for every training window");
            return Ok(tape.leaf_owned(t.clone()));
        }
        let window = corpus.window(layout, key.0, key.1)?;
        let inputs = WindowInputs::<f32>::new(&window, layout, self.cfg)?;
        let tok = tape.leaf_owned(inputs.tokens);
        let oh = tape.leaf_owned(inputs.pad_oh);
        Ok(encode(tape, enc, self.cfg, tok, oh))
    }
}

/// Train a decoder for `task` under `mode` on a whole-episode subset
/// of `corpus` chosen by `budget` and `seed`. Returns the decoder and
/// its final metrics over the training samples (evaluation on held-out
/// data is `eval_task`).
pub fn train_task(
    task: Task,
    mode: TrainMode,
    corpus: &TaskCorpus,
    layout: &HandLayout,
    budget: f64,
    seed: u64,
    spec: &TrainSpec,
) -> Result<(TaskDecoder, TaskMetrics)> {
    if corpus.task != task {
        return Err(ModelError::InvalidInput(format!(
            "corpus carries {} labels, task is {}",
            corpus.task.as_str(),
            task.as_str()
        )));
    }
    if mode.needs_checkpoint() && spec.checkpoint.is_none() {
        return Err(ModelError::InvalidInput(format!(
            "{} mode needs a pretraining checkpoint",
            mode.as_str()
        )));
    }
    if !mode.needs_checkpoint() && spec.checkpoint.is_some() {
        return Err(ModelError::InvalidInput(
            "end-to-end training never reads a pretraining checkpoint".into(),
        ));
    }

    let chosen = subsample_episodes(corpus.episode_count(), budget, seed)?;
    let all_samples = samples_for(corpus, spec.windows_per_episode)?;
    let samples: Vec<&TaskSample> =
        all_samples.iter().filter(|s| chosen.contains(&s.episode)).collect();
    if samples.is_empty() {
        return Err(ModelError::InsufficientData(
            "selected episodes contain no labeled samples".into(),
        ));
    }

    // label normalization from the training split only
    let all_labels: Vec<[f64; LABEL_DIMS]> =
        samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
    let norm = LabelNorm::fit(&all_labels)?;

    let (encoder_cfg, encoder) = match mode.needs_checkpoint() {
        true => {
            let path = spec.checkpoint.as_ref().expect("checked above");
            let (pretrain_cfg, params) = load_pretrained_encoder(path)?;
            (pretrain_cfg.encoder, params)
        }
        false => (spec.encoder.clone(), init_encoder(&spec.encoder, seed)),
    };
    encoder_cfg.validate()?;

    let mut rng = substream(seed, "decoder");
    let pool = PoolParams::init(encoder_cfg.dim, &mut rng);
    let head = match task {
        Task::Force => DecoderHead::Force(ForceHead::init(encoder_cfg.dim, &mut rng)),
        _ => DecoderHead::Sequence(SeqHead::init(encoder_cfg.dim, encoder_cfg.mlp_ratio, &mut rng)),
    };
    let mut dec =
        TaskDecoder { task, encoder_cfg: encoder_cfg.clone(), encoder, pool, head, norm };

    // frozen modes never touch the encoder again: encode every
    // training window once and train on the cached features
    let cache = if mode.updates_encoder() {
        None
    } else {
        let mut map = HashMap::new();
        for s in &samples {
            for key in sample_window_starts(task, s) {
                if let std::collections::hash_map::Entry::Vacant(e) = map.entry(key) {
                    let window = corpus.window(layout, key.0, key.1)?;
                    let inputs = WindowInputs::<f32>::new(&window, layout, &encoder_cfg)?;
                    let mut tape: Tape<f32> = Tape::inference();
                    let enc = bind_encoder(&mut tape, &dec.encoder);
                    let f = window_features(&mut tape, &enc, &encoder_cfg, &inputs);
                    e.insert(tape.value(f).clone());
                }
            }
        }
        Some(map)
    };
    let forward = Forward { cfg: &encoder_cfg, cache };

    let steps_per_epoch = samples.len().div_ceil(spec.batch_size);
    let sched = Schedules::for_run(spec.epochs * steps_per_epoch, 0, spec.lr);

    let mut opt = {
        let mut params: Vec<&Tensor<f32>> = Vec::new();
        if mode.updates_encoder() {
            params.extend(dec.encoder.flatten());
        }
        params.extend(dec.pool.flatten());
        params.extend(dec.head.flatten());
        AdamW::new(&params)
    };

    let mut step = 0usize;
    for epoch in 0..spec.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut substream_indexed(seed, "order", epoch as u64));
        for batch in order.chunks(spec.batch_size) {
            let mut tape: Tape<f32> = Tape::new();
            let enc = bind_encoder(&mut tape, &dec.encoder);
            let pool = bind_pool(&mut tape, &dec.pool);
            let head = bind_head(&mut tape, &dec.head);
            let mut vars: Vec<Var> = Vec::new();
            if mode.updates_encoder() {
                vars.extend(enc.flatten());
            }
            vars.extend([pool.query, pool.out_w, pool.out_b]);
            vars.extend(head_vars(&head));
            let mark = tape.mark();

            let mut grad_acc: Vec<Option<Tensor<f32>>> = vec![None; vars.len()];
            let inv = 1.0 / batch.len() as f64;
            for &si in batch {
                let s = samples[si];
                let out = match task {
                    Task::Force => {
                        let f = forward.features(
                            &mut tape,
                            &enc,
                            corpus,
                            layout,
                            (s.episode, s.start),
                        )?;
                        force_out(&mut tape, &pool, &head, encoder_cfg.dim, f)
                    }
                    _ => {
                        let mut feats = Vec::with_capacity(SEQUENCE_LEN);
                        for key in sample_window_starts(task, s) {
                            feats.push(forward.features(&mut tape, &enc, corpus, layout, key)?);
                        }
                        sequence_out(&mut tape, &pool, &head, &encoder_cfg, &feats)
                    }
                };
                let rows = s.labels.len();
                let mut target = Vec::with_capacity(rows * LABEL_DIMS);
                for l in &s.labels {
                    target.extend(dec.norm.normalize(*l).map(|v| v as f32));
                }
                let t = tape.leaf_owned(Tensor::new(&[rows, LABEL_DIMS], target));
                let diff = tape.sub(out, t);
                let sq = tape.mul(diff, diff);
                let mse = tape.mean_all(sq);
                let mut grads = tape.backward(mse);
                for (i, v) in vars.iter().enumerate() {
                    if let Some(g) = grads.take(*v) {
                        accumulate_grad(&mut grad_acc[i], &g, inv);
                    }
                }
                tape.truncate(mark);
            }
            let mut params: Vec<&mut Tensor<f32>> = Vec::new();
            if mode.updates_encoder() {
                params.extend(dec.encoder.flatten_mut());
            }
            params.extend(dec.pool.flatten_mut());
            params.extend(dec.head.flatten_mut());
            opt.step(&mut params, &grad_acc, sched.lr(step), 0.0);
            step += 1;
        }
    }

    let owned: Vec<TaskSample> = samples.into_iter().cloned().collect();
    let metrics = metrics_over(&dec, corpus, layout, &owned)?;
    Ok((dec, metrics))
}

fn accumulate_grad(slot: &mut Option<Tensor<f32>>, g: &Tensor<f32>, scale: f64) {
    match slot {
        None => {
            let mut t = g.clone();
            for v in t.data_mut() {
                *v = (f64::from(*v) * scale) as f32;
            }
            *slot = Some(t);
        }
        Some(acc) => {
            for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += (f64::from(v) * scale) as f32;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

fn predictions_for(
    dec: &TaskDecoder,
    corpus: &TaskCorpus,
    layout: &HandLayout,
    sample: &TaskSample,
) -> Result<Vec<[f64; LABEL_DIMS]>> {
    match dec.task {
        Task::Force => {
            let w = corpus.window(layout, sample.episode, sample.start)?;
            Ok(vec![force_predict(dec, layout, &w)?])
        }
        _ => {
            let windows: Vec<TactileWindow> = sample_window_starts(dec.task, sample)
                .into_iter()
                .map(|(e, s)| corpus.window(layout, e, s))
                .collect::<Result<_>>()?;
            sequence_predict(dec, layout, &windows)
        }
    }
}

/// RMSE per output dimension; the pose heading dimension compares
/// wrapped angle differences.
fn rmse_rows(
    task: Task,
    preds: &[[f64; LABEL_DIMS]],
    labels: &[[f64; LABEL_DIMS]],
) -> Vec<f64> {
    assert_eq!(preds.len(), labels.len());
    let n = preds.len() as f64;
    let mut acc = [0.0; LABEL_DIMS];
    for (p, l) in preds.iter().zip(labels) {
        for d in 0..LABEL_DIMS {
            let err = if task == Task::Pose && d == 2 {
                wrap_angle(p[d] - l[d])
            } else {
                p[d] - l[d]
            };
            acc[d] += err * err;
        }
    }
    acc.iter().map(|&s| (s / n).sqrt()).collect()
}

fn pose_hits(preds: &[[f64; LABEL_DIMS]], labels: &[[f64; LABEL_DIMS]]) -> usize {
    preds
        .iter()
        .zip(labels)
        .filter(|(p, l)| {
            let dxy = ((p[0] - l[0]).powi(2) + (p[1] - l[1]).powi(2)).sqrt();
            let dth = wrap_angle(p[2] - l[2]).abs();
            dxy <= POSE_THRESHOLDS.0 && dth <= POSE_THRESHOLDS.1
        })
        .count()
}

fn metrics_over(
    dec: &TaskDecoder,
    corpus: &TaskCorpus,
    layout: &HandLayout,
    samples: &[TaskSample],
) -> Result<TaskMetrics> {
    if samples.is_empty() {
        return Err(ModelError::InsufficientData("nothing to evaluate".into()));
    }
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for s in samples {
        preds.extend(predictions_for(dec, corpus, layout, s)?);
        labels.extend(s.labels.iter().copied());
    }
    let rmse = rmse_rows(dec.task, &preds, &labels);
    let pose_accuracy = (dec.task == Task::Pose)
        .then(|| pose_hits(&preds, &labels) as f64 / preds.len() as f64);
    Ok(TaskMetrics { rmse, pose_accuracy, n_eval: preds.len() })
}

/// Per-dimension RMSE (and pose accuracy) of a decoder over every
/// labeled sample in `corpus`.
pub fn eval_task(
    dec: &TaskDecoder,
    corpus: &TaskCorpus,
    layout: &HandLayout,
    windows_per_episode: usize,
) -> Result<TaskMetrics> {
    if corpus.task != dec.task {
        return Err(ModelError::InvalidInput("evaluation corpus is for a different task".into()));
    }
    let samples = samples_for(corpus, windows_per_episode)?;
    metrics_over(dec, corpus, layout, &samples)
}

// ---------------------------------------------------------------------------
// Sample-efficiency sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub task: String,
    pub mode: String,
    pub budget: f64,
    pub seed: u64,
    pub metric: String,
    pub dim: usize,
    pub value: f64,
}

pub struct SweepInputs<'a> {
    pub train: &'a TaskCorpus,
    pub eval: &'a TaskCorpus,
    pub layout: &'a HandLayout,
    pub spec: TrainSpec,
    /// Checkpoint for Frozen and Finetuned cells.
    pub distill_checkpoint: Option<PathBuf>,
    /// Checkpoint for FrozenMae cells.
    pub mae_checkpoint: Option<PathBuf>,
}

/// Train and evaluate every (mode, budget, seed) cell; one row per
/// metric dimension per cell.
pub fn sample_efficiency_sweep(
    task: Task,
    modes: &[TrainMode],
    budgets: &[f64],
    seeds: &[u64],
    inputs: &SweepInputs,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &mode in modes {
        let mut spec = inputs.spec.clone();
        spec.checkpoint = match mode {
            TrainMode::Frozen | TrainMode::Finetuned => inputs.distill_checkpoint.clone(),
            TrainMode::FrozenMae => inputs.mae_checkpoint.clone(),
            TrainMode::EndToEnd => None,
        };
        for &budget in budgets {
            for &seed in seeds {
                let (dec, _) =
                    train_task(task, mode, inputs.train, inputs.layout, budget, seed, &spec)?;
                let m = eval_task(&dec, inputs.eval, inputs.layout, spec.windows_per_episode)?;
                for (dim, &value) in m.rmse.iter().enumerate() {
                    rows.push(SweepRow {
                        task: task.as_str().into(),
                        mode: mode.as_str().into(),
                        budget,
                        seed,
                        metric: "rmse".into(),
                        dim,
                        value,
                    });
                }
                if let Some(acc) = m.pose_accuracy {
                    rows.push(SweepRow {
                        task: task.as_str().into(),
                        mode: mode.as_str().into(),
                        budget,
                        seed,
                        metric: "pose_accuracy".into(),
                        dim: 0,
                        value: acc,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("task,mode,budget,seed,metric,dim,value\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.task, r.mode, r.budget, r.seed, r.metric, r.dim, r.value
        ));
    }
    out
}
