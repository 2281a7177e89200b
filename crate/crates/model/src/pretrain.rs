//! Pretraining driver: batches of masked window views, one optimizer
//! step at a time, with per-step metrics, online probes at every epoch
//! boundary, atomic epoch checkpoints, and exact resume. All sampling
//! derives from named substreams of the run seed, so a resumed run
//! replays the interrupted run bit for bit.

use crate::checkpoint::Checkpoint;
use crate::corpus::PlayCorpus;
use crate::encoder::{bind_encoder, init_encoder, EncoderConfig, EncoderParams};
use crate::error::{ModelError, Result};
use crate::mask::{build_views, make_block_mask, TaxelGraph, ViewSpec};
use crate::optim::{AdamW, Schedules};
use crate::probes::{
    classifier_accuracy, mean_flux_target, regressor_mse, train_classifier_probe,
    train_regressor_probe, LinearProbe,
};
use crate::ssl::{
    bind_mae, distillation_loss, ema_update, mae_loss, mean_class_entropy,
    teacher_global_logits, teacher_targets, update_center, CenterAccumulator, LossReport,
    MaeParams, WindowInputs,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use skinssl_sim::hand::HandLayout;
use skinssl_sim::rng::{substream, substream_indexed};
use skinssl_tensor::{Tape, Tensor};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const CHECKPOINT_FILE: &str = "checkpoint.skcp";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Student matches a momentum teacher's prototype distributions.
    Distill,
    /// Masked reconstruction of hidden taxel flux.
    Mae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub views: ViewSpec,
    pub objective: Objective,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub seed: u64,
    /// Windows held aside for the online probes.
    pub probe_windows: usize,
    /// Probe optimizer epochs per evaluation pass.
    pub probe_epochs: usize,
    /// Retention range for reconstruction masks.
    pub mae_retention: (f64, f64),
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            encoder: EncoderConfig::desk(),
            views: ViewSpec::default(),
            objective: Objective::Distill,
            epochs: 50,
            warmup_epochs: 15,
            steps_per_epoch: 25,
            batch_size: 8,
            peak_lr: 1e-4,
            seed: 0,
            probe_windows: 256,
            probe_epochs: 40,
            mae_retention: (0.25, 0.75),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.views.validate()?;
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(ModelError::InvalidInput("epochs, steps, and batch must be positive".into()));
        }
        if self.probe_windows < 8 {
            return Err(ModelError::InvalidInput("probes need at least 8 windows".into()));
        }
        let (lo, hi) = self.mae_retention;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(ModelError::InvalidInput(
                "reconstruction retention must lie inside (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn schedules(&self) -> Schedules {
        Schedules::for_run(
            self.epochs * self.steps_per_epoch,
            self.warmup_epochs * self.steps_per_epoch,
            self.peak_lr,
        )
    }
}

/// One optimizer step's logged values.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub wd: f64,
    pub ema_m: Option<f64>,
    pub report: LossReport,
    pub probe_recon_mse: Option<f64>,
    pub probe_cls_acc: Option<f64>,
}

#[derive(Serialize)]
struct DistillLine {
    step: usize,
    epoch: usize,
    lr: f64,
    wd: f64,
    ema_m: f64,
    loss_total: f64,
    loss_class: f64,
    loss_patch: f64,
    teacher_entropy: f64,
    probe_recon_mse: Option<f64>,
    probe_cls_acc: Option<f64>,
}

#[derive(Serialize)]
struct MaeLine {
    step: usize,
    epoch: usize,
    lr: f64,
    wd: f64,
    loss_total: f64,
    mae_mse: f64,
    probe_recon_mse: Option<f64>,
    probe_cls_acc: Option<f64>,
}

impl StepRecord {
    pub fn metrics_line(&self) -> String {
        match self.report {
            LossReport::Distill { total, class, patch, teacher_entropy } => {
                serde_json::to_string(&DistillLine {
                    step: self.step,
                    epoch: self.epoch,
                    lr: self.lr,
                    wd: self.wd,
                    ema_m: self.ema_m.unwrap_or(f64::NAN),
                    loss_total: total,
                    loss_class: class,
                    loss_patch: patch,
                    teacher_entropy,
                    probe_recon_mse: self.probe_recon_mse,
                    probe_cls_acc: self.probe_cls_acc,
                })
            }
            LossReport::Mae { mse } => serde_json::to_string(&MaeLine {
                step: self.step,
                epoch: self.epoch,
                lr: self.lr,
                wd: self.wd,
                loss_total: mse,
                mae_mse: mse,
                probe_recon_mse: self.probe_recon_mse,
                probe_cls_acc: self.probe_cls_acc,
            }),
        }
        .expect("metrics line serializes")
    }
}

#[derive(Debug)]
pub struct PretrainReport {
    pub records: Vec<StepRecord>,
    pub checkpoint: PathBuf,
    pub final_probe_cls_acc: Option<f64>,
    pub final_probe_recon_mse: Option<f64>,
}

pub struct Trainer<'a> {
    cfg: PretrainConfig,
    corpus: &'a PlayCorpus,
    layout: &'a HandLayout,
    sched: Schedules,
    pub(crate) student: EncoderParams<f32>,
    pub(crate) teacher: Option<EncoderParams<f32>>,
    center: Option<Tensor<f64>>,
    mae: Option<MaeParams<f32>>,
    opt: AdamW,
    pub(crate) step: usize,
    pub(crate) epoch: usize,
    probe_cls: Option<LinearProbe<f32>>,
    probe_rec: LinearProbe<f32>,
    probe_cls_acc: Option<f64>,
    probe_recon_mse: Option<f64>,
    probe_set: Vec<(usize, usize)>,
}

fn accumulate(slot: &mut Option<Tensor<f32>>, g: &Tensor<f32>, scale: f64) {
    match slot {
        None => {
            let mut t = g.clone();
            for v in t.data_mut() {
                *v = (f64::from(*v) * scale) as f32;
            }
            *slot = Some(t);
        }
        Some(acc) => {
            let gd = g.data();
            for (a, &v) in acc.data_mut().iter_mut().zip(gd) {
                *a += (f64::from(v) * scale) as f32;
            }
        }
    }
}

fn grad_norm(grads: &[Option<Tensor<f32>>]) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter().flatten() {
        for &v in g.data() {
            sq += f64::from(v) * f64::from(v);
        }
    }
    sq.sqrt()
}

fn rows_slice(t: &Tensor<f32>, r0: usize, r1: usize) -> Tensor<f32> {
    let (_, cols) = t.rows_cols();
    Tensor::new(&[r1 - r0, cols], t.data()[r0 * cols..r1 * cols].to_vec())
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: &PretrainConfig,
        corpus: &'a PlayCorpus,
        layout: &'a HandLayout,
    ) -> Result<Trainer<'a>> {
        cfg.validate()?;
        let student = init_encoder::<f32>(&cfg.encoder, cfg.seed);
        let (teacher, center, mae) = match cfg.objective {
            Objective::Distill => (
                Some(student.clone()),
                Some(Tensor::zeros(&[cfg.encoder.prototypes])),
                None,
            ),
            Objective::Mae => (None, None, Some(MaeParams::init(&cfg.encoder, cfg.seed))),
        };
        let n_params = student.flatten().len() + mae.as_ref().map_or(0, |m| m.flatten().len());
        let opt = {
            let mut all: Vec<&Tensor<f32>> = student.flatten();
            if let Some(m) = &mae {
                all.extend(m.flatten());
            }
            debug_assert_eq!(all.len(), n_params);
            AdamW::new(&all)
        };
        let classes = corpus.class_count();
        let probe_cls = (classes >= 2).then(|| LinearProbe::zeros(cfg.encoder.dim, classes));
        let probe_rec = LinearProbe::zeros(cfg.encoder.dim, 3 * cfg.encoder.frames);
        let probe_set = Self::pick_probe_set(cfg, corpus);
        Ok(Trainer {
            cfg: cfg.clone(),
            corpus,
            layout,
            sched: cfg.schedules(),
            student,
            teacher,
            center,
            mae,
            opt,
            step: 0,
            epoch: 0,
            probe_cls,
            probe_rec,
            probe_cls_acc: None,
            probe_recon_mse: None,
            probe_set,
        })
    }

    fn pick_probe_set(cfg: &PretrainConfig, corpus: &PlayCorpus) -> Vec<(usize, usize)> {
        let mut rng = substream(cfg.seed, "probe");
        (0..cfg.probe_windows)
            .map(|_| {
                let ep = rng.gen_range(0..corpus.episode_count());
                let start = rng.gen_range(0..corpus.window_starts(ep));
                (ep, start)
            })
            .collect()
    }

    pub fn current_epoch(&self) -> usize {
        self.epoch
    }

    pub fn probe_values(&self) -> (Option<f64>, Option<f64>) {
        (self.probe_cls_acc, self.probe_recon_mse)
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = self.student.names();
        if let Some(m) = &self.mae {
            names.extend(m.names());
        }
        names
    }

    /// One optimizer step: a batch of windows, per-window backward with
    /// tape reuse, averaged gradients, then parameter/teacher/center
    /// updates in that order.
    fn step_once(&mut self, rng: &mut ChaCha8Rng) -> Result<StepRecord> {
        let lr = self.sched.lr(self.step);
        let wd = self.sched.wd(self.step);
        let batch = self.cfg.batch_size;
        let inv_b = 1.0 / batch as f64;
        let n_global = self.cfg.views.n_global;

        let mut tape: Tape<f32> = Tape::new();
        let bound = bind_encoder(&mut tape, &self.student);
        let bound_mae = self.mae.as_ref().map(|m| bind_mae(&mut tape, m));
        let mut vars = bound.flatten();
        if let Some(bm) = &bound_mae {
            vars.extend([bm.mask_token]);
            for b in &bm.blocks {
                vars.extend([
                    b.ln1_g, b.ln1_b, b.qkv_w, b.qkv_b, b.proj_w, b.proj_b, b.ln2_g, b.ln2_b,
                    b.mlp1_w, b.mlp1_b, b.mlp2_w, b.mlp2_b,
                ]);
            }
            vars.extend([bm.ln_g, bm.ln_b, bm.out_w, bm.out_b]);
        }
        let mark = tape.mark();

        let mut grad_acc: Vec<Option<Tensor<f32>>> = vec![None; vars.len()];
        let mut center_acc = self.center.as_ref().map(|c| CenterAccumulator::new(c.len()));
        let mut retentions: Vec<f64> = Vec::new();
        let mut class_rows: Vec<Tensor<f32>> = Vec::new();
        let (mut total, mut class, mut patch) = (0.0, 0.0, 0.0);

        for _ in 0..batch {
            let ep = rng.gen_range(0..self.corpus.episode_count());
            let start = rng.gen_range(0..self.corpus.window_starts(ep));
            let window = self.corpus.window(self.layout, ep, start)?;
            let inputs = WindowInputs::<f32>::new(&window, self.layout, &self.cfg.encoder)?;
            let graph = TaxelGraph::from_window(&window);

            let loss_var = match self.cfg.objective {
                Objective::Distill => {
                    let views = build_views(&graph, &self.cfg.views, rng)?;
                    retentions.extend(views.iter().map(|v| v.retention));
                    let teacher = self.teacher.as_ref().expect("distillation has a teacher");
                    let center = self.center.as_ref().expect("distillation has a center");
                    let logits = teacher_global_logits(
                        teacher,
                        &self.cfg.encoder,
                        &inputs,
                        &views[..n_global],
                    );
                    let targets: Vec<Tensor<f32>> = logits
                        .iter()
                        .map(|l| teacher_targets(l, center, self.sched.teacher_temp))
                        .collect();
                    let acc = center_acc.as_mut().expect("center accumulator exists");
                    for l in &logits {
                        acc.add(l);
                    }
                    let k = self.cfg.encoder.prototypes;
                    for t in &targets {
                        class_rows.push(Tensor::new(&[1, k], t.row(0).to_vec()));
                    }
                    let parts = distillation_loss(
                        &mut tape,
                        &bound,
                        &self.cfg.encoder,
                        &inputs,
                        &views,
                        n_global,
                        &targets,
                        self.sched.student_temp,
                        self.sched.patch_weight,
                    )?;
                    total += parts.total_value(self.sched.patch_weight) * inv_b;
                    class += parts.class_value * inv_b;
                    patch += parts.patch_value * inv_b;
                    parts.loss
                }
                Objective::Mae => {
                    let (lo, hi) = self.cfg.mae_retention;
                    let r = if lo == hi { lo } else { rng.gen_range(lo..hi) };
                    let view = make_block_mask(&graph, r, rng)?;
                    retentions.push(view.retention);
                    let parts = mae_loss(
                        &mut tape,
                        &bound,
                        bound_mae.as_ref().expect("reconstruction has a decoder"),
                        &self.cfg.encoder,
                        &inputs,
                        &view,
                    )?;
                    total += parts.value * inv_b;
                    parts.loss
                }
            };

            let window_loss = tape.value(loss_var).item();
            if !f64::from(window_loss).is_finite() {
                return Err(self.non_finite_error("loss", f64::from(window_loss), &retentions, &grad_acc));
            }
            let mut grads = tape.backward(loss_var);
            for (i, v) in vars.iter().enumerate() {
                if let Some(g) = grads.take(*v) {
                    accumulate(&mut grad_acc[i], &g, inv_b);
                }
            }
            tape.truncate(mark);
        }

        for (g, name) in grad_acc.iter().zip(self.param_names()) {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(self.non_finite_error(
                        &format!("gradient of {name}"),
                        f64::NAN,
                        &retentions,
                        &grad_acc,
                    ));
                }
            }
        }

        {
            let mut params: Vec<&mut Tensor<f32>> = self.student.flatten_mut();
            if let Some(m) = &mut self.mae {
                params.extend(m.flatten_mut());
            }
            self.opt.step(&mut params, &grad_acc, lr, wd);
        }

        let ema_m = match self.cfg.objective {
            Objective::Distill => {
                let m = self.sched.ema_momentum(self.step);
                ema_update(self.teacher.as_mut().expect("teacher"), &self.student, m);
                let acc = center_acc.expect("center accumulator");
                update_center(
                    self.center.as_mut().expect("center"),
                    &acc.mean()?,
                    self.sched.center_momentum,
                );
                Some(m)
            }
            Objective::Mae => None,
        };

        let report = match self.cfg.objective {
            Objective::Distill => LossReport::Distill {
                total,
                class,
                patch,
                teacher_entropy: mean_class_entropy(&class_rows),
            },
            Objective::Mae => LossReport::Mae { mse: total },
        };
        let rec = StepRecord {
            step: self.step,
            epoch: self.epoch,
            lr,
            wd,
            ema_m,
            report,
            probe_recon_mse: self.probe_recon_mse,
            probe_cls_acc: self.probe_cls_acc,
        };
        self.step += 1;
        Ok(rec)
    }

    fn non_finite_error(
        &self,
        what: &str,
        value: f64,
        retentions: &[f64],
        grads: &[Option<Tensor<f32>>],
    ) -> ModelError {
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &r in retentions {
            lo = lo.min(r);
            hi = hi.max(r);
            sum += r;
        }
        let stats = if retentions.is_empty() {
            "none".to_string()
        } else {
            format!(
                "{} views, retention min {:.3} mean {:.3} max {:.3}",
                retentions.len(),
                lo,
                sum / retentions.len() as f64,
                hi
            )
        };
        ModelError::NonFinite(format!(
            "non-finite {what} ({value}) at step {}: views so far: {stats}; accumulated grad norm {:.3e}",
            self.step,
            grad_norm(grads)
        ))
    }

    /// Re-encode the probe windows and refresh both probes. The probes
    /// persist across epochs, so each pass warm-starts from the last.
    pub fn probe_pass(&mut self) -> Result<()> {
        let params = self.teacher.as_ref().unwrap_or(&self.student);
        let cfg = &self.cfg.encoder;
        let all: Vec<usize> = (0..cfg.taxels).collect();
        let n = self.probe_set.len();
        let mut feats = Vec::with_capacity(n * cfg.dim);
        let mut rec_targets = Vec::with_capacity(n * 3 * cfg.frames);
        let mut labels: Option<Vec<usize>> = Some(Vec::with_capacity(n));
        for &(ep, start) in &self.probe_set {
            let window = self.corpus.window(self.layout, ep, start)?;
            let inputs = WindowInputs::<f32>::new(&window, self.layout, cfg)?;
            let mut tape: Tape<f32> = Tape::inference();
            let bound = bind_encoder(&mut tape, params);
            let (f, _) = crate::ssl::view_forward(&mut tape, &bound, cfg, &inputs, &all);
            feats.extend_from_slice(tape.value(f).row(0));
            rec_targets.extend(mean_flux_target::<f32>(&window, cfg.frames));
            match (self.corpus.episodes[ep].object_class, &mut labels) {
                (Some(c), Some(l)) => l.push(c as usize),
                _ => labels = None,
            }
        }
        let feats = Tensor::new(&[n, cfg.dim], feats);
        let rec_targets = Tensor::new(&[n, 3 * cfg.frames], rec_targets);

        let n_train = (n * 3) / 4;
        let train_f = rows_slice(&feats, 0, n_train);
        let eval_f = rows_slice(&feats, n_train, n);
        let train_r = rows_slice(&rec_targets, 0, n_train);
        let eval_r = rows_slice(&rec_targets, n_train, n);

        train_regressor_probe(&mut self.probe_rec, &train_f, &train_r, self.cfg.probe_epochs, 0.02)?;
        self.probe_recon_mse = Some(regressor_mse(&self.probe_rec, &eval_f, &eval_r));

        if let (Some(probe), Some(labels)) = (&mut self.probe_cls, &labels) {
            let classes = probe.w.rows_cols().1;
            let train_l = &labels[..n_train];
            match train_classifier_probe(probe, &train_f, train_l, classes, self.cfg.probe_epochs, 0.05)
            {
                Ok(_) => {
                    self.probe_cls_acc =
                        Some(classifier_accuracy(probe, &eval_f, &labels[n_train..]));
                }
                Err(ModelError::DegenerateLabels(_)) => self.probe_cls_acc = None,
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = json!({
            "format": "pretrain-state",
            "objective": serde_json::to_value(self.cfg.objective)?,
            "config": serde_json::to_value(&self.cfg)?,
            "step": self.step,
            "epoch": self.epoch,
            "adam_t": self.opt.t,
            "probe_cls_acc": self.probe_cls_acc,
            "probe_recon_mse": self.probe_recon_mse,
        });
        let mut ckpt = Checkpoint::new(meta);
        for (name, t) in self.student.names().iter().zip(self.student.flatten()) {
            ckpt.insert_f32(format!("student.{name}"), t);
        }
        if let Some(teacher) = &self.teacher {
            for (name, t) in teacher.names().iter().zip(teacher.flatten()) {
                ckpt.insert_f32(format!("teacher.{name}"), t);
            }
        }
        if let Some(center) = &self.center {
            ckpt.insert_f64("center", center);
        }
        if let Some(mae) = &self.mae {
            for (name, t) in mae.names().iter().zip(mae.flatten()) {
                ckpt.insert_f32(name.clone(), t);
            }
        }
        if let Some(p) = &self.probe_cls {
            ckpt.insert_f32("probe_cls.w", &p.w);
            ckpt.insert_f32("probe_cls.b", &p.b);
        }
        ckpt.insert_f32("probe_rec.w", &self.probe_rec.w);
        ckpt.insert_f32("probe_rec.b", &self.probe_rec.b);
        for (name, m) in self.param_names().iter().zip(&self.opt.m) {
            ckpt.insert_f64(format!("adam.m.{name}"), m);
        }
        for (name, v) in self.param_names().iter().zip(&self.opt.v) {
            ckpt.insert_f64(format!("adam.v.{name}"), v);
        }
        ckpt.save(path)
    }

    pub fn resume(
        cfg: &PretrainConfig,
        corpus: &'a PlayCorpus,
        layout: &'a HandLayout,
        path: &Path,
    ) -> Result<Trainer<'a>> {
        let ckpt = Checkpoint::load(path)?;
        let stored: PretrainConfig = serde_json::from_value(
            ckpt.meta
                .get("config")
                .cloned()
                .ok_or_else(|| ModelError::Checkpoint("missing config in checkpoint".into()))?,
        )?;
        if *cfg != stored {
            return Err(ModelError::Checkpoint(
                "checkpoint was trained with a different configuration".into(),
            ));
        }
        let mut t = Trainer::new(cfg, corpus, layout)?;
        t.step = ckpt.meta_u64("step")? as usize;
        t.epoch = ckpt.meta_u64("epoch")? as usize;
        t.opt.t = ckpt.meta_u64("adam_t")?;
        t.probe_cls_acc = ckpt.meta.get("probe_cls_acc").and_then(|v| v.as_f64());
        t.probe_recon_mse = ckpt.meta.get("probe_recon_mse").and_then(|v| v.as_f64());

        read_params(&ckpt, "student.", &mut t.student)?;
        if let Some(teacher) = &mut t.teacher {
            read_params(&ckpt, "teacher.", teacher)?;
        }
        if let Some(center) = &mut t.center {
            let c = ckpt.get_f64("center")?;
            check_shape("center", &c, center.shape())?;
            *center = c;
        }
        if let Some(mae) = &mut t.mae {
            for (name, slot) in mae.names().iter().zip(mae.flatten_mut()) {
                let tensor = ckpt.get_f32(name)?;
                check_shape(name, &tensor, slot.shape())?;
                *slot = tensor;
            }
        }
        if let Some(p) = &mut t.probe_cls {
            if ckpt.names().any(|n| n == "probe_cls.w") {
                let w = ckpt.get_f32("probe_cls.w")?;
                check_shape("probe_cls.w", &w, p.w.shape())?;
                p.w = w;
                p.b = ckpt.get_f32("probe_cls.b")?;
            }
        }
        let w = ckpt.get_f32("probe_rec.w")?;
        check_shape("probe_rec.w", &w, t.probe_rec.w.shape())?;
        t.probe_rec.w = w;
        t.probe_rec.b = ckpt.get_f32("probe_rec.b")?;
        for (i, name) in t.param_names().iter().enumerate() {
            let m = ckpt.get_f64(&format!("adam.m.{name}"))?;
            check_shape(name, &m, t.opt.m[i].shape())?;
            t.opt.m[i] = m;
            let v = ckpt.get_f64(&format!("adam.v.{name}"))?;
            t.opt.v[i] = v;
        }
        Ok(t)
    }

    pub fn run_epoch(&mut self, records: &mut Vec<StepRecord>) -> Result<()> {
        let mut rng = substream_indexed(self.cfg.seed, "epoch", self.epoch as u64);
        for _ in 0..self.cfg.steps_per_epoch {
            let rec = self.step_once(&mut rng)?;
            records.push(rec);
        }
        self.epoch += 1;
        self.probe_pass()
    }
}

pub(crate) fn check_shape<S: skinssl_tensor::Scalar>(
    name: &str,
    got: &Tensor<S>,
    want: &[usize],
) -> Result<()> {
    if got.shape() != want {
        return Err(ModelError::Checkpoint(format!(
            "tensor \"{name}\" has shape {:?}, expected {:?}",
            got.shape(),
            want
        )));
    }
    Ok(())
}

pub(crate) fn read_params(ckpt: &Checkpoint, prefix: &str, params: &mut EncoderParams<f32>) -> Result<()> {
    for (name, slot) in params.names().iter().zip(params.flatten_mut()) {
        let full = format!("{prefix}{name}");
        let tensor = ckpt.get_f32(&full)?;
        check_shape(&full, &tensor, slot.shape())?;
        *slot = tensor;
    }
    Ok(())
}

/// The encoder a finished pretraining run hands downstream: the
/// teacher when one exists (its averaged weights are the artifact of
/// distillation), the student otherwise.
pub fn load_pretrained_encoder(path: &Path) -> Result<(PretrainConfig, EncoderParams<f32>)> {
    let ckpt = Checkpoint::load(path)?;
    let cfg: PretrainConfig = serde_json::from_value(
        ckpt.meta
            .get("config")
            .cloned()
            .ok_or_else(|| ModelError::Checkpoint("missing config in checkpoint".into()))?,
    )?;
    let prefix = if ckpt.names().any(|n| n.starts_with("teacher.")) { "teacher." } else { "student." };
    let mut params = init_encoder::<f32>(&cfg.encoder, 0);
    read_params(&ckpt, prefix, &mut params)?;
    Ok((cfg, params))
}

/// Run (or finish) a pretraining job in `out_dir`, resuming from its
/// epoch checkpoint when one exists. Metrics append one JSON line per
/// optimizer step to `metrics.jsonl`; the checkpoint is rewritten
/// atomically at every epoch boundary.
pub fn pretrain(
    cfg: &PretrainConfig,
    corpus: &PlayCorpus,
    layout: &HandLayout,
    out_dir: &Path,
) -> Result<PretrainReport> {
    pretrain_until(cfg, corpus, layout, out_dir, cfg.epochs)
}

/// Like `pretrain` but stops after `epoch_target` epochs, leaving a
/// resumable checkpoint behind — the controlled form of pulling the
/// plug mid-run. The schedules still span the full configured horizon.
pub fn pretrain_until(
    cfg: &PretrainConfig,
    corpus: &PlayCorpus,
    layout: &HandLayout,
    out_dir: &Path,
    epoch_target: usize,
) -> Result<PretrainReport> {
    cfg.validate()?;
    if epoch_target > cfg.epochs {
        return Err(ModelError::InvalidInput(format!(
            "target of {epoch_target} epochs exceeds the configured {}",
            cfg.epochs
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let metrics_path = out_dir.join(METRICS_FILE);

    let mut trainer = if ckpt_path.exists() {
        let t = Trainer::resume(cfg, corpus, layout, &ckpt_path)?;
        // drop metric lines from any step the checkpoint never saw
        if metrics_path.exists() {
            let body = std::fs::read_to_string(&metrics_path)?;
            let kept: Vec<&str> = body
                .lines()
                .filter(|line| {
                    serde_json::from_str::<serde_json::Value>(line)
                        .ok()
                        .and_then(|v| v.get("step").and_then(|s| s.as_u64()))
                        .is_some_and(|s| (s as usize) < t.step)
                })
                .collect();
            let mut rewritten = kept.join("\n");
            if !rewritten.is_empty() {
                rewritten.push('\n');
            }
            std::fs::write(&metrics_path, rewritten)?;
        }
        t
    } else {
        std::fs::write(&metrics_path, "")?;
        Trainer::new(cfg, corpus, layout)?
    };

    let mut records = Vec::new();
    let mut out = std::io::BufWriter::new(
        std::fs::OpenOptions::new().append(true).open(&metrics_path)?,
    );
    while trainer.epoch < epoch_target {
        let first_new = records.len();
        trainer.run_epoch(&mut records)?;
        for rec in &records[first_new..] {
            writeln!(out, "{}", rec.metrics_line())?;
        }
        out.flush()?;
        trainer.save(&ckpt_path)?;
    }
    let (acc, mse) = trainer.probe_values();
    Ok(PretrainReport {
        records,
        checkpoint: ckpt_path,
        final_probe_cls_acc: acc,
        final_probe_recon_mse: mse,
    })
}
