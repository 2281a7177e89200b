//! AdamW with decoupled weight decay and the training-run schedules
//! (learning rate, weight decay, teacher momentum, temperatures).

use serde::{Deserialize, Serialize};
use skinssl_tensor::{Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// AdamW optimizer. Moments are kept in float64 regardless of the
/// parameter dtype so accumulation order is the only rounding source.
/// Weight decay is decoupled and applied only to matrices (ndim >= 2);
/// vectors (biases, layer-norm gains, class token treated as a matrix
/// row) follow the tensor's actual rank.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<Tensor<f64>>,
    pub v: Vec<Tensor<f64>>,
    pub t: u64,
}

impl AdamW {
    pub fn new<S: Scalar>(params: &[&Tensor<S>]) -> Self {
        AdamW {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    /// One update over all parameters; `grads[i]` pairs with
    /// `params[i]`. A `None` gradient leaves that tensor untouched.
    pub fn step<S: Scalar>(
        &mut self,
        params: &mut [&mut Tensor<S>],
        grads: &[Option<Tensor<S>>],
        lr: f64,
        wd: f64,
    ) {
        assert_eq!(params.len(), self.m.len(), "optimizer bound to different params");
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..params.len() {
            let Some(g) = &grads[i] else { continue };
            let p = &mut *params[i];
            assert_eq!(g.shape(), p.shape(), "grad shape mismatch at param {i}");
            let decay = if p.ndim() >= 2 { wd } else { 0.0 };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let pd = p.data_mut();
            let gd = g.data();
            for j in 0..pd.len() {
                let gj = gd[j].to_f64();
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                let pj = pd[j].to_f64();
                let upd = pj - lr * (mhat / (vhat.sqrt() + ADAM_EPS) + decay * pj);
                pd[j] = S::from_f64(upd);
            }
        }
    }
}

/// Scalar knobs that vary over a pretraining run, all driven by the
/// global optimizer-step index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedules {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub wd_start: f64,
    pub wd_end: f64,
    pub ema_start: f64,
    pub ema_end: f64,
    pub student_temp: f64,
    pub teacher_temp: f64,
    pub center_momentum: f64,
    pub patch_weight: f64,
}

impl Default for Schedules {
    fn default() -> Self {
        Schedules {
            total_steps: 1,
            warmup_steps: 0,
            peak_lr: 1e-4,
            wd_start: 0.04,
            wd_end: 0.4,
            ema_start: 0.994,
            ema_end: 1.0,
            student_temp: 0.1,
            teacher_temp: 0.04,
            center_momentum: 0.9,
            patch_weight: 1.0,
        }
    }
}

/// Cosine interpolation from `a` (p = 0) to `b` (p = 1).
fn cosine(a: f64, b: f64, p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    b + (a - b) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
}

impl Schedules {
    pub fn for_run(total_steps: usize, warmup_steps: usize, peak_lr: f64) -> Self {
        Schedules { total_steps, warmup_steps, peak_lr, ..Schedules::default() }
    }

    /// Linear warmup to the peak, then cosine decay to zero. During
    /// warmup lr = peak * step / warmup_steps (so the very first step
    /// runs at lr = 0 when warmup is enabled).
    pub fn lr(&self, step: usize) -> f64 {
        if step >= self.total_steps {
            return 0.0;
        }
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps).max(1);
        cosine(self.peak_lr, 0.0, (step - self.warmup_steps) as f64 / span as f64)
    }

    fn progress(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return 1.0;
        }
        step as f64 / (self.total_steps - 1) as f64
    }

    /// Weight decay ramps with a cosine from `wd_start` at the first
    /// step to `wd_end` at the last.
    pub fn wd(&self, step: usize) -> f64 {
        cosine(self.wd_start, self.wd_end, self.progress(step))
    }

    /// Teacher EMA momentum, cosine from `ema_start` to `ema_end`.
    pub fn ema_momentum(&self, step: usize) -> f64 {
        cosine(self.ema_start, self.ema_end, self.progress(step))
    }
}
