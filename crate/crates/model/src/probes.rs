//! Linear probes: cheap supervised readouts used to monitor what a
//! representation carries. A classifier probe reads object identity
//! from class features; a reconstruction probe regresses the window's
//! per-frame mean flux. The same trainer on flattened raw windows
//! serves as a task-solvability certificate.

use crate::error::{ModelError, Result};
use crate::optim::AdamW;
use skinssl_sim::signal::TactileWindow;
use skinssl_tensor::{Scalar, Tape, Tensor};

/// One affine map `x w + b`, the entire capacity of a probe.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe<S: Scalar> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
}

impl<S: Scalar> LinearProbe<S> {
    pub fn zeros(dim: usize, out: usize) -> Self {
        LinearProbe { w: Tensor::zeros(&[dim, out]), b: Tensor::zeros(&[out]) }
    }

    pub fn outputs(&self, features: &Tensor<S>) -> Tensor<S> {
        let mut tape: Tape<S> = Tape::inference();
        let x = tape.leaf(features);
        let w = tape.leaf(&self.w);
        let b = tape.leaf(&self.b);
        let y = tape.linear(x, w, b);
        tape.value(y).clone()
    }
}

fn check_features<S: Scalar>(features: &Tensor<S>, rows: usize, what: &str) -> Result<()> {
    let (n, _) = features.rows_cols();
    if n != rows {
        return Err(ModelError::InvalidInput(format!(
            "{what}: {rows} targets for {n} feature rows"
        )));
    }
    if n == 0 {
        return Err(ModelError::InsufficientData(format!("{what}: no samples")));
    }
    Ok(())
}

/// Full-batch AdamW epochs of softmax cross-entropy on the probe.
/// Labels must show at least two classes; a probe cannot be fit to a
/// degenerate problem.
pub fn train_classifier_probe<S: Scalar>(
    probe: &mut LinearProbe<S>,
    features: &Tensor<S>,
    labels: &[usize],
    classes: usize,
    epochs: usize,
    lr: f64,
) -> Result<f64> {
    check_features(features, labels.len(), "classifier probe")?;
    let distinct = {
        let mut seen = vec![false; classes];
        for &l in labels {
            if l >= classes {
                return Err(ModelError::InvalidInput(format!(
                    "label {l} outside {classes} classes"
                )));
            }
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(ModelError::DegenerateLabels(format!(
            "classification needs at least 2 distinct labels, saw {distinct}"
        )));
    }

    let n = labels.len();
    // one-hot / n so that sum(logp * onehot) is already the mean
    let mut oh = vec![S::ZERO; n * classes];
    for (r, &l) in labels.iter().enumerate() {
        oh[r * classes + l] = S::from_f64(1.0 / n as f64);
    }
    let scaled_onehot = Tensor::new(&[n, classes], oh);

    let mut opt = AdamW::new(&[&probe.w, &probe.b]);
    let mut last = f64::NAN;
    for _ in 0..epochs {
        let mut tape: Tape<S> = Tape::new();
        let x = tape.leaf(features);
        let w = tape.leaf(&probe.w);
        let b = tape.leaf(&probe.b);
        let logits = tape.linear(x, w, b);
        let logp = tape.log_softmax_rows(logits);
        let picked = tape.mul_const(logp, &scaled_onehot);
        let s = tape.sum_all(picked);
        let loss = tape.scale(s, S::from_f64(-1.0));
        last = tape.value(loss).item().to_f64();
        let mut grads = tape.backward(loss);
        opt.step(
            &mut [&mut probe.w, &mut probe.b],
            &[grads.take(w), grads.take(b)],
            lr,
            0.0,
        );
    }
    Ok(last)
}

pub fn classifier_predictions<S: Scalar>(
    probe: &LinearProbe<S>,
    features: &Tensor<S>,
) -> Vec<usize> {
    let logits = probe.outputs(features);
    let (n, _) = logits.rows_cols();
    (0..n)
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if v.to_f64() > row[best].to_f64() {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn classifier_accuracy<S: Scalar>(
    probe: &LinearProbe<S>,
    features: &Tensor<S>,
    labels: &[usize],
) -> f64 {
    let preds = classifier_predictions(probe, features);
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Full-batch AdamW epochs of mean squared error on the probe.
pub fn train_regressor_probe<S: Scalar>(
    probe: &mut LinearProbe<S>,
    features: &Tensor<S>,
    targets: &Tensor<S>,
    epochs: usize,
    lr: f64,
) -> Result<f64> {
    let (rows, _) = targets.rows_cols();
    check_features(features, rows, "regression probe")?;
    let denom = 1.0 / targets.len() as f64;
    let mut opt = AdamW::new(&[&probe.w, &probe.b]);
    let mut last = f64::NAN;
    for _ in 0..epochs {
        let mut tape: Tape<S> = Tape::new();
        let x = tape.leaf(features);
        let w = tape.leaf(&probe.w);
        let b = tape.leaf(&probe.b);
        let pred = tape.linear(x, w, b);
        let t = tape.leaf(targets);
        let diff = tape.sub(pred, t);
        let sq = tape.mul(diff, diff);
        let s = tape.sum_all(sq);
        let loss = tape.scale(s, S::from_f64(denom));
        last = tape.value(loss).item().to_f64();
        let mut grads = tape.backward(loss);
        opt.step(
            &mut [&mut probe.w, &mut probe.b],
            &[grads.take(w), grads.take(b)],
            lr,
            0.0,
        );
    }
    Ok(last)
}

pub fn regressor_mse<S: Scalar>(
    probe: &LinearProbe<S>,
    features: &Tensor<S>,
    targets: &Tensor<S>,
) -> f64 {
    let pred = probe.outputs(features);
    assert_eq!(pred.shape(), targets.shape());
    let mut acc = 0.0;
    for (p, t) in pred.data().iter().zip(targets.data()) {
        acc += (p.to_f64() - t.to_f64()).powi(2);
    }
    acc / targets.len() as f64
}

/// Reconstruction-probe target: the taxel-mean flux of each frame,
/// 3 channels x frames values per window.
pub fn mean_flux_target<S: Scalar>(window: &TactileWindow, frames: usize) -> Vec<S> {
    let n = window.taxel_count();
    let mut out = Vec::with_capacity(frames * 3);
    for f in 0..frames {
        let mut sums = [0.0f64; 3];
        for t in 0..n {
            let o = (f * n + t) * 3;
            for c in 0..3 {
                sums[c] += f64::from(window.x[o + c]);
            }
        }
        out.extend(sums.iter().map(|&s| S::from_f64(s / n as f64)));
    }
    out
}

/// Raw-window design matrix for the certificate probe: all flux values
/// of each window flattened to one row.
pub fn flatten_windows_flux<S: Scalar>(windows: &[&TactileWindow]) -> Result<Tensor<S>> {
    let Some(first) = windows.first() else {
        return Err(ModelError::InsufficientData("no windows to flatten".into()));
    };
    let width = first.x.len();
    let mut data = Vec::with_capacity(windows.len() * width);
    for w in windows {
        if w.x.len() != width {
            return Err(ModelError::InvalidInput("inconsistent window widths".into()));
        }
        data.extend(w.x.iter().map(|&v| S::from_f64(f64::from(v))));
    }
    Ok(Tensor::new(&[windows.len(), width], data))
}
