//! Raw flux streams to training-ready windows: baseline subtraction with
//! a fixed scale, resampling to an even 100 Hz grid, and 10-frame
//! windowing paired with forward-kinematics taxel positions.

use crate::error::{Result, SimError};
use crate::hand::{forward_kinematics, HandLayout, JointState};

pub const RESAMPLE_DT: f64 = 0.01;
pub const FRAMES_PER_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub timestamp: f64,
    /// taxel-major, 3 axes per taxel
    pub flux: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFrame {
    pub flux: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalFrame {
    pub timestamp: f64,
    pub flux: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibratedStream {
    pub frames: Vec<CalFrame>,
}

/// 0.1 s of calibrated flux and matching taxel positions; both tensors
/// are frame-major then taxel-major then axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileWindow {
    pub x: Vec<f32>,
    pub p: Vec<f32>,
    pub t_end: f64,
}

impl TactileWindow {
    pub fn taxel_count(&self) -> usize {
        self.x.len() / (FRAMES_PER_WINDOW * 3)
    }
}

/// Per-channel mean of a contact-free capture, accumulated in float64.
pub fn baseline_from_frames(raw: &[RawSample]) -> Result<BaselineFrame> {
    let Some(first) = raw.first() else {
        return Err(SimError::InsufficientData("baseline capture has no frames".into()));
    };
    let width = first.flux.len();
    let mut acc = vec![0.0f64; width];
    for s in raw {
        if s.flux.len() != width {
            return Err(SimError::InvalidInput("inconsistent baseline frame width".into()));
        }
        for (a, &x) in acc.iter_mut().zip(&s.flux) {
            *a += f64::from(x);
        }
    }
    let n = raw.len() as f64;
    Ok(BaselineFrame { flux: acc.into_iter().map(|a| (a / n) as f32).collect() })
}

pub fn subtract_baseline(
    stream: &[RawSample],
    baseline: &BaselineFrame,
    scale: f32,
) -> Result<CalibratedStream> {
    if !(scale.is_finite() && scale != 0.0) {
        return Err(SimError::InvalidInput(format!("bad scale {scale}")));
    }
    let mut frames = Vec::with_capacity(stream.len());
    for (i, s) in stream.iter().enumerate() {
        if s.flux.len() != baseline.flux.len() {
            return Err(SimError::InvalidInput(format!(
                "frame {i} has {} values, baseline has {}",
                s.flux.len(),
                baseline.flux.len()
            )));
        }
        let flux = s
            .flux
            .iter()
            .zip(&baseline.flux)
            .map(|(&x, &b)| (x - b) / scale)
            .collect();
        frames.push(CalFrame { timestamp: s.timestamp, flux });
    }
    Ok(CalibratedStream { frames })
}

/// Per-entry tangents for a local cubic Hermite interpolant: the slope at
/// sample i of the parabola through samples i-1, i, i+1 (one-sided at the
/// ends). Exact for affine and quadratic signals.
fn parabolic_tangent(
    out: &mut [f64],
    prev: &CalFrame,
    cur: &CalFrame,
    next: &CalFrame,
    edge: Option<bool>,
) {
    let h0 = cur.timestamp - prev.timestamp;
    let h1 = next.timestamp - cur.timestamp;
    for (e, slot) in out.iter_mut().enumerate() {
        let d0 = (f64::from(cur.flux[e]) - f64::from(prev.flux[e])) / h0;
        let d1 = (f64::from(next.flux[e]) - f64::from(cur.flux[e])) / h1;
        *slot = match edge {
            None => (h1 * d0 + h0 * d1) / (h0 + h1),
            // At the left edge `cur` is sample 0 and (prev, cur, next) are
            // samples (0, 1, 2); mirrored on the right.
            Some(false) => d0 + (d0 - d1) * h0 / (h0 + h1),
            Some(true) => d1 + (d1 - d0) * h1 / (h0 + h1),
        };
    }
}

pub fn resample_100hz(stream: &CalibratedStream) -> Result<CalibratedStream> {
    let n = stream.frames.len();
    if n < 2 {
        return Err(SimError::InsufficientData(format!(
            "resampling needs at least 2 frames, got {n}"
        )));
    }
    for w in stream.frames.windows(2) {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(SimError::InvalidInput(format!(
                "timestamps not strictly increasing at {}",
                w[1].timestamp
            )));
        }
    }
    let width = stream.frames[0].flux.len();
    let t0 = stream.frames[0].timestamp;
    let t_last = stream.frames[n - 1].timestamp;
    let k_max = ((t_last - t0) / RESAMPLE_DT + 1e-9).floor() as usize;

    let f = &stream.frames;
    let mut m_lo = vec![0.0f64; width];
    let mut m_hi = vec![0.0f64; width];
    let compute_tangent = |idx: usize, buf: &mut [f64]| {
        // Two samples only: the chord slope.
        if n == 2 {
            let h = f[1].timestamp - f[0].timestamp;
            for (e, slot) in buf.iter_mut().enumerate() {
                *slot = (f64::from(f[1].flux[e]) - f64::from(f[0].flux[e])) / h;
            }
        } else if idx == 0 {
            parabolic_tangent(buf, &f[0], &f[1], &f[2], Some(false));
        } else if idx == n - 1 {
            parabolic_tangent(buf, &f[n - 3], &f[n - 2], &f[n - 1], Some(true));
        } else {
            parabolic_tangent(buf, &f[idx - 1], &f[idx], &f[idx + 1], None);
        }
    };

    let mut seg = 0usize; // current segment [seg, seg+1]
    compute_tangent(0, &mut m_lo);
    compute_tangent(1, &mut m_hi);

    let mut frames = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let t = t0 + k as f64 * RESAMPLE_DT;
        while seg + 2 < n && t > f[seg + 1].timestamp {
            seg += 1;
            std::mem::swap(&mut m_lo, &mut m_hi);
            compute_tangent(seg + 1, &mut m_hi);
        }
        let (a, b) = (&f[seg], &f[seg + 1]);
        let h = b.timestamp - a.timestamp;
        // Hold the boundary value outside the source span.
        let s = ((t - a.timestamp) / h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let (h00, h10, h01, h11) =
            (2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, -2.0 * s3 + 3.0 * s2, s3 - s2);
        let flux = (0..width)
            .map(|e| {
                let y = h00 * f64::from(a.flux[e])
                    + h10 * h * m_lo[e]
                    + h01 * f64::from(b.flux[e])
                    + h11 * h * m_hi[e];
                y as f32
            })
            .collect();
        frames.push(CalFrame { timestamp: t, flux });
    }
    Ok(CalibratedStream { frames })
}

/// Cuts 10-frame windows advancing by `stride` frames; positions come
/// from forward kinematics at each frame's nearest joint sample.
pub fn make_windows(
    stream: &CalibratedStream,
    joints: &[(f64, JointState)],
    layout: &HandLayout,
    stride: usize,
) -> Result<Vec<TactileWindow>> {
    if stride == 0 {
        return Err(SimError::InvalidInput("stride must be positive".into()));
    }
    let n = stream.frames.len();
    if n < FRAMES_PER_WINDOW {
        return Err(SimError::InsufficientData(format!(
            "windowing needs at least {FRAMES_PER_WINDOW} frames, got {n}"
        )));
    }
    if joints.is_empty() {
        return Err(SimError::InvalidInput("empty joint stream".into()));
    }
    let taxels = layout.taxel_count();
    let width = taxels * 3;
    for fr in &stream.frames {
        if fr.flux.len() != width {
            return Err(SimError::InvalidInput(format!(
                "frame width {} does not match layout ({} taxels)",
                fr.flux.len(),
                taxels
            )));
        }
    }

    let mut out = Vec::new();
    let mut start = 0;
    while start + FRAMES_PER_WINDOW <= n {
        out.push(build_window(stream, joints, layout, start, width)?);
        start += stride;
    }
    Ok(out)
}

/// One 10-frame window starting at frame index `start`; positions come
/// from forward kinematics at each frame's nearest joint sample.
pub fn window_at(
    stream: &CalibratedStream,
    joints: &[(f64, JointState)],
    layout: &HandLayout,
    start: usize,
) -> Result<TactileWindow> {
    if joints.is_empty() {
        return Err(SimError::InvalidInput("empty joint stream".into()));
    }
    let n = stream.frames.len();
    if start + FRAMES_PER_WINDOW > n {
        return Err(SimError::InsufficientData(format!(
            "window at frame {start} needs {FRAMES_PER_WINDOW} frames, stream has {n}"
        )));
    }
    let width = layout.taxel_count() * 3;
    for fr in &stream.frames[start..start + FRAMES_PER_WINDOW] {
        if fr.flux.len() != width {
            return Err(SimError::InvalidInput(format!(
                "frame width {} does not match layout ({} taxels)",
                fr.flux.len(),
                layout.taxel_count()
            )));
        }
    }
    build_window(stream, joints, layout, start, width)
}

fn build_window(
    stream: &CalibratedStream,
    joints: &[(f64, JointState)],
    layout: &HandLayout,
    start: usize,
    width: usize,
) -> Result<TactileWindow> {
    let mut x = Vec::with_capacity(FRAMES_PER_WINDOW * width);
    let mut p = Vec::with_capacity(FRAMES_PER_WINDOW * width);
    for i in start..start + FRAMES_PER_WINDOW {
        x.extend_from_slice(&stream.frames[i].flux);
        let j = nearest_joint(joints, stream.frames[i].timestamp);
        let fk = forward_kinematics(layout, &joints[j].1)?;
        for pos in &fk.positions {
            p.extend_from_slice(&[pos[0] as f32, pos[1] as f32, pos[2] as f32]);
        }
    }
    Ok(TactileWindow { x, p, t_end: stream.frames[start + FRAMES_PER_WINDOW - 1].timestamp })
}

fn nearest_joint(joints: &[(f64, JointState)], t: f64) -> usize {
    let mut lo = 0usize;
    let mut hi = joints.len();
    while lo < hi {
        let mid = (lo + hi) / 2;
        if joints[mid].0 < t {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    if lo == 0 {
        return 0;
    }
    if lo == joints.len() {
        return joints.len() - 1;
    }
    if (joints[lo].0 - t).abs() < (t - joints[lo - 1].0).abs() {
        lo
    } else {
        lo - 1
    }
}
