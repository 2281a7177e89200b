//! Deterministic stand-in for the robot: Gaussian-kernel contact
//! rendering onto the taxel grid with fixed per-taxel gain/bias and
//! additive noise, plus labeled episode generators for pretraining play
//! data and the force / pose / joystick tasks.

use crate::error::{Result, SimError};
use crate::hand::{rest_baseline_config, taxel_frames, HandLayout, JointState, PadType};
use crate::rng::substream;
use crate::signal::{BaselineFrame, RawSample};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ContactEvent {
    /// m, hand base frame
    pub position: [f64; 3],
    /// Gaussian footprint radius, m
    pub sigma: f64,
    /// N, nonnegative
    pub normal_force: f64,
    /// N, in the tangent plane of `surface_normal`
    pub shear: [f64; 2],
    pub surface_normal: [f64; 3],
}

impl ContactEvent {
    pub fn validate(&self) -> Result<()> {
        let n = self.surface_normal;
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if self.normal_force < 0.0 || self.sigma <= 0.0 || (len - 1.0).abs() > 1e-6 {
            return Err(SimError::InvalidInput(format!("bad contact event {self:?}")));
        }
        Ok(())
    }
}

/// Deterministic orthonormal tangent basis for a unit normal
/// (branchless construction; identity axes for n = +z).
pub fn tangent_basis(n: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let sign = if n[2] >= 0.0 { 1.0 } else { -1.0 };
    let a = -1.0 / (sign + n[2]);
    let b = n[0] * n[1] * a;
    let u = [1.0 + sign * n[0] * n[0] * a, sign * b, -sign * n[0]];
    let v = [b, sign + n[1] * n[1] * a, -n[1]];
    (u, v)
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Noise-free flux of one taxel for one contact, in the taxel frame
/// (x, y tangent; z along the taxel normal). Forces couple through a
/// Gaussian falloff in distance; beyond 6 sigma the response is zero.
pub fn taxel_response(
    contact: &ContactEvent,
    taxel_pos: [f64; 3],
    taxel_normal: [f64; 3],
) -> [f64; 3] {
    let dx = contact.position[0] - taxel_pos[0];
    let dy = contact.position[1] - taxel_pos[1];
    let dz = contact.position[2] - taxel_pos[2];
    let d2 = dx * dx + dy * dy + dz * dz;
    let s2 = contact.sigma * contact.sigma;
    if d2 > 36.0 * s2 {
        return [0.0; 3];
    }
    let w = (-d2 / (2.0 * s2)).exp();

    let (cu, cv) = tangent_basis(contact.surface_normal);
    let f_world = [
        w * (contact.shear[0] * cu[0] + contact.shear[1] * cv[0]
            + contact.normal_force * contact.surface_normal[0]),
        w * (contact.shear[0] * cu[1] + contact.shear[1] * cv[1]
            + contact.normal_force * contact.surface_normal[1]),
        w * (contact.shear[0] * cu[2] + contact.shear[1] * cv[2]
            + contact.normal_force * contact.surface_normal[2]),
    ];
    let (tu, tv) = tangent_basis(taxel_normal);
    [dot(f_world, tu), dot(f_world, tv), dot(f_world, taxel_normal)]
}

/// Fixed per-taxel gain and bias plus the noise level, drawn once per
/// layout seed. The baseline frame equals the bias, so baseline
/// subtraction removes it exactly while gains persist uncalibrated.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorCal {
    pub gain: Vec<f32>,
    pub bias: Vec<f32>,
    pub noise_std: f32,
}

impl SensorCal {
    pub fn from_seed(layout: &HandLayout, seed: u64, noise_std: f32) -> SensorCal {
        let n = layout.taxel_count();
        let mut rng = substream(seed, "sensor-cal");
        let gain = (0..n).map(|_| rng.gen_range(0.9..1.1)).collect();
        let bias = (0..3 * n).map(|_| rng.gen_range(-0.05..0.05)).collect();
        SensorCal { gain, bias, noise_std }
    }

    pub fn noiseless(layout: &HandLayout) -> SensorCal {
        let n = layout.taxel_count();
        SensorCal { gain: vec![1.0; n], bias: vec![0.0; 3 * n], noise_std: 0.0 }
    }

    pub fn baseline(&self) -> BaselineFrame {
        BaselineFrame { flux: self.bias.clone() }
    }
}

fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Superposition of all contacts over the taxel grid, then gain, bias,
/// and (when the level is nonzero) additive Gaussian noise.
pub fn render_frame(
    contacts: &[ContactEvent],
    positions: &[[f64; 3]],
    normals: &[[f64; 3]],
    cal: &SensorCal,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let n = positions.len();
    let mut out = vec![0.0f32; 3 * n];
    for (t, (&pos, &nrm)) in positions.iter().zip(normals).enumerate() {
        let mut acc = [0.0f64; 3];
        for c in contacts {
            let r = taxel_response(c, pos, nrm);
            acc[0] += r[0];
            acc[1] += r[1];
            acc[2] += r[2];
        }
        let g = f64::from(cal.gain[t]);
        for a in 0..3 {
            let mut v = g * acc[a] + f64::from(cal.bias[3 * t + a]);
            if cal.noise_std > 0.0 {
                v += f64::from(cal.noise_std) * normal_sample(rng);
            }
            out[3 * t + a] = v as f32;
        }
    }
    out
}

/// One-dimensional smooth motion: start + rate*t + sum of sinusoids.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion1d {
    pub start: f64,
    pub rate: f64,
    pub amps: Vec<f64>,
    pub freqs: Vec<f64>,
    pub phases: Vec<f64>,
}

impl Motion1d {
    pub fn constant(v: f64) -> Motion1d {
        Motion1d { start: v, rate: 0.0, amps: vec![], freqs: vec![], phases: vec![] }
    }

    pub fn at(&self, t: f64) -> f64 {
        let mut v = self.start + self.rate * t;
        for i in 0..self.amps.len() {
            v += self.amps[i]
                * (2.0 * std::f64::consts::PI * self.freqs[i] * t + self.phases[i]).sin();
        }
        v
    }

    pub fn velocity(&self, t: f64) -> f64 {
        let mut v = self.rate;
        for i in 0..self.amps.len() {
            let w = 2.0 * std::f64::consts::PI * self.freqs[i];
            v += self.amps[i] * w * (w * t + self.phases[i]).cos();
        }
        v
    }

    fn random(rng: &mut ChaCha8Rng, start: f64, amps: &[f64], freq: [f64; 2]) -> Motion1d {
        Motion1d {
            start,
            rate: 0.0,
            amps: amps.iter().map(|&a| rng.gen_range(0.2 * a..a)).collect(),
            freqs: amps.iter().map(|_| rng.gen_range(freq[0]..freq[1])).collect(),
            phases: amps.iter().map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI)).collect(),
        }
    }
}

/// Planar object pose trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Se2Trajectory {
    pub x: Motion1d,
    pub y: Motion1d,
    pub theta: Motion1d,
}

impl Se2Trajectory {
    pub fn stationary(x: f64, y: f64, theta: f64) -> Se2Trajectory {
        Se2Trajectory {
            x: Motion1d::constant(x),
            y: Motion1d::constant(y),
            theta: Motion1d::constant(theta),
        }
    }

    pub fn pose(&self, t: f64) -> (f64, f64, f64) {
        (self.x.at(t), self.y.at(t), self.theta.at(t))
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactTemplate {
    /// m, object frame
    pub offset: [f64; 3],
    pub sigma: f64,
    /// N at full activation
    pub force_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryParams {
    pub amp_xy: [f64; 2],
    pub amp_theta: f64,
    pub freq_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectProfile {
    pub class_id: usize,
    pub footprint: Vec<ContactTemplate>,
    pub trajectory_params: TrajectoryParams,
}

pub const PLAY_SIGMA: f64 = 0.004;

/// Distinct rigid footprints: class c is a ring of c+1 contact points
/// whose radius grows with c, so footprints of different classes stay
/// pairwise farther apart than 2 sigma by construction.
pub fn default_object_profiles(classes: usize) -> Vec<ObjectProfile> {
    assert!(classes >= 1 && classes <= 8, "1..=8 synthetic classes supported");
    let radii = [0.0, 0.012, 0.0205, 0.029, 0.0375, 0.046, 0.0545, 0.063];
    (0..classes)
        .map(|c| {
            let n_pts = c + 1;
            let footprint = (0..n_pts)
                .map(|i| {
                    let a = 2.0 * std::f64::consts::PI * i as f64 / n_pts as f64
                        + std::f64::consts::FRAC_PI_2;
                    ContactTemplate {
                        offset: [radii[c] * a.cos(), radii[c] * a.sin(), 0.0],
                        sigma: PLAY_SIGMA,
                        force_scale: 1.2 + 0.35 * c as f64,
                    }
                })
                .collect();
            ObjectProfile {
                class_id: c,
                footprint,
                trajectory_params: TrajectoryParams {
                    amp_xy: [0.03, 0.04],
                    amp_theta: 0.9,
                    freq_range: [0.05, 0.35],
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledStep {
    pub t: f64,
    pub v: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Labels {
    pub object_class: Option<u32>,
    /// Applied force 3-vector aligned to each raw frame.
    pub per_frame_forces: Option<Vec<[f32; 3]>>,
    /// SE(2) pose at 10 Hz.
    pub object_pose_se2: Option<Vec<LabeledStep>>,
    /// Normalized roll/pitch/yaw at 10 Hz.
    pub joystick_rpy: Option<Vec<LabeledStep>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub raw: Vec<RawSample>,
    pub joints: Vec<(f64, JointState)>,
    pub labels: Labels,
}

impl EpisodeRecord {
    pub fn duration_s(&self) -> f64 {
        match self.raw.as_slice() {
            [] => 0.0,
            [only] => only.timestamp,
            [first, .., last] => last.timestamp - first.timestamp,
        }
    }
}

/// Quantized so the on-disk f32 representation round-trips exactly.
fn f32_round(v: f64) -> f64 {
    f64::from(v as f32)
}

fn smooth_joint_motions(rng: &mut ChaCha8Rng) -> Vec<Motion1d> {
    (0..16)
        .map(|j| {
            if j % 4 == 0 {
                // abduction: small sideways wander
                Motion1d::random(rng, 0.0, &[0.1, 0.05], [0.05, 0.4])
            } else {
                Motion1d::random(rng, 0.15, &[0.3, 0.12], [0.05, 0.5])
            }
        })
        .collect()
}

/// Play interaction: the hand articulates smoothly while the object's
/// footprint wanders over it; raw frames arrive at an irregular rate in
/// [80, 100] Hz. Deterministic in (profile, seed).
pub fn generate_play_episode(
    profile: &ObjectProfile,
    layout: &HandLayout,
    cal: &SensorCal,
    duration_s: f64,
    seed: u64,
) -> EpisodeRecord {
    assert!(duration_s >= 1.0, "episodes must be at least 1 s");
    let mut rng = substream(seed, "play");
    let joint_motions = smooth_joint_motions(&mut rng);
    let tp = &profile.trajectory_params;
    let traj = Se2Trajectory {
        x: Motion1d::random(&mut rng, 0.0, &[tp.amp_xy[0], tp.amp_xy[0] / 3.0], tp.freq_range),
        y: Motion1d::random(&mut rng, 0.055, &[tp.amp_xy[1], tp.amp_xy[1] / 3.0], tp.freq_range),
        theta: Motion1d::random(&mut rng, 0.0, &[tp.amp_theta], tp.freq_range),
    };
    let envelope = Motion1d::random(&mut rng, 0.55, &[0.4], [0.15, 0.8]);
    let height = Motion1d::random(&mut rng, 0.005, &[0.003], [0.1, 0.5]);

    let mut raw = Vec::new();
    let mut joints = Vec::new();
    let mut t = 0.0f64;
    while t < duration_s {
        let q = JointState {
            angles: joint_motions.iter().map(|m| f32_round(m.at(t))).collect(),
        };
        let (pos, nrm) = taxel_frames(layout, &q).expect("motion joints are valid");
        let (cx, cy, th) = traj.pose(t);
        let e = envelope.at(t).clamp(0.05, 1.0);
        let z = height.at(t).max(0.001);
        // sliding friction: tangential load = mu * N along the slip direction
        let slip = [
            traj.x.velocity(t).clamp(-1.0, 1.0),
            traj.y.velocity(t).clamp(-1.0, 1.0),
        ];
        let contacts: Vec<ContactEvent> = profile
            .footprint
            .iter()
            .map(|tmpl| {
                let f = tmpl.force_scale * e;
                ContactEvent {
                    position: [
                        cx + th.cos() * tmpl.offset[0] - th.sin() * tmpl.offset[1],
                        cy + th.sin() * tmpl.offset[0] + th.cos() * tmpl.offset[1],
                        z + tmpl.offset[2],
                    ],
                    sigma: tmpl.sigma,
                    normal_force: f,
                    shear: [0.3 * f * slip[0], 0.3 * f * slip[1]],
                    surface_normal: [0.0, 0.0, 1.0],
                }
            })
            .collect();
        let flux = render_frame(&contacts, &pos.positions, &nrm, cal, &mut rng);
        raw.push(RawSample { timestamp: t, flux });
        joints.push((f32_round(t), q));
        t += rng.gen_range(0.01..0.0125);
    }
    EpisodeRecord {
        raw,
        joints,
        labels: Labels { object_class: Some(profile.class_id as u32), ..Labels::default() },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Indenter {
    Hemispherical,
    Flat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressSpec {
    /// m, on the palm surface
    pub center: [f64; 2],
    pub indenter: Indenter,
    /// peak normal force, N
    pub peak: f64,
    /// peak tangential force, N
    pub shear: [f64; 2],
}

pub const PRESS_DURATION_S: f64 = 1.0;
pub const PRESS_RATE_HZ: f64 = 100.0;

/// Axis-aligned bounding box of the palm taxels at rest, the region
/// presses are sampled from ("on and between" the sensing elements).
pub fn palm_bbox(layout: &HandLayout) -> ([f64; 2], [f64; 2]) {
    let rest = layout.rest_positions();
    let types = layout.taxel_pad_types();
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    for (p, ty) in rest.positions.iter().zip(&types) {
        if *ty == PadType::Palm {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    (lo, hi)
}

pub fn sample_press(rng: &mut ChaCha8Rng, bbox: ([f64; 2], [f64; 2])) -> PressSpec {
    let (lo, hi) = bbox;
    PressSpec {
        center: [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])],
        indenter: if rng.gen_bool(0.5) { Indenter::Hemispherical } else { Indenter::Flat },
        peak: rng.gen_range(0.25..5.0),
        shear: [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
    }
}

fn press_contacts(spec: &PressSpec, activation: f64) -> Vec<ContactEvent> {
    let base = |pos: [f64; 3], sigma: f64, f: f64| ContactEvent {
        position: pos,
        sigma,
        normal_force: f,
        shear: [spec.shear[0] * activation, spec.shear[1] * activation],
        surface_normal: [0.0, 0.0, 1.0],
    };
    let z = 0.003;
    match spec.indenter {
        Indenter::Hemispherical => {
            vec![base([spec.center[0], spec.center[1], z], 0.002, spec.peak * activation)]
        }
        Indenter::Flat => {
            // Mean of nine sub-kernels over a 6 mm disc.
            let mut v = vec![base(
                [spec.center[0], spec.center[1], z],
                0.003,
                spec.peak * activation / 9.0,
            )];
            for i in 0..8 {
                let a = 2.0 * std::f64::consts::PI * i as f64 / 8.0;
                v.push(base(
                    [spec.center[0] + 0.003 * a.cos(), spec.center[1] + 0.003 * a.sin(), z],
                    0.003,
                    spec.peak * activation / 9.0,
                ));
            }
            v
        }
    }
}

/// One press: the hand rests flat while normal force ramps up then back
/// down over 1 s at an even 100 Hz; every frame carries the applied
/// 3-axis force as its label.
pub fn generate_force_press(
    layout: &HandLayout,
    cal: &SensorCal,
    spec: &PressSpec,
    seed: u64,
) -> EpisodeRecord {
    let mut rng = substream(seed, "force");
    let q = rest_baseline_config();
    let (pos, nrm) = taxel_frames(layout, &q).expect("rest joints are valid");
    let n_frames = (PRESS_DURATION_S * PRESS_RATE_HZ) as usize;
    let mut raw = Vec::with_capacity(n_frames);
    let mut forces = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let t = k as f64 / PRESS_RATE_HZ;
        let a = if t < 0.5 { t / 0.5 } else { (PRESS_DURATION_S - t) / 0.5 };
        let contacts = press_contacts(spec, a);
        let flux = render_frame(&contacts, &pos.positions, &nrm, cal, &mut rng);
        raw.push(RawSample { timestamp: t, flux });
        forces.push([
            (spec.shear[0] * a) as f32,
            (spec.shear[1] * a) as f32,
            (spec.peak * a) as f32,
        ]);
    }
    let joints = vec![(0.0, q.clone()), (f32_round(PRESS_DURATION_S), q)];
    EpisodeRecord {
        raw,
        joints,
        labels: Labels { per_frame_forces: Some(forces), ..Labels::default() },
    }
}

/// Contact-free capture of the resting hand: 1 s at 100 Hz with sensor
/// noise and bias but nothing touching the skin. Averaging its frames
/// gives the per-channel baseline used to calibrate every other
/// episode recorded with the same sensor.
pub fn generate_rest_capture(layout: &HandLayout, cal: &SensorCal, seed: u64) -> EpisodeRecord {
    let mut rng = substream(seed, "baseline");
    let q = rest_baseline_config();
    let (pos, nrm) = taxel_frames(layout, &q).expect("rest joints are valid");
    let n_frames = (PRESS_DURATION_S * PRESS_RATE_HZ) as usize;
    let mut raw = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let t = k as f64 / PRESS_RATE_HZ;
        let flux = render_frame(&[], &pos.positions, &nrm, cal, &mut rng);
        raw.push(RawSample { timestamp: t, flux });
    }
    let joints = vec![(0.0, q.clone()), (f32_round(PRESS_DURATION_S), q)];
    EpisodeRecord { raw, joints, labels: Labels::default() }
}

/// Rigid three-point footprint used by the pose task.
pub fn pose_footprint() -> Vec<ContactTemplate> {
    (0..3)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / 3.0 + std::f64::consts::FRAC_PI_2;
            ContactTemplate {
                offset: [0.025 * a.cos(), 0.025 * a.sin(), 0.0],
                sigma: 0.005,
                force_scale: 2.5,
            }
        })
        .collect()
}

pub fn sample_se2_trajectory(rng: &mut ChaCha8Rng) -> Se2Trajectory {
    let x0 = rng.gen_range(-0.02..0.02);
    let y0 = 0.025 + rng.gen_range(-0.01..0.01);
    Se2Trajectory {
        x: Motion1d::random(rng, x0, &[0.05, 0.025], [0.02, 0.1]),
        y: Motion1d::random(rng, y0, &[0.05, 0.025], [0.02, 0.1]),
        theta: Motion1d::random(rng, 0.0, &[0.5, 0.25], [0.02, 0.1]),
    }
}

/// Sliding/rotating rigid object under a flat static hand, raw frames at
/// an even 100 Hz, SE(2) pose labels at 10 Hz.
pub fn generate_pose_episode(
    layout: &HandLayout,
    cal: &SensorCal,
    traj: &Se2Trajectory,
    duration_s: f64,
    seed: u64,
) -> EpisodeRecord {
    assert!(duration_s >= 1.0, "episodes must be at least 1 s");
    let mut rng = substream(seed, "pose");
    let q = rest_baseline_config();
    let (pos, nrm) = taxel_frames(layout, &q).expect("rest joints are valid");
    let footprint = pose_footprint();

    let n_frames = (duration_s * 100.0).round() as usize;
    let mut raw = Vec::with_capacity(n_frames);
    let mut labels = Vec::new();
    let mut joints = Vec::new();
    for k in 0..n_frames {
        let t = k as f64 * 0.01;
        let (cx, cy, th) = traj.pose(t);
        let slip = [
            traj.x.velocity(t).clamp(-1.0, 1.0),
            traj.y.velocity(t).clamp(-1.0, 1.0),
        ];
        let contacts: Vec<ContactEvent> = footprint
            .iter()
            .map(|tmpl| ContactEvent {
                position: [
                    cx + th.cos() * tmpl.offset[0] - th.sin() * tmpl.offset[1],
                    cy + th.sin() * tmpl.offset[0] + th.cos() * tmpl.offset[1],
                    0.003,
                ],
                sigma: tmpl.sigma,
                normal_force: tmpl.force_scale,
                shear: [
                    0.3 * tmpl.force_scale * slip[0],
                    0.3 * tmpl.force_scale * slip[1],
                ],
                surface_normal: [0.0, 0.0, 1.0],
            })
            .collect();
        let flux = render_frame(&contacts, &pos.positions, &nrm, cal, &mut rng);
        raw.push(RawSample { timestamp: t, flux });
        if k % 10 == 0 {
            labels.push(LabeledStep {
                t: f32_round(t),
                v: [cx as f32, cy as f32, wrap_angle(th) as f32],
            });
            joints.push((f32_round(t), q.clone()));
        }
    }
    EpisodeRecord {
        raw,
        joints,
        labels: Labels { object_pose_se2: Some(labels), ..Labels::default() },
    }
}

/// Joystick deflection model: one bounded harmonic per axis so labels
/// stay inside [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct StickMotion {
    pub roll: Motion1d,
    pub pitch: Motion1d,
    pub yaw: Motion1d,
}

impl StickMotion {
    pub fn neutral() -> StickMotion {
        StickMotion {
            roll: Motion1d::constant(0.0),
            pitch: Motion1d::constant(0.0),
            yaw: Motion1d::constant(0.0),
        }
    }

    pub fn rpy(&self, t: f64) -> [f64; 3] {
        [self.roll.at(t), self.pitch.at(t), self.yaw.at(t)]
    }
}

pub fn sample_stick_motion(rng: &mut ChaCha8Rng) -> StickMotion {
    let axis = |rng: &mut ChaCha8Rng| Motion1d {
        start: 0.0,
        rate: 0.0,
        amps: vec![rng.gen_range(0.3..1.0)],
        freqs: vec![rng.gen_range(0.1..0.5)],
        phases: vec![rng.gen_range(0.0..2.0 * std::f64::consts::PI)],
    };
    StickMotion { roll: axis(rng), pitch: axis(rng), yaw: axis(rng) }
}

/// Spring-loaded stick pivoting under the fingertips: deflection shifts
/// contact placement and redistributes force across the four tips; yaw
/// twists the shear field. Labels at 10 Hz.
pub fn generate_joystick_episode(
    layout: &HandLayout,
    cal: &SensorCal,
    stick: &StickMotion,
    duration_s: f64,
    seed: u64,
) -> EpisodeRecord {
    assert!(duration_s >= 1.0, "episodes must be at least 1 s");
    let mut rng = substream(seed, "joystick");
    let q = rest_baseline_config();
    let (pos, nrm) = taxel_frames(layout, &q).expect("rest joints are valid");

    // Contact anchors: mean fingertip-pad taxel position per finger.
    let mut anchors = Vec::new();
    let mut i = 0;
    for pad in &layout.pads {
        let n = pad.taxel_count();
        if pad.pad_type == PadType::Fingertip {
            let mut c = [0.0f64; 3];
            for p in &pos.positions[i..i + n] {
                for a in 0..3 {
                    c[a] += p[a] / n as f64;
                }
            }
            anchors.push(c);
        }
        i += n;
    }
    let mean_x =
        anchors.iter().map(|a| a[0]).sum::<f64>() / anchors.len().max(1) as f64;

    let n_frames = (duration_s * 100.0).round() as usize;
    let mut raw = Vec::with_capacity(n_frames);
    let mut labels = Vec::new();
    let mut joints = Vec::new();
    for k in 0..n_frames {
        let t = k as f64 * 0.01;
        let [r, p, y] = stick.rpy(t);
        let contacts: Vec<ContactEvent> = anchors
            .iter()
            .map(|a| {
                let side = if a[0] >= mean_x { 1.0 } else { -1.0 };
                let f = (1.5 * (1.0 + 0.5 * r * side + 0.35 * p)).max(0.1);
                ContactEvent {
                    position: [a[0] + 0.004 * r, a[1] + 0.004 * p, a[2] + 0.002],
                    sigma: 0.006,
                    normal_force: f,
                    shear: [(0.6 * y * side).clamp(-1.0, 1.0), (0.3 * y).clamp(-1.0, 1.0)],
                    surface_normal: [0.0, 0.0, 1.0],
                }
            })
            .collect();
        let flux = render_frame(&contacts, &pos.positions, &nrm, cal, &mut rng);
        raw.push(RawSample { timestamp: t, flux });
        if k % 10 == 0 {
            labels.push(LabeledStep { t: f32_round(t), v: [r as f32, p as f32, y as f32] });
            joints.push((f32_round(t), q.clone()));
        }
    }
    EpisodeRecord {
        raw,
        joints,
        labels: Labels { joystick_rpy: Some(labels), ..Labels::default() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::build_default_layout;

    fn flat_contact(f: f64, pos: [f64; 3]) -> ContactEvent {
        ContactEvent {
            position: pos,
            sigma: 0.004,
            normal_force: f,
            shear: [0.0, 0.0],
            surface_normal: [0.0, 0.0, 1.0],
        }
    }

    #[test]
    fn response_examples() {
        let f = 3.0;
        // far contact: essentially zero
        let c = flat_contact(f, [0.0, 0.0, 0.04]); // 10 sigma away
        let r = taxel_response(&c, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        for a in r {
            assert!(a.abs() < 2e-22 * f);
        }
        // contact atop the taxel: pure normal
        let c = flat_contact(f, [0.0, 0.0, 0.0]);
        let r = taxel_response(&c, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        assert_eq!(r, [0.0, 0.0, f]);
        // d = sigma
        let c = flat_contact(2.0, [0.004, 0.0, 0.0]);
        let r = taxel_response(&c, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        assert!((r[2] - 2.0 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((r[2] - 1.2131).abs() < 1e-4);
    }

    #[test]
    fn shear_passes_through_aligned_frames() {
        let c = ContactEvent {
            position: [0.0, 0.0, 0.0],
            sigma: 0.004,
            normal_force: 1.0,
            shear: [0.25, -0.5],
            surface_normal: [0.0, 0.0, 1.0],
        };
        let r = taxel_response(&c, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        assert!((r[0] - 0.25).abs() < 1e-12);
        assert!((r[1] + 0.5).abs() < 1e-12);
        assert!((r[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        for n in [
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
            [1.0, 0.0, 0.0],
            [0.577350269, 0.577350269, 0.577350269],
        ] {
            let (u, v) = tangent_basis(n);
            assert!(dot(u, u).sqrt() - 1.0 < 1e-9);
            assert!(dot(v, v).sqrt() - 1.0 < 1e-9);
            assert!(dot(u, v).abs() < 1e-9);
            assert!(dot(u, n).abs() < 1e-9);
            assert!(dot(v, n).abs() < 1e-9);
        }
    }

    fn rest_frames(layout: &HandLayout) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let (p, n) = taxel_frames(layout, &rest_baseline_config()).unwrap();
        (p.positions, n)
    }

    #[test]
    fn render_is_zero_and_linear_without_noise() {
        let layout = build_default_layout();
        let (pos, nrm) = rest_frames(&layout);
        let cal = SensorCal::noiseless(&layout);
        let mut rng = substream(0, "t");
        let empty = render_frame(&[], &pos, &nrm, &cal, &mut rng);
        assert!(empty.iter().all(|&x| x == 0.0));

        let c = flat_contact(2.0, [0.01, 0.03, 0.003]);
        let one = render_frame(&[c.clone()], &pos, &nrm, &cal, &mut rng);
        let two = render_frame(&[c.clone(), c], &pos, &nrm, &cal, &mut rng);
        for (a, b) in one.iter().zip(&two) {
            assert_eq!(2.0 * a, *b);
        }
    }

    // Monte-Carlo oracle: the sample mean over many noisy renders
    // approaches the noiseless frame at the CLT rate.
    #[test]
    fn render_noise_is_zero_mean() {
        let layout = build_default_layout();
        let (pos, nrm) = rest_frames(&layout);
        let mut cal = SensorCal::noiseless(&layout);
        let clean =
            render_frame(&[flat_contact(2.0, [0.0, 0.025, 0.003])], &pos, &nrm, &cal, &mut substream(0, "t"));
        cal.noise_std = 0.01;
        let n = 10_000;
        let mut rng = substream(11, "noise");
        let mut mean = vec![0.0f64; clean.len()];
        for _ in 0..n {
            let f = render_frame(&[flat_contact(2.0, [0.0, 0.025, 0.003])], &pos, &nrm, &cal, &mut rng);
            for (m, x) in mean.iter_mut().zip(&f) {
                *m += f64::from(*x) / n as f64;
            }
        }
        let bound = 3.0 * 0.01 / (n as f64).sqrt() * 10.0; // 3 sigma with headroom for 1104 draws
        let worst = mean
            .iter()
            .zip(&clean)
            .map(|(m, c)| (m - f64::from(*c)).abs())
            .fold(0.0, f64::max);
        assert!(worst < bound.max(3.0 * 0.01 / 100.0 * 1.5), "worst deviation {worst}");
    }

    #[test]
    fn profiles_are_pairwise_separated() {
        let profiles = default_object_profiles(8);
        assert_eq!(profiles.len(), 8);
        let hausdorff = |a: &[ContactTemplate], b: &[ContactTemplate]| {
            let dir = |xs: &[ContactTemplate], ys: &[ContactTemplate]| {
                xs.iter()
                    .map(|x| {
                        ys.iter()
                            .map(|y| {
                                let d = [
                                    x.offset[0] - y.offset[0],
                                    x.offset[1] - y.offset[1],
                                    x.offset[2] - y.offset[2],
                                ];
                                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
                            })
                            .fold(f64::MAX, f64::min)
                    })
                    .fold(0.0, f64::max)
            };
            dir(a, b).max(dir(b, a))
        };
        let sigma_max = profiles
            .iter()
            .flat_map(|p| p.footprint.iter().map(|t| t.sigma))
            .fold(0.0, f64::max);
        for i in 0..profiles.len() {
            for j in i + 1..profiles.len() {
                let h = hausdorff(&profiles[i].footprint, &profiles[j].footprint);
                assert!(
                    h > 2.0 * sigma_max,
                    "classes {i} and {j} are {h} apart, need > {}",
                    2.0 * sigma_max
                );
            }
        }
    }

    #[test]
    fn play_episode_is_deterministic_and_dense() {
        let layout = build_default_layout();
        let cal = SensorCal::from_seed(&layout, 3, 0.01);
        let profile = &default_object_profiles(8)[2];
        let a = generate_play_episode(profile, &layout, &cal, 2.0, 42);
        let b = generate_play_episode(profile, &layout, &cal, 2.0, 42);
        assert_eq!(a, b);
        assert_eq!(a.labels.object_class, Some(2));
        // >= 80 Hz
        assert!(a.raw.len() >= 160, "{} frames", a.raw.len());
        for w in a.raw.windows(2) {
            let gap = w[1].timestamp - w[0].timestamp;
            assert!(gap >= 0.01 - 1e-12 && gap <= 0.0125 + 1e-12);
        }
        let c = generate_play_episode(profile, &layout, &cal, 2.0, 43);
        assert_ne!(a.raw[5].flux, c.raw[5].flux);
    }

    #[test]
    fn zero_force_footprint_reads_bias_only() {
        let layout = build_default_layout();
        let cal = SensorCal::from_seed(&layout, 3, 0.0);
        let mut profile = default_object_profiles(8)[0].clone();
        for t in &mut profile.footprint {
            t.force_scale = 0.0;
        }
        let ep = generate_play_episode(&profile, &layout, &cal, 1.0, 9);
        for s in &ep.raw {
            assert_eq!(s.flux, cal.bias);
        }
    }

    #[test]
    fn force_press_ramps_and_labels_match() {
        let layout = build_default_layout();
        let cal = SensorCal::noiseless(&layout);
        let spec = PressSpec {
            center: [0.0, 0.025],
            indenter: Indenter::Hemispherical,
            peak: 4.0,
            shear: [0.1, -0.2],
        };
        let ep = generate_force_press(&layout, &cal, &spec, 5);
        assert_eq!(ep.raw.len(), 100);
        let forces = ep.labels.per_frame_forces.as_ref().unwrap();
        assert_eq!(forces.len(), 100);
        // ramp peaks mid-episode, zero at the start
        assert_eq!(forces[0][2], 0.0);
        assert!((f64::from(forces[50][2]) - 4.0).abs() < 1e-6);
        for f in forces {
            assert!(f[2] >= 0.0 && f[2] <= 5.0);
        }
        // labels align with raw timestamps by construction
        for (k, s) in ep.raw.iter().enumerate() {
            assert!((s.timestamp - k as f64 * 0.01).abs() < 1e-12);
        }
    }

    #[test]
    fn press_midway_between_taxels_is_symmetric() {
        let layout = build_default_layout();
        let (pos, nrm) = rest_frames(&layout);
        let cal = SensorCal::noiseless(&layout);
        // palm taxels 296 and 297 are adjacent along x
        let (a, b) = (pos[296], pos[297]);
        assert!((a[1] - b[1]).abs() < 1e-12);
        let mid = [(a[0] + b[0]) / 2.0, a[1], 0.003];
        let frame = render_frame(&[flat_contact(3.0, mid)], &pos, &nrm, &cal, &mut substream(0, "t"));
        assert!(frame[296 * 3 + 2] > 0.0);
        assert_eq!(frame[296 * 3 + 2], frame[297 * 3 + 2]);
    }

    #[test]
    fn pose_episode_labels_track_commanded_pose() {
        let layout = build_default_layout();
        let cal = SensorCal::noiseless(&layout);
        // stationary
        let traj = Se2Trajectory::stationary(0.01, 0.03, 0.2);
        let ep = generate_pose_episode(&layout, &cal, &traj, 2.0, 1);
        let labels = ep.labels.object_pose_se2.as_ref().unwrap();
        assert!(labels.iter().all(|s| s.v == labels[0].v));

        // pure +x slide of 5 cm over the episode
        let traj = Se2Trajectory {
            x: Motion1d { start: 0.0, rate: 0.05 / 2.0, amps: vec![], freqs: vec![], phases: vec![] },
            y: Motion1d::constant(0.0),
            theta: Motion1d::constant(0.0),
        };
        let ep = generate_pose_episode(&layout, &cal, &traj, 2.0, 1);
        let labels = ep.labels.object_pose_se2.as_ref().unwrap();
        let last = labels.last().unwrap();
        // last label lands at t = 1.9 of the 2 s slide
        assert!((f64::from(last.v[0]) - 0.05 * 1.9 / 2.0).abs() < 1e-6);
        assert_eq!(last.v[1], 0.0);
        assert_eq!(last.v[2], 0.0);
    }

    #[test]
    fn pose_labels_align_with_flux_frames() {
        let layout = build_default_layout();
        let cal = SensorCal::noiseless(&layout);
        let mut rng = substream(7, "traj");
        let traj = sample_se2_trajectory(&mut rng);
        let ep = generate_pose_episode(&layout, &cal, &traj, 3.0, 2);
        let labels = ep.labels.object_pose_se2.as_ref().unwrap();
        for s in labels {
            let nearest = ep
                .raw
                .iter()
                .map(|r| (r.timestamp - s.t).abs())
                .fold(f64::MAX, f64::min);
            assert!(nearest <= 0.005, "label at {} is {} from nearest frame", s.t, nearest);
        }
        // pose stays inside the commanded ranges
        for s in labels {
            assert!(s.v[0].abs() <= 0.125 && s.v[1].abs() <= 0.125);
            assert!(f64::from(s.v[2]).abs() <= 50f64.to_radians() + 1e-9);
        }
    }

    #[test]
    fn joystick_neutral_and_extremes() {
        let layout = build_default_layout();
        let cal = SensorCal::noiseless(&layout);
        let ep = generate_joystick_episode(&layout, &cal, &StickMotion::neutral(), 1.0, 3);
        let labels = ep.labels.joystick_rpy.as_ref().unwrap();
        assert!(labels.iter().all(|s| s.v == [0.0, 0.0, 0.0]));

        // pure roll at full deflection reaches (1, 0, 0)
        let stick = StickMotion {
            roll: Motion1d {
                start: 0.0,
                rate: 0.0,
                amps: vec![1.0],
                freqs: vec![0.25],
                phases: vec![0.0],
            },
            pitch: Motion1d::constant(0.0),
            yaw: Motion1d::constant(0.0),
        };
        let ep = generate_joystick_episode(&layout, &cal, &stick, 2.0, 3);
        let labels = ep.labels.joystick_rpy.as_ref().unwrap();
        let max_roll = labels.iter().map(|s| s.v[0]).fold(f32::MIN, f32::max);
        assert!((max_roll - 1.0).abs() < 1e-6, "max roll {max_roll}");
        assert!(labels.iter().all(|s| s.v[1] == 0.0 && s.v[2] == 0.0));
        assert!(labels.iter().all(|s| s.v[0].abs() <= 1.0));
    }

    #[test]
    fn wrap_angle_examples() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-3.5) - (-3.5 + 2.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert!((wrap_angle(0.3) - 0.3).abs() < 1e-15);
        // wraps to (-pi, pi]
        assert!(wrap_angle(-std::f64::consts::PI) > 0.0);
    }
}
