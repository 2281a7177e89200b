//! Randomized invariants for the hand model, signal pipeline, contact
//! rendering, and episode container.

use proptest::prelude::*;
use skinssl_sim::format::{decode_episode, encode_episode};
use skinssl_sim::hand::{build_default_layout, forward_kinematics, taxel_frames, JointState};
use skinssl_sim::signal::{
    make_windows, resample_100hz, subtract_baseline, BaselineFrame, CalibratedStream, RawSample,
};
use skinssl_sim::synth::{tangent_basis, wrap_angle, EpisodeRecord, LabeledStep, Labels};

fn small_stream(n: usize, width: usize, seed: u64) -> CalibratedStream {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        frames.push(skinssl_sim::signal::CalFrame {
            timestamp: t,
            flux: (0..width).map(|_| rng.gen_range(-2.0f32..2.0)).collect(),
        });
        t += rng.gen_range(0.010..0.0125);
    }
    CalibratedStream { frames }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn baseline_subtraction_inverts(seed in 0u64..1000, scale in 0.5f32..50.0) {
        let stream_raw = small_stream(5, 9, seed);
        let raw: Vec<RawSample> = stream_raw
            .frames
            .iter()
            .map(|f| RawSample { timestamp: f.timestamp, flux: f.flux.clone() })
            .collect();
        let baseline = BaselineFrame { flux: stream_raw.frames[0].flux.clone() };
        let cal = subtract_baseline(&raw, &baseline, scale).unwrap();
        // first frame maps to exactly zero
        prop_assert!(cal.frames[0].flux.iter().all(|&x| x == 0.0));
        // invertible up to f32 rounding
        for (c, r) in cal.frames.iter().zip(&raw) {
            for (j, &v) in c.flux.iter().enumerate() {
                let back = v * scale + baseline.flux[j];
                prop_assert!((back - r.flux[j]).abs() <= 1e-4 * r.flux[j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn resampler_is_exact_on_affine_signals(
        seed in 0u64..1000,
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0.0f64;
        let mut frames = Vec::new();
        for _ in 0..40 {
            frames.push(skinssl_sim::signal::CalFrame {
                timestamp: t,
                flux: vec![(a * t + b) as f32],
            });
            t += rng.gen_range(0.010..0.0125);
        }
        let out = resample_100hz(&CalibratedStream { frames }).unwrap();
        prop_assert!(!out.frames.is_empty());
        for f in &out.frames {
            let want = a * f.timestamp + b;
            prop_assert!(
                (f64::from(f.flux[0]) - want).abs() < 1e-5 * want.abs().max(1.0),
                "t={} got {} want {}", f.timestamp, f.flux[0], want
            );
        }
    }

    #[test]
    fn resampler_grid_is_uniform(seed in 0u64..1000, n in 12usize..60) {
        let stream = small_stream(n, 2, seed);
        let t0 = stream.frames[0].timestamp;
        let out = resample_100hz(&stream).unwrap();
        for (k, f) in out.frames.iter().enumerate() {
            prop_assert!((f.timestamp - (t0 + k as f64 * 0.01)).abs() < 1e-9);
        }
        let t_last = stream.frames.last().unwrap().timestamp;
        prop_assert!(out.frames.last().unwrap().timestamp <= t_last + 1e-9);
        prop_assert!(out.frames.len() >= n / 2);
    }

    #[test]
    fn windows_preserve_their_source_frames(seed in 0u64..1000, stride in 1usize..12) {
        let layout = build_default_layout();
        let width = layout.taxel_count() * 3;
        let stream = small_stream(30, width, seed);
        let joints = vec![(0.0, JointState::zeros(16))];
        let windows = make_windows(&stream, &joints, &layout, stride).unwrap();
        let expected = (30 - 10) / stride + 1;
        prop_assert_eq!(windows.len(), expected);
        for (w_idx, w) in windows.iter().enumerate() {
            for f in 0..10 {
                let src = &stream.frames[w_idx * stride + f].flux;
                let got = &w.x[f * width..(f + 1) * width];
                prop_assert_eq!(src.as_slice(), got);
            }
        }
    }

    #[test]
    fn pads_move_rigidly(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let layout = build_default_layout();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let q = JointState {
            angles: (0..16).map(|_| rng.gen_range(-0.8f64..0.8)).collect(),
        };
        let rest = layout.rest_positions();
        let bent = forward_kinematics(&layout, &q).unwrap();
        let mut start = 0;
        for pad in &layout.pads {
            let n = pad.taxel_count();
            // pairwise distances within one pad are joint-invariant
            for i in start..start + n {
                for j in (i + 1..start + n).step_by(7) {
                    let dist = |a: [f64; 3], b: [f64; 3]| {
                        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2))
                            .sqrt()
                    };
                    let d0 = dist(rest.positions[i], rest.positions[j]);
                    let d1 = dist(bent.positions[i], bent.positions[j]);
                    prop_assert!((d0 - d1).abs() < 1e-9, "pad {} taxels {i},{j}", pad.pad_id);
                }
            }
            start += n;
        }
    }

    #[test]
    fn taxel_normals_stay_unit(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let layout = build_default_layout();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let q = JointState {
            angles: (0..16).map(|_| rng.gen_range(-0.8f64..0.8)).collect(),
        };
        let (_, normals) = taxel_frames(&layout, &q).unwrap();
        for n in normals {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            prop_assert!((len - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn wrap_angle_lands_in_half_open_pi_interval(a in -50.0f64..50.0, k in -3i32..=3) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        let shifted = wrap_angle(a + f64::from(k) * 2.0 * std::f64::consts::PI);
        prop_assert!((shifted - w).abs() < 1e-9 || (shifted - w).abs() > 2.0 * std::f64::consts::PI - 1e-9);
    }

    #[test]
    fn tangent_basis_is_orthonormal_for_any_unit_normal(
        x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
    ) {
        let len = (x * x + y * y + z * z).sqrt();
        prop_assume!(len > 1e-3);
        let n = [x / len, y / len, z / len];
        let (u, v) = tangent_basis(n);
        let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        prop_assert!((dot(u, u) - 1.0).abs() < 1e-9);
        prop_assert!((dot(v, v) - 1.0).abs() < 1e-9);
        prop_assert!(dot(u, v).abs() < 1e-9);
        prop_assert!(dot(u, n).abs() < 1e-9);
        prop_assert!(dot(v, n).abs() < 1e-9);
        // right-handed: u x v = n
        let cross = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        for a in 0..3 {
            prop_assert!((cross[a] - n[a]).abs() < 1e-9);
        }
    }

    #[test]
    fn episode_container_round_trips(seed in 0u64..500, frames in 1usize..6) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let width = 6usize;
        let raw: Vec<RawSample> = (0..frames)
            .map(|k| RawSample {
                timestamp: k as f64 * 0.01,
                flux: (0..width * 3).map(|_| rng.gen_range(-3.0f32..3.0)).collect(),
            })
            .collect();
        let ep = EpisodeRecord {
            raw,
            joints: vec![(0.0, JointState::zeros(16))],
            labels: Labels {
                object_class: Some(rng.gen_range(0..8)),
                per_frame_forces: None,
                object_pose_se2: Some(vec![LabeledStep {
                    t: 0.0,
                    v: [rng.gen_range(-1.0f32..1.0), 0.5, -0.25],
                }]),
                joystick_rpy: None,
            },
        };
        let decoded = decode_episode(&encode_episode(&ep).unwrap()).unwrap();
        prop_assert_eq!(ep, decoded);
    }
}
