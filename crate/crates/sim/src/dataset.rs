//! Dataset builders: generate N episodes of one flavor into a
//! directory, one file per episode plus a manifest. Each episode's seed
//! derives from the dataset seed and its index, so datasets are
//! reproducible file-for-file and episodes are independent.

use crate::error::Result;
use crate::format::{label_names, write_episode, write_manifest, DatasetManifest, EpisodeMeta};
use crate::hand::HandLayout;
use crate::rng::{episode_seed, substream};
use crate::signal::{baseline_from_frames, BaselineFrame};
use crate::synth::{
    generate_force_press, generate_joystick_episode, generate_play_episode,
    generate_pose_episode, generate_rest_capture, palm_bbox, sample_press,
    sample_se2_trajectory, sample_stick_motion, EpisodeRecord, ObjectProfile, SensorCal,
};
use std::path::Path;

/// File name of the contact-free rest capture written next to every
/// dataset; averaging its frames recovers the calibration baseline.
pub const BASELINE_FILE: &str = "baseline.skin";

/// Load a dataset's baseline frame from its rest capture.
pub fn read_baseline(dir: &Path) -> Result<BaselineFrame> {
    let ep = crate::format::read_episode(&dir.join(BASELINE_FILE))?;
    baseline_from_frames(&ep.raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Play,
    Force,
    Pose,
    Joystick,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Play => "play",
            DatasetKind::Force => "force",
            DatasetKind::Pose => "pose",
            DatasetKind::Joystick => "joystick",
        }
    }
}

pub struct DatasetSpec<'a> {
    pub kind: DatasetKind,
    pub episodes: usize,
    /// Play/pose/joystick episode length; force presses are fixed at 1 s.
    pub episode_duration_s: f64,
    pub profiles: &'a [ObjectProfile],
    pub seed: u64,
    pub config_hash: Option<String>,
}

pub fn episode_file_name(index: usize) -> String {
    format!("episode_{index:05}.skin")
}

fn generate_one(
    spec: &DatasetSpec,
    layout: &HandLayout,
    cal: &SensorCal,
    index: usize,
    seed: u64,
) -> EpisodeRecord {
    match spec.kind {
        DatasetKind::Play => {
            let profile = &spec.profiles[index % spec.profiles.len()];
            generate_play_episode(profile, layout, cal, spec.episode_duration_s, seed)
        }
        DatasetKind::Force => {
            let press = sample_press(&mut substream(seed, "press-spec"), palm_bbox(layout));
            generate_force_press(layout, cal, &press, seed)
        }
        DatasetKind::Pose => {
            let traj = sample_se2_trajectory(&mut substream(seed, "traj"));
            generate_pose_episode(layout, cal, &traj, spec.episode_duration_s, seed)
        }
        DatasetKind::Joystick => {
            let stick = sample_stick_motion(&mut substream(seed, "stick"));
            generate_joystick_episode(layout, cal, &stick, spec.episode_duration_s, seed)
        }
    }
}

/// Write all episodes and the manifest into `dir` (created if absent).
pub fn generate_dataset(
    spec: &DatasetSpec,
    layout: &HandLayout,
    cal: &SensorCal,
    dir: &Path,
) -> Result<DatasetManifest> {
    assert!(spec.episodes > 0, "dataset needs at least one episode");
    assert!(
        spec.kind != DatasetKind::Play || !spec.profiles.is_empty(),
        "play data needs object profiles"
    );
    std::fs::create_dir_all(dir)?;
    // Rest capture first: calibration data for everything that follows.
    // Not listed in the manifest since it carries no task labels.
    let rest = generate_rest_capture(layout, cal, spec.seed);
    write_episode(&dir.join(BASELINE_FILE), &rest)?;
    let mut manifest = DatasetManifest::new(spec.seed);
    manifest.config_hash = spec.config_hash.clone();
    for i in 0..spec.episodes {
        let seed = episode_seed(spec.seed, i as u64);
        let ep = generate_one(spec, layout, cal, i, seed);
        let file = episode_file_name(i);
        write_episode(&dir.join(&file), &ep)?;
        manifest.episodes.push(EpisodeMeta {
            file,
            duration_s: ep.duration_s(),
            labels_present: label_names(&ep.labels),
            seed,
        });
    }
    write_manifest(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{read_dataset, read_episode};
    use crate::hand::build_default_layout;
    use crate::synth::default_object_profiles;

    fn tmp_dir(tag: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("skinssl-ds-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn play_dataset_cycles_classes_and_reloads() {
        let layout = build_default_layout();
        let cal = SensorCal::from_seed(&layout, 3, 0.01);
        let profiles = default_object_profiles(8);
        let dir = tmp_dir("play");
        let spec = DatasetSpec {
            kind: DatasetKind::Play,
            episodes: 10,
            episode_duration_s: 1.0,
            profiles: &profiles,
            seed: 21,
            config_hash: Some("deadbeef".into()),
        };
        let manifest = generate_dataset(&spec, &layout, &cal, &dir).unwrap();
        assert_eq!(manifest.episodes.len(), 10);
        assert_eq!(manifest.config_hash.as_deref(), Some("deadbeef"));

        let (loaded, base) = read_dataset(&dir.join("manifest.json")).unwrap();
        assert_eq!(loaded, manifest);
        for (i, meta) in loaded.episodes.iter().enumerate() {
            let ep = read_episode(&base.join(&meta.file)).unwrap();
            assert_eq!(ep.labels.object_class, Some((i % 8) as u32));
            assert_eq!(meta.labels_present, vec!["object_class".to_string()]);
            assert!(ep.duration_s() >= 0.9);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn every_dataset_carries_a_rest_capture() {
        let layout = build_default_layout();
        let cal = SensorCal::from_seed(&layout, 3, 0.01);
        let dir = tmp_dir("rest");
        let spec = DatasetSpec {
            kind: DatasetKind::Force,
            episodes: 1,
            episode_duration_s: 1.0,
            profiles: &[],
            seed: 9,
            config_hash: None,
        };
        generate_dataset(&spec, &layout, &cal, &dir).unwrap();
        let baseline = read_baseline(&dir).unwrap();
        assert_eq!(baseline.flux.len(), 368 * 3);
        // with zero-mean noise averaged over 100 frames the recovered
        // baseline sits close to the sensor bias
        for (b, &bias) in baseline.flux.iter().zip(&cal.bias) {
            assert!((b - bias).abs() < 0.02, "baseline {b} vs bias {bias}");
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn seeds_are_per_episode_and_datasets_reproduce() {
        let layout = build_default_layout();
        let cal = SensorCal::from_seed(&layout, 3, 0.01);
        let dir_a = tmp_dir("rep-a");
        let dir_b = tmp_dir("rep-b");
        let spec = DatasetSpec {
            kind: DatasetKind::Force,
            episodes: 4,
            episode_duration_s: 1.0,
            profiles: &[],
            seed: 77,
            config_hash: None,
        };
        let a = generate_dataset(&spec, &layout, &cal, &dir_a).unwrap();
        let b = generate_dataset(&spec, &layout, &cal, &dir_b).unwrap();
        assert_eq!(a, b);
        let seeds: std::collections::HashSet<u64> =
            a.episodes.iter().map(|e| e.seed).collect();
        assert_eq!(seeds.len(), 4);
        for meta in &a.episodes {
            let ea = std::fs::read(dir_a.join(&meta.file)).unwrap();
            let eb = std::fs::read(dir_b.join(&meta.file)).unwrap();
            assert_eq!(ea, eb);
        }
        std::fs::remove_dir_all(&dir_a).unwrap();
        std::fs::remove_dir_all(&dir_b).unwrap();
    }

    #[test]
    fn pose_and_joystick_datasets_carry_their_labels() {
        let layout = build_default_layout();
        let cal = SensorCal::from_seed(&layout, 3, 0.01);
        for (kind, label) in [
            (DatasetKind::Pose, "pose_se2"),
            (DatasetKind::Joystick, "joystick_rpy"),
        ] {
            let dir = tmp_dir(kind.as_str());
            let spec = DatasetSpec {
                kind,
                episodes: 2,
                episode_duration_s: 2.0,
                profiles: &[],
                seed: 5,
                config_hash: None,
            };
            let manifest = generate_dataset(&spec, &layout, &cal, &dir).unwrap();
            for meta in &manifest.episodes {
                assert_eq!(meta.labels_present, vec![label.to_string()]);
            }
            std::fs::remove_dir_all(&dir).unwrap();
        }
    }
}
