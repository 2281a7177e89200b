//! In-memory play corpus: calibrated, resampled episode streams that
//! serve 0.1 s windows on demand. Windows are materialized lazily
//! (positions via forward kinematics per request) so an hours-long
//! corpus costs only its flux frames in memory.

use crate::error::{ModelError, Result};
use skinssl_sim::dataset::read_baseline;
use skinssl_sim::format::read_dataset;
use skinssl_sim::hand::{HandLayout, JointState};
use skinssl_sim::signal::{
    resample_100hz, subtract_baseline, window_at, CalibratedStream, TactileWindow,
    FRAMES_PER_WINDOW,
};

/// Default divisor applied after baseline subtraction; chosen so
/// typical contact responses land in roughly unit range.
pub const DEFAULT_CAL_SCALE: f32 = 2.0;

#[derive(Debug, Clone)]
pub struct PlayEpisode {
    pub stream: CalibratedStream,
    pub joints: Vec<(f64, JointState)>,
    pub object_class: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct PlayCorpus {
    pub episodes: Vec<PlayEpisode>,
}

impl PlayCorpus {
    /// Read every episode in a dataset, subtract its rest-capture
    /// baseline, and resample to the uniform 100 Hz grid.
    pub fn load(manifest_path: &std::path::Path, scale: f32) -> Result<PlayCorpus> {
        let (manifest, dir) = read_dataset(manifest_path)?;
        let baseline = read_baseline(&dir)?;
        let mut episodes = Vec::with_capacity(manifest.episodes.len());
        for meta in &manifest.episodes {
            let ep = skinssl_sim::format::read_episode(&dir.join(&meta.file))?;
            let cal = subtract_baseline(&ep.raw, &baseline, scale)?;
            let stream = resample_100hz(&cal)?;
            episodes.push(PlayEpisode {
                stream,
                joints: ep.joints,
                object_class: ep.labels.object_class,
            });
        }
        if episodes.is_empty() {
            return Err(ModelError::InsufficientData("dataset has no episodes".into()));
        }
        Ok(PlayCorpus { episodes })
    }

    pub fn from_episodes(episodes: Vec<PlayEpisode>) -> Result<PlayCorpus> {
        if episodes.is_empty() {
            return Err(ModelError::InsufficientData("corpus needs episodes".into()));
        }
        Ok(PlayCorpus { episodes })
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    /// Number of valid window start frames in an episode.
    pub fn window_starts(&self, episode: usize) -> usize {
        let frames = self.episodes[episode].stream.frames.len();
        frames.saturating_sub(FRAMES_PER_WINDOW - 1)
    }

    pub fn window(
        &self,
        layout: &HandLayout,
        episode: usize,
        start: usize,
    ) -> Result<TactileWindow> {
        let ep = &self.episodes[episode];
        Ok(window_at(&ep.stream, &ep.joints, layout, start)?)
    }

    /// Distinct object classes present (0 when unlabeled).
    pub fn class_count(&self) -> usize {
        self.episodes
            .iter()
            .filter_map(|e| e.object_class)
            .max()
            .map(|m| m as usize + 1)
            .unwrap_or(0)
    }

    pub fn total_duration_s(&self) -> f64 {
        self.episodes
            .iter()
            .map(|e| match e.stream.frames.as_slice() {
                [] | [_] => 0.0,
                [first, .., last] => last.timestamp - first.timestamp,
            })
            .sum()
    }
}
