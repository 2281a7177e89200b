//! Sensorized-hand simulation: kinematic hand model with 368 taxels,
//! raw-signal conditioning (baseline subtraction, 100 Hz resampling,
//! windowing), synthetic contact rendering, and on-disk episode
//! datasets.

pub mod dataset;
pub mod error;
pub mod format;
pub mod hand;
pub mod rng;
pub mod signal;
pub mod synth;
pub mod transform;

pub use error::{Result, SimError};
pub use hand::{
    build_default_layout, rest_baseline_config, HandLayout, JointState, PadType,
    TaxelPositions, JOINT_COUNT, PAD_COUNT, TAXEL_COUNT,
};
pub use signal::{
    baseline_from_frames, make_windows, resample_100hz, subtract_baseline, window_at,
    BaselineFrame, CalibratedStream, RawSample, TactileWindow, FRAMES_PER_WINDOW, RESAMPLE_DT,
};
pub use synth::{EpisodeRecord, Labels, SensorCal};
