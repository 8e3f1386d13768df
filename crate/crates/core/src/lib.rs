//! Motion-to-rhythm extraction and dance/music beat alignment.
//!
//! - [`pose`]: keypoint JSON parsing, low-confidence repair, clip segmentation
//! - [`rhythm`]: kinematic beats from direction-binned rectified acceleration
//! - [`audio`]: WAV decoding, spectral-flux onsets, beat picking, tempo
//! - [`metrics`]: BCS / BHS / F1 / tempo difference and phase alignment
//! - [`inversion`]: toy encoder-based textual inversion with gradient checks
//! - [`synth`]: click tracks and oscillating poses with known beats

pub mod audio;
pub mod inversion;
pub mod metrics;
pub mod pose;
pub mod rhythm;
pub mod synth;

pub use audio::{AudioClip, BeatList, OnsetEnvelope, TempoEstimate};
pub use metrics::{AlignmentReport, AlignmentSummary, PhaseAlignment, PhaseSearch};
pub use pose::{ClipSpec, Keypoint, PoseSequence};
pub use rhythm::{RhythmConfig, RhythmSequence};
