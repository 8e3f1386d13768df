//! Kinematic rhythm extraction.
//!
//! Pipeline: keypoint velocities, direction discretization into `K` angular
//! bins, half-wave rectified bin acceleration, total acceleration summed over
//! joints and bins, and windowed local-maximum picking into a binary rhythm
//! sequence.
//!
//! Index alignment: each difference consumes one leading frame, so
//! acceleration sample `a[t]` is reported at original frame `t + 2`. The
//! first two rhythm bits are always zero.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::{interpolate_low_confidence, PoseError, PoseSequence};

pub const DEFAULT_BINS: usize = 8;
pub const DEFAULT_WINDOW_SECONDS: f64 = 0.3;
pub const DEFAULT_MIN_REL: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum RhythmError {
    #[error("direction bin count must be >= 2, got {0}")]
    TooFewBins(usize),
    #[error("peak window {window} s at {fps} fps spans less than one frame")]
    BadWindow { window: f64, fps: f64 },
    #[error("min_value must be finite and nonnegative, got {0}")]
    BadMinValue(f64),
    #[error("relative threshold must lie in [0, 1], got {0}")]
    BadMinRel(f64),
    #[error("need at least 2 velocity frames, found {0}")]
    TooShort(usize),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

/// Per-frame keypoint velocity, `(T-1) x J` pairs in pixels/frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub fps: f64,
    pub frames: usize,
    pub joints: usize,
    values: Vec<[f64; 2]>,
}

impl VelocityField {
    pub fn get(&self, t: usize, j: usize) -> [f64; 2] {
        self.values[t * self.joints + j]
    }
}

/// Velocity magnitude placed in its direction bin, `(T-1) x J x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalVelocity {
    pub fps: f64,
    pub frames: usize,
    pub joints: usize,
    pub bins: usize,
    values: Vec<f64>,
}

impl DirectionalVelocity {
    pub fn get(&self, t: usize, j: usize, k: usize) -> f64 {
        self.values[(t * self.joints + j) * self.bins + k]
    }

    /// Builds a field from raw `frames x joints x bins` values.
    pub fn from_values(fps: f64, frames: usize, joints: usize, bins: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), frames * joints * bins, "shape mismatch");
        Self {
            fps,
            frames,
            joints,
            bins,
            values,
        }
    }
}

/// Rectified acceleration per bin, `(T-2) x J x K`, all entries >= 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteAcceleration {
    pub fps: f64,
    pub frames: usize,
    pub joints: usize,
    pub bins: usize,
    values: Vec<f64>,
}

impl DiscreteAcceleration {
    pub fn get(&self, t: usize, j: usize, k: usize) -> f64 {
        self.values[(t * self.joints + j) * self.bins + k]
    }

    pub fn from_values(fps: f64, frames: usize, joints: usize, bins: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), frames * joints * bins, "shape mismatch");
        Self {
            fps,
            frames,
            joints,
            bins,
            values,
        }
    }
}

/// Total acceleration, length `T-2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalAcceleration {
    pub fps: f64,
    pub values: Vec<f64>,
}

/// Binary kinematic beat indicator, one bit per original frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhythmSequence {
    pub fps: f64,
    pub bits: Vec<u8>,
}

impl RhythmSequence {
    pub fn beat_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b != 0).map(|(i, _)| i)
    }

    pub fn beat_count(&self) -> usize {
        self.beat_indices().count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("rhythm serialization cannot fail")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

/// Parameters of the windowed local-maximum picker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakConfig {
    /// Full window length in seconds; the half-window is `round(window * fps / 2)` frames.
    pub window: f64,
    /// Absolute floor: a beat needs `a[t] > min_value`.
    pub min_value: f64,
    /// Relative floor as a fraction of `max(a)`.
    pub min_rel: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW_SECONDS,
            min_value: 0.0,
            min_rel: DEFAULT_MIN_REL,
        }
    }
}

impl PeakConfig {
    fn half_window(&self, fps: f64) -> Result<usize, RhythmError> {
        let full = (self.window * fps).round();
        if !(self.window > 0.0) || !(full >= 1.0) {
            return Err(RhythmError::BadWindow {
                window: self.window,
                fps,
            });
        }
        if !(self.min_value.is_finite() && self.min_value >= 0.0) {
            return Err(RhythmError::BadMinValue(self.min_value));
        }
        if !(0.0..=1.0).contains(&self.min_rel) {
            return Err(RhythmError::BadMinRel(self.min_rel));
        }
        Ok((self.window * fps / 2.0).round() as usize)
    }
}

/// End-to-end configuration for [`extract_rhythm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhythmConfig {
    pub bins: usize,
    pub peak: PeakConfig,
    /// `None` skips low-confidence repair.
    pub confidence_threshold: Option<f64>,
}

impl Default for RhythmConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            peak: PeakConfig::default(),
            confidence_threshold: Some(crate::pose::DEFAULT_CONFIDENCE_THRESHOLD),
        }
    }
}

pub fn compute_velocity(seq: &PoseSequence) -> VelocityField {
    let frames = seq.num_frames() - 1;
    let joints = seq.num_joints();
    let mut values = Vec::with_capacity(frames * joints);
    for t in 0..frames {
        for (a, b) in seq.frame(t).iter().zip(seq.frame(t + 1)) {
            values.push([b.x - a.x, b.y - a.y]);
        }
    }
    VelocityField {
        fps: seq.fps(),
        frames,
        joints,
        values,
    }
}

/// Direction bin of a nonzero velocity: the angle `atan2(vy, vx)` mapped to
/// `[0, 2pi)` and split into `bins` equal sectors starting at +x.
pub fn direction_bin(vx: f64, vy: f64, bins: usize) -> usize {
    let mut theta = vy.atan2(vx);
    if theta < 0.0 {
        theta += TAU;
    }
    let k = (theta / (TAU / bins as f64)).floor() as usize;
    k.min(bins - 1)
}

pub fn direction_discretize(vel: &VelocityField, bins: usize) -> Result<DirectionalVelocity, RhythmError> {
    if bins < 2 {
        return Err(RhythmError::TooFewBins(bins));
    }
    let mut values = vec![0.0; vel.values.len() * bins];
    for (cell, &[vx, vy]) in values.chunks_mut(bins).zip(&vel.values) {
        let speed = vx.hypot(vy);
        if speed > 0.0 {
            cell[direction_bin(vx, vy, bins)] = speed;
        }
    }
    Ok(DirectionalVelocity {
        fps: vel.fps,
        frames: vel.frames,
        joints: vel.joints,
        bins,
        values,
    })
}

pub fn discrete_acceleration(dv: &DirectionalVelocity) -> Result<DiscreteAcceleration, RhythmError> {
    if dv.frames < 2 {
        return Err(RhythmError::TooShort(dv.frames));
    }
    let stride = dv.joints * dv.bins;
    let values = dv.values[stride..]
        .iter()
        .zip(&dv.values[..dv.values.len() - stride])
        .map(|(next, prev)| (next - prev).max(0.0))
        .collect();
    Ok(DiscreteAcceleration {
        fps: dv.fps,
        frames: dv.frames - 1,
        joints: dv.joints,
        bins: dv.bins,
        values,
    })
}

/// Sums each time slice joint-major, bin-minor, left to right.
pub fn total_acceleration(aq: &DiscreteAcceleration) -> TotalAcceleration {
    let stride = aq.joints * aq.bins;
    let values = aq
        .values
        .chunks(stride)
        .map(|slice| slice.iter().fold(0.0, |acc, v| acc + v))
        .collect();
    TotalAcceleration { fps: aq.fps, values }
}

/// Marks windowed local maxima of the total acceleration.
///
/// `a[t]` is a beat iff it exceeds `max(min_value, min_rel * max(a))`, is
/// `>=` every sample within the half-window after it, and is strictly
/// greater than every sample within the half-window before it. The strict
/// left comparison keeps only the earliest index of a plateau.
pub fn detect_kinematic_beats(a: &TotalAcceleration, peak: PeakConfig) -> Result<RhythmSequence, RhythmError> {
    let hw = peak.half_window(a.fps)?;
    let n = a.values.len();
    let peak_value = a.values.iter().copied().fold(0.0, f64::max);
    let floor = peak.min_value.max(peak.min_rel * peak_value);
    let mut bits = vec![0u8; n + 2];
    for t in 0..n {
        let v = a.values[t];
        if !(v > floor) {
            continue;
        }
        let left = &a.values[t.saturating_sub(hw)..t];
        let right = &a.values[t + 1..(t + hw + 1).min(n)];
        if left.iter().all(|&u| v > u) && right.iter().all(|&u| v >= u) {
            bits[t + 2] = 1;
        }
    }
    Ok(RhythmSequence { fps: a.fps, bits })
}

/// Runs the whole pipeline on a pose sequence.
pub fn extract_rhythm(seq: &PoseSequence, config: &RhythmConfig) -> Result<RhythmSequence, RhythmError> {
    let acc = total_acceleration_of(seq, config)?;
    detect_kinematic_beats(&acc, config.peak)
}

/// The pipeline up to (and including) total acceleration.
pub fn total_acceleration_of(seq: &PoseSequence, config: &RhythmConfig) -> Result<TotalAcceleration, RhythmError> {
    let repaired;
    let seq = match config.confidence_threshold {
        Some(th) => {
            repaired = interpolate_low_confidence(seq, th)?;
            &repaired
        }
        None => seq,
    };
    let vel = compute_velocity(seq);
    let dv = direction_discretize(&vel, config.bins)?;
    let aq = discrete_acceleration(&dv)?;
    Ok(total_acceleration(&aq))
}
