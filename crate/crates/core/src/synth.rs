//! Synthetic signals with known ground truth, used by tests, the CLI
//! fixture generators and the browser demo.

use crate::audio::AudioClip;
use crate::pose::{Keypoint, PoseSequence};

/// Offset of the first click, so the first onset is not swallowed by the
/// zero flux of frame 0.
pub const DEFAULT_CLICK_OFFSET: f64 = 0.1;

/// Sample positions of clicks every `60 / bpm` seconds starting at `offset`.
pub fn click_positions(bpm: f64, duration: f64, sample_rate: u32, offset: f64) -> Vec<usize> {
    let period = 60.0 / bpm;
    let len = (duration * sample_rate as f64).round() as usize;
    (0..)
        .map(|i| ((offset + i as f64 * period) * sample_rate as f64).round() as usize)
        .take_while(|&p| p < len)
        .collect()
}

/// Unit impulses at [`click_positions`] over silence.
pub fn click_track(bpm: f64, duration: f64, sample_rate: u32, offset: f64) -> AudioClip {
    let len = (duration * sample_rate as f64).round() as usize;
    let mut samples = vec![0.0; len];
    for p in click_positions(bpm, duration, sample_rate, offset) {
        samples[p] = 1.0;
    }
    AudioClip { sample_rate, samples }
}

/// A single joint moving back and forth along x at constant speed,
/// reversing direction every `half_period` frames. Reversals happen at
/// frames `half_period, 2 * half_period, ...`.
pub fn oscillator(frames: usize, half_period: usize, speed: f64, fps: f64) -> PoseSequence {
    let mut x = 0.0;
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        out.push(vec![Keypoint::new(x, 100.0, 1.0)]);
        let dir = if (t / half_period) % 2 == 0 { 1.0 } else { -1.0 };
        x += dir * speed;
    }
    PoseSequence::new(fps, out).expect("oscillator is a valid sequence")
}

/// Frames at which [`oscillator`] reverses direction.
pub fn oscillator_reversals(frames: usize, half_period: usize) -> Vec<usize> {
    (1..).map(|i| i * half_period).take_while(|&t| t < frames).collect()
}
