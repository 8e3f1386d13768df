//! Browser demo over the kinebeat library.
//!
//! Each exported function takes plain numbers from the page's sliders and
//! returns a JSON string the page draws. The `*_demo` functions hold the
//! logic and are callable natively; the `#[wasm_bindgen]` wrappers only
//! serialize.

use kinebeat::audio::{self, BeatList};
use kinebeat::metrics::{self, AlignmentReport, PhaseSearch};
use kinebeat::rhythm::{self, PeakConfig, RhythmConfig};
use kinebeat::synth;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const POSE_FPS: f64 = 60.0;
pub const POSE_FRAMES: usize = 308;
pub const SAMPLE_RATE: u32 = 22050;
pub const CLIP_SECONDS: f64 = 5.12;

#[derive(Debug, Serialize)]
pub struct RhythmDemo {
    pub fps: f64,
    /// x coordinate of the joint per frame.
    pub position: Vec<f64>,
    /// Total acceleration; entry `i` belongs to frame `i + 2`.
    pub acceleration: Vec<f64>,
    pub beats: Vec<usize>,
    pub reversals: Vec<usize>,
}

/// Oscillating joint with a reversal every `half_period` frames.
pub fn rhythm_demo(half_period: usize, bins: usize, window: f64, min_rel: f64) -> Result<RhythmDemo, String> {
    if half_period == 0 {
        return Err("half period must be at least one frame".into());
    }
    let seq = synth::oscillator(POSE_FRAMES, half_period, 4.0, POSE_FPS);
    let config = RhythmConfig {
        bins,
        peak: PeakConfig {
            window,
            min_value: 0.0,
            min_rel,
        },
        confidence_threshold: None,
    };
    let acc = rhythm::total_acceleration_of(&seq, &config).map_err(|e| e.to_string())?;
    let r = rhythm::extract_rhythm(&seq, &config).map_err(|e| e.to_string())?;
    Ok(RhythmDemo {
        fps: POSE_FPS,
        position: (0..seq.num_frames()).map(|t| seq.point(t, 0).x).collect(),
        acceleration: acc.values,
        beats: r.beat_indices().collect(),
        reversals: synth::oscillator_reversals(POSE_FRAMES, half_period),
    })
}

#[derive(Debug, Serialize)]
pub struct AlignDemo {
    pub generated: Vec<f64>,
    pub reference: Vec<f64>,
    pub report: AlignmentReport,
    /// Present when the phase search was requested.
    pub phase_offset: Option<f64>,
    pub aligned: Option<AlignmentReport>,
}

fn grid(bpm: f64, start: f64) -> Vec<f64> {
    let period = 60.0 / bpm;
    (0..)
        .map(|i| start + i as f64 * period)
        .take_while(|&t| t < CLIP_SECONDS)
        .filter(|&t| t >= 0.0)
        .collect()
}

/// Two regular beat grids, the generated one shifted by `shift` seconds.
pub fn align_demo(gen_bpm: f64, ref_bpm: f64, shift: f64, tolerance: f64, phase: bool) -> Result<AlignDemo, String> {
    if !(gen_bpm > 0.0 && ref_bpm > 0.0) {
        return Err("tempi must be positive".into());
    }
    let generated = grid(gen_bpm, 0.3 + shift);
    let reference = grid(ref_bpm, 0.3);
    let g = BeatList::new(generated.clone()).map_err(|e| e.to_string())?;
    let r = BeatList::new(reference.clone()).map_err(|e| e.to_string())?;
    let report = metrics::match_beats(&g, &r, tolerance).map_err(|e| e.to_string())?;
    let (phase_offset, aligned) = if phase {
        let search = PhaseSearch {
            tolerance,
            ..PhaseSearch::default()
        };
        let found = metrics::phase_align(&g, &r, search).map_err(|e| e.to_string())?;
        (Some(found.offset), Some(found.report))
    } else {
        (None, None)
    };
    Ok(AlignDemo {
        generated,
        reference,
        report,
        phase_offset,
        aligned,
    })
}

#[derive(Debug, Serialize)]
pub struct TempoDemo {
    pub frame_rate: f64,
    pub envelope: Vec<f64>,
    pub clicks: Vec<f64>,
    pub beats: Vec<f64>,
    /// `None` when the envelope has no periodicity in range.
    pub bpm: Option<f64>,
}

/// Click track at `bpm` through onset detection, beat picking and tempo estimation.
pub fn tempo_demo(bpm: f64, delta: f64) -> Result<TempoDemo, String> {
    if !(bpm > 0.0) {
        return Err("tempo must be positive".into());
    }
    let clip = synth::click_track(bpm, CLIP_SECONDS, SAMPLE_RATE, synth::DEFAULT_CLICK_OFFSET);
    let env = audio::onset_envelope(&clip, audio::DEFAULT_FFT_WINDOW, audio::DEFAULT_HOP).map_err(|e| e.to_string())?;
    let beats = audio::pick_beats(&env, audio::DEFAULT_PEAK_WINDOW_SECONDS, delta).map_err(|e| e.to_string())?;
    let estimate = audio::estimate_tempo(&env, 40.0, 250.0).ok().map(|t| t.bpm);
    Ok(TempoDemo {
        frame_rate: env.frame_rate,
        clicks: synth::click_positions(bpm, CLIP_SECONDS, SAMPLE_RATE, synth::DEFAULT_CLICK_OFFSET)
            .into_iter()
            .map(|p| p as f64 / SAMPLE_RATE as f64)
            .collect(),
        envelope: env.values,
        beats: beats.times().to_vec(),
        bpm: estimate,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = rhythmDemo)]
pub fn rhythm_demo_js(half_period: usize, bins: usize, window: f64, min_rel: f64) -> Result<String, JsError> {
    to_js(rhythm_demo(half_period, bins, window, min_rel))
}

#[wasm_bindgen(js_name = alignDemo)]
pub fn align_demo_js(gen_bpm: f64, ref_bpm: f64, shift: f64, tolerance: f64, phase: bool) -> Result<String, JsError> {
    to_js(align_demo(gen_bpm, ref_bpm, shift, tolerance, phase))
}

#[wasm_bindgen(js_name = tempoDemo)]
pub fn tempo_demo_js(bpm: f64, delta: f64) -> Result<String, JsError> {
    to_js(tempo_demo(bpm, delta))
}
