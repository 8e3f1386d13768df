//! Musical beat and tempo detection from audio.
//!
//! The onset envelope is log-compressed spectral flux over a centred Hann
//! STFT: frame `t` is centred on sample `t * hop` (the signal is zero padded
//! by half a window on both sides), so frame times `t / frame_rate` line up
//! with the audio timeline.

use std::io::Cursor;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rhythm::RhythmSequence;

pub const DEFAULT_FFT_WINDOW: usize = 1024;
pub const DEFAULT_HOP: usize = 256;
pub const DEFAULT_PEAK_WINDOW_SECONDS: f64 = 0.3;
pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_BPM_MIN: f64 = 60.0;
pub const DEFAULT_BPM_MAX: f64 = 180.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("invalid WAV data: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported WAV format: {0}")]
    Unsupported(String),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("STFT needs window >= hop >= 1, got window {window}, hop {hop}")]
    BadStft { window: usize, hop: usize },
    #[error("clip of {samples} samples yields {frames} frames, need at least 2")]
    TooShort { samples: usize, frames: usize },
    #[error("peak window must be positive, got {0}")]
    BadPeakWindow(f64),
    #[error("tempo range must satisfy 0 < min < max, got {min}..{max}")]
    BadTempoRange { min: f64, max: f64 },
    #[error("envelope of {len} frames is too short for a lag of {lag} frames")]
    EnvelopeTooShort { len: usize, lag: usize },
    #[error("no periodicity found in the onset envelope")]
    NoPeriodicity,
    #[error("beat times must be finite, nonnegative and strictly ascending")]
    BadBeats,
}

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl AudioClip {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Encodes as 32-bit float mono WAV.
    pub fn to_wav_bytes(&self) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory WAV writer");
            for &s in &self.samples {
                writer.write_sample(s as f32).expect("in-memory WAV write");
            }
            writer.finalize().expect("in-memory WAV finalize");
        }
        cursor.into_inner()
    }
}

/// Decodes 16-bit PCM or 32-bit float WAV with one or two channels.
/// Stereo is averaged to mono; 16-bit samples are divided by 32768.
pub fn read_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    let mut reader = hound::WavReader::new(Cursor::new(bytes))?;
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(AudioError::Unsupported(format!("{} channels", spec.channels)));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (format, bits) => {
            return Err(AudioError::Unsupported(format!("{format:?} with {bits} bits per sample")));
        }
    };
    if let Some(i) = interleaved.iter().position(|v| !v.is_finite()) {
        return Err(AudioError::NonFinite(i));
    }
    let channels = spec.channels as usize;
    let samples = interleaved
        .chunks_exact(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(AudioClip {
        sample_rate: spec.sample_rate,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnsetEnvelope {
    /// Frames per second, `sample_rate / hop`.
    pub frame_rate: f64,
    pub values: Vec<f64>,
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

/// Number of centred STFT frames for `len` samples.
pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    let padded = len + 2 * (window / 2);
    if padded < window {
        0
    } else {
        1 + (padded - window) / hop
    }
}

/// Log-compressed spectral flux: `sum_f max(0, L_t(f) - L_{t-1}(f))` with
/// `L = ln(1 + 10 |X|)`. The first frame's flux is 0.
pub fn onset_envelope(clip: &AudioClip, window: usize, hop: usize) -> Result<OnsetEnvelope, AudioError> {
    if hop == 0 || window < hop {
        return Err(AudioError::BadStft { window, hop });
    }
    let frames = frame_count(clip.samples.len(), window, hop);
    if frames < 2 {
        return Err(AudioError::TooShort {
            samples: clip.samples.len(),
            frames,
        });
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let win = hann(window);
    let pad = window / 2;
    let bins = window / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let mut prev = vec![0.0; bins];
    let mut cur = vec![0.0; bins];
    let mut values = Vec::with_capacity(frames);
    for t in 0..frames {
        let start = (t * hop) as isize - pad as isize;
        for (n, slot) in buf.iter_mut().enumerate() {
            let idx = start + n as isize;
            let s = if idx >= 0 && (idx as usize) < clip.samples.len() {
                clip.samples[idx as usize]
            } else {
                0.0
            };
            *slot = Complex::new(s * win[n], 0.0);
        }
        fft.process(&mut buf);
        for (c, x) in cur.iter_mut().zip(&buf) {
            *c = (1.0 + 10.0 * x.norm()).ln();
        }
        let flux = if t == 0 {
            0.0
        } else {
            cur.iter().zip(&prev).map(|(c, p)| (c - p).max(0.0)).sum()
        };
        values.push(flux);
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(OnsetEnvelope {
        frame_rate: clip.sample_rate as f64 / hop as f64,
        values,
    })
}

/// Strictly ascending beat times in seconds.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BeatList {
    #[serde(rename = "beats_sec")]
    times: Vec<f64>,
}

impl BeatList {
    pub fn new(times: Vec<f64>) -> Result<Self, AudioError> {
        let ok = times.iter().all(|t| t.is_finite() && *t >= 0.0) && times.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(Self { times })
        } else {
            Err(AudioError::BadBeats)
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("beat serialization cannot fail")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        #[derive(Deserialize)]
        struct Raw {
            beats_sec: Vec<f64>,
        }
        let raw: Raw = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        Self::new(raw.beats_sec).map_err(|e| e.to_string())
    }
}

/// Picks beats as windowed maxima of the envelope that clear an adaptive
/// threshold: `env[t] >= local_mean + delta * global_std` and `env[t] > 0`.
/// Within a window the earliest index of a plateau wins.
pub fn pick_beats(env: &OnsetEnvelope, window: f64, delta: f64) -> Result<BeatList, AudioError> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(AudioError::BadPeakWindow(window));
    }
    let v = &env.values;
    let n = v.len();
    let hw = (window * env.frame_rate / 2.0).round() as usize;
    let mean = v.iter().sum::<f64>() / n.max(1) as f64;
    let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n.max(1) as f64).sqrt();
    let mut times = Vec::new();
    for t in 0..n {
        let x = v[t];
        if !(x > 0.0) {
            continue;
        }
        let lo = t.saturating_sub(hw);
        let hi = (t + hw + 1).min(n);
        if !(v[lo..t].iter().all(|&u| x > u) && v[t + 1..hi].iter().all(|&u| x >= u)) {
            continue;
        }
        let local_mean = v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        if x >= local_mean + delta * std {
            times.push(t as f64 / env.frame_rate);
        }
    }
    Ok(BeatList { times })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempoEstimate {
    pub bpm: f64,
}

/// Autocorrelation tempo estimate over lags spanning `[bpm_min, bpm_max]`.
///
/// Onsets of a period that is not a whole number of frames land on two
/// adjacent lags, so each candidate lag `L` is scored by
/// `ac(L-1) + ac(L) + ac(L+1)` of the mean-removed envelope. The best lag
/// (ties go to the longer lag, i.e. the slower tempo) is refined to the
/// centroid of the positive raw autocorrelation over `L-1..=L+1`.
pub fn estimate_tempo(env: &OnsetEnvelope, bpm_min: f64, bpm_max: f64) -> Result<TempoEstimate, AudioError> {
    if !(bpm_min > 0.0 && bpm_min < bpm_max && bpm_max.is_finite()) {
        return Err(AudioError::BadTempoRange {
            min: bpm_min,
            max: bpm_max,
        });
    }
    let fr = env.frame_rate;
    let lag_min = ((60.0 * fr / bpm_max).ceil() as usize).max(2);
    let lag_max = (60.0 * fr / bpm_min).floor() as usize;
    let n = env.values.len();
    if lag_max + 1 >= n || lag_max < lag_min {
        return Err(AudioError::EnvelopeTooShort { len: n, lag: lag_max + 1 });
    }
    let mean = env.values.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = env.values.iter().map(|v| v - mean).collect();
    let ac: Vec<f64> = (0..=lag_max + 1)
        .map(|lag| x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum())
        .collect();

    let mut best_lag = lag_min;
    let mut best = f64::NEG_INFINITY;
    for lag in lag_min..=lag_max {
        let score = ac[lag - 1] + ac[lag] + ac[lag + 1];
        if score >= best {
            best = score;
            best_lag = lag;
        }
    }
    if !(best > 0.0) {
        return Err(AudioError::NoPeriodicity);
    }
    let (mut weight, mut moment) = (0.0, 0.0);
    for lag in best_lag - 1..=best_lag + 1 {
        let w = ac[lag].max(0.0);
        weight += w;
        moment += w * lag as f64;
    }
    let lag = if weight > 0.0 { moment / weight } else { best_lag as f64 };
    let bpm = (60.0 * fr / lag).clamp(bpm_min, bpm_max);
    Ok(TempoEstimate { bpm })
}

/// Converts kinematic beat bits to beat times `t / fps`.
pub fn beats_from_rhythm(r: &RhythmSequence) -> BeatList {
    BeatList {
        times: r.beat_indices().map(|t| t as f64 / r.fps).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_i16(channels: u16, rate: u32, samples: &[i16]) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        cursor.into_inner()
    }

    #[test]
    fn reads_silence() {
        let clip = read_wav(&wav_i16(1, 22050, &vec![0; 22050])).unwrap();
        assert_eq!(clip.sample_rate, 22050);
        assert_eq!(clip.samples, vec![0.0; 22050]);
    }

    #[test]
    fn full_scale_16_bit() {
        let clip = read_wav(&wav_i16(1, 8000, &[32767, -32768])).unwrap();
        assert_eq!(clip.samples, vec![32767.0 / 32768.0, -1.0]);
    }

    #[test]
    fn stereo_is_averaged() {
        let clip = read_wav(&wav_i16(2, 8000, &[16384, -16384, 100, 300])).unwrap();
        assert_eq!(clip.samples, vec![0.0, 200.0 / 32768.0]);
    }

    #[test]
    fn float_round_trip() {
        let clip = AudioClip {
            sample_rate: 16000,
            samples: vec![0.5, -0.25, 0.0],
        };
        assert_eq!(read_wav(&clip.to_wav_bytes()).unwrap(), clip);
    }

    #[test]
    fn rejects_unsupported_and_truncated() {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&cursor.into_inner()), Err(AudioError::Unsupported(_))));

        let bytes = wav_i16(1, 8000, &[1; 100]);
        assert!(read_wav(&bytes[..bytes.len() - 51]).is_err());
        assert!(read_wav(b"RIFF1234WAVEjunk").is_err());
    }

    #[test]
    fn silence_gives_zero_envelope() {
        let clip = AudioClip {
            sample_rate: 22050,
            samples: vec![0.0; 3 * 22050],
        };
        let env = onset_envelope(&clip, 1024, 256).unwrap();
        assert_eq!(env.values.len(), 1 + 3 * 22050 / 256);
        assert!(env.values.iter().all(|&v| v == 0.0));
        assert!(pick_beats(&env, 0.3, 0.1).unwrap().is_empty());
        assert!(matches!(estimate_tempo(&env, 60.0, 180.0), Err(AudioError::NoPeriodicity)));
    }

    #[test]
    fn stft_argument_checks() {
        let clip = AudioClip {
            sample_rate: 8000,
            samples: vec![0.0; 100],
        };
        assert!(matches!(onset_envelope(&clip, 128, 256), Err(AudioError::BadStft { .. })));
        assert!(matches!(onset_envelope(&clip, 128, 0), Err(AudioError::BadStft { .. })));
        assert!(matches!(onset_envelope(&clip, 1024, 512), Err(AudioError::TooShort { .. })));
    }

    #[test]
    fn single_spike_single_beat() {
        let mut values = vec![0.0; 100];
        values[40] = 3.0;
        let env = OnsetEnvelope {
            frame_rate: 50.0,
            values,
        };
        assert_eq!(pick_beats(&env, 0.3, 0.1).unwrap().times(), &[0.8]);
    }

    #[test]
    fn beat_list_validation() {
        assert!(BeatList::new(vec![1.0, 1.0]).is_err());
        assert!(BeatList::new(vec![-0.1]).is_err());
        assert!(BeatList::new(vec![f64::NAN]).is_err());
        let b = BeatList::from_json(br#"{"beats_sec":[0.5,1.5]}"#).unwrap();
        assert_eq!(b.to_json(), r#"{"beats_sec":[0.5,1.5]}"#);
        assert!(BeatList::from_json(br#"{"beats_sec":[2.0,1.5]}"#).is_err());
    }

    #[test]
    fn rhythm_bits_to_times() {
        let mut bits = vec![0u8; 120];
        bits[30] = 1;
        bits[90] = 1;
        let r = RhythmSequence { fps: 60.0, bits };
        assert_eq!(beats_from_rhythm(&r).times(), &[0.5, 1.5]);
        let empty = RhythmSequence { fps: 60.0, bits: vec![0; 10] };
        assert!(beats_from_rhythm(&empty).is_empty());
    }

    #[test]
    fn tempo_range_checks() {
        let env = OnsetEnvelope {
            frame_rate: 100.0,
            values: vec![1.0; 50],
        };
        assert!(matches!(estimate_tempo(&env, 180.0, 60.0), Err(AudioError::BadTempoRange { .. })));
        assert!(matches!(estimate_tempo(&env, 60.0, 180.0), Err(AudioError::EnvelopeTooShort { .. })));
    }
}
