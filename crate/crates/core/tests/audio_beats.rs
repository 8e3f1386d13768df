use std::f64::consts::TAU;

use kinebeat::audio::{
    beats_from_rhythm, estimate_tempo, onset_envelope, pick_beats, read_wav, AudioClip, AudioError, OnsetEnvelope,
    DEFAULT_BPM_MAX, DEFAULT_BPM_MIN, DEFAULT_DELTA, DEFAULT_FFT_WINDOW, DEFAULT_HOP, DEFAULT_PEAK_WINDOW_SECONDS,
};
use kinebeat::synth::{click_positions, click_track, DEFAULT_CLICK_OFFSET};
use kinebeat::RhythmSequence;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn envelope(clip: &AudioClip) -> OnsetEnvelope {
    onset_envelope(clip, DEFAULT_FFT_WINDOW, DEFAULT_HOP).unwrap()
}

fn tempo_of(clip: &AudioClip, lo: f64, hi: f64) -> f64 {
    estimate_tempo(&envelope(clip), lo, hi).unwrap().bpm
}

/// Spectral flux with a naive DFT and explicit zero padding.
fn flux_oracle(x: &[f64], window: usize, hop: usize) -> Vec<f64> {
    let pad = window / 2;
    let mut padded = vec![0.0; pad];
    padded.extend_from_slice(x);
    padded.extend(std::iter::repeat(0.0).take(pad));
    let frames = 1 + (padded.len() - window) / hop;
    let w: Vec<f64> = (0..window).map(|i| 0.5 * (1.0 - (TAU * i as f64 / window as f64).cos())).collect();
    let spectra: Vec<Vec<f64>> = (0..frames)
        .map(|f| {
            (0..=window / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for n in 0..window {
                        let s = padded[f * hop + n] * w[n];
                        let ang = -TAU * (k * n) as f64 / window as f64;
                        re += s * ang.cos();
                        im += s * ang.sin();
                    }
                    (1.0 + 10.0 * (re * re + im * im).sqrt()).ln()
                })
                .collect()
        })
        .collect();
    (0..frames)
        .map(|f| {
            if f == 0 {
                0.0
            } else {
                spectra[f].iter().zip(&spectra[f - 1]).map(|(a, b)| (a - b).max(0.0)).sum()
            }
        })
        .collect()
}

#[test]
fn envelope_matches_naive_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for len in [64, 100, 300] {
        let samples: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let clip = AudioClip { sample_rate: 8000, samples };
        let env = onset_envelope(&clip, 64, 16).unwrap();
        let want = flux_oracle(&clip.samples, 64, 16);
        assert_eq!(env.values.len(), want.len());
        assert_eq!(env.frame_rate, 500.0);
        for (a, b) in env.values.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn steady_sine_has_flat_envelope() {
    // 250 Hz at 8 kHz: 32-sample period divides the hop, so full frames repeat.
    let samples: Vec<f64> = (0..8000).map(|n| 0.5 * (TAU * 250.0 * n as f64 / 8000.0).sin()).collect();
    let env = envelope(&AudioClip { sample_rate: 8000, samples });
    let peak = env.values.iter().cloned().fold(0.0, f64::max);
    let settled = DEFAULT_FFT_WINDOW / DEFAULT_HOP / 2 + 1;
    let tail_start = env.values.len() - settled;
    for v in &env.values[settled..tail_start] {
        assert!(*v <= 1e-6 * peak, "{v} vs peak {peak}");
    }
}

#[test]
fn clicks_make_envelope_maxima() {
    let sr = 22050;
    let clip = click_track(120.0, 5.12, sr, DEFAULT_CLICK_OFFSET);
    let env = envelope(&clip);
    for p in click_positions(120.0, 5.12, sr, DEFAULT_CLICK_OFFSET) {
        let c = (p as f64 / DEFAULT_HOP as f64).round() as usize;
        let lo = c.saturating_sub(10);
        let hi = (c + 10).min(env.values.len() - 1);
        let arg = (lo..=hi).fold(lo, |b, t| if env.values[t] > env.values[b] { t } else { b });
        assert!(arg.abs_diff(c) <= 1, "click frame {c}, envelope max at {arg}");
    }
}

#[test]
fn picks_120_bpm_clicks() {
    let clip = click_track(120.0, 5.12, 22050, DEFAULT_CLICK_OFFSET);
    let beats = pick_beats(&envelope(&clip), 0.3, 0.1).unwrap();
    let clicks: Vec<f64> = click_positions(120.0, 5.12, 22050, DEFAULT_CLICK_OFFSET).iter().map(|&p| p as f64 / 22050.0).collect();
    assert_eq!(beats.len(), clicks.len());
    for (b, c) in beats.times().iter().zip(&clicks) {
        assert!((b - c).abs() <= 0.05, "beat {b} click {c}");
    }
    for w in beats.times().windows(2) {
        assert!((w[1] - w[0] - 0.5).abs() <= 0.05);
    }
}

#[test]
fn tempo_over_period_range() {
    for sr in [22050, 44100] {
        let mut p = 0.34;
        while p <= 1.0 + 1e-9 {
            let bpm = 60.0 / p;
            let got = tempo_of(&click_track(bpm, 5.12, sr, DEFAULT_CLICK_OFFSET), DEFAULT_BPM_MIN, DEFAULT_BPM_MAX);
            assert!((got - bpm).abs() <= 1.0, "sr {sr} period {p}: {got} vs {bpm}");
            p += 0.02;
        }
    }
}

#[test]
fn stretched_clicks_scale_tempo() {
    let base = tempo_of(&click_track(120.0, 5.12, 22050, DEFAULT_CLICK_OFFSET), 40.0, 250.0);
    for s in [0.5, 2.0] {
        let stretched = click_track(120.0 / s, 5.12, 22050, DEFAULT_CLICK_OFFSET);
        let got = tempo_of(&stretched, 40.0, 250.0);
        assert!((got - base / s).abs() <= 1.0, "s={s}: {got} vs {}", base / s);
    }
}

#[test]
fn noise_tempo_is_reproducible() {
    let noise = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        OnsetEnvelope { frame_rate: 86.0, values: (0..500).map(|_| rng.gen_range(0.0..1.0)).collect() }
    };
    let a = estimate_tempo(&noise(3), 60.0, 180.0).unwrap().bpm;
    let b = estimate_tempo(&noise(3), 60.0, 180.0).unwrap().bpm;
    assert_eq!(a.to_bits(), b.to_bits());
    assert!((60.0..=180.0).contains(&a));
}

#[test]
fn silence_has_no_tempo_or_beats() {
    let env = envelope(&AudioClip { sample_rate: 22050, samples: vec![0.0; 5 * 22050] });
    assert!(pick_beats(&env, DEFAULT_PEAK_WINDOW_SECONDS, DEFAULT_DELTA).unwrap().is_empty());
    assert!(matches!(estimate_tempo(&env, 60.0, 180.0), Err(AudioError::NoPeriodicity)));
    let short = OnsetEnvelope { frame_rate: 86.0, values: vec![1.0; 40] };
    assert!(matches!(estimate_tempo(&short, 60.0, 180.0), Err(AudioError::EnvelopeTooShort { .. })));
}

#[test]
fn wav_round_trip_and_pcm16() {
    let clip = click_track(90.0, 1.0, 8000, DEFAULT_CLICK_OFFSET);
    assert_eq!(read_wav(&clip.to_wav_bytes()).unwrap(), clip);

    let spec = hound::WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut cursor = std::io::Cursor::new(Vec::new());
    let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
    for s in [32767i16, 32767, 16384, -16384, 0, -32768] {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
    let mono = read_wav(&cursor.into_inner()).unwrap();
    assert_eq!(mono.samples, vec![32767.0 / 32768.0, 0.0, -0.5]);
}

#[test]
fn rhythm_bits_to_times() {
    let mut bits = vec![0u8; 120];
    bits[30] = 1;
    bits[90] = 1;
    assert_eq!(beats_from_rhythm(&RhythmSequence { fps: 60.0, bits }).times(), &[0.5, 1.5]);
    assert!(beats_from_rhythm(&RhythmSequence { fps: 60.0, bits: vec![0; 10] }).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn polarity_flip_keeps_envelope(samples in prop::collection::vec(-1.0f64..1.0, 600..3000)) {
        let clip = AudioClip { sample_rate: 8000, samples };
        let flipped = AudioClip { sample_rate: 8000, samples: clip.samples.iter().map(|s| -s).collect() };
        prop_assert_eq!(onset_envelope(&clip, 256, 64).unwrap(), onset_envelope(&flipped, 256, 64).unwrap());
    }

    #[test]
    fn attenuation_never_raises_envelope(samples in prop::collection::vec(-1.0f64..1.0, 600..3000), c in 0.01f64..=1.0) {
        let clip = AudioClip { sample_rate: 8000, samples };
        let quiet = AudioClip { sample_rate: 8000, samples: clip.samples.iter().map(|s| c * s).collect() };
        let loud = onset_envelope(&clip, 256, 64).unwrap();
        let soft = onset_envelope(&quiet, 256, 64).unwrap();
        for (l, s) in loud.values.iter().zip(&soft.values) {
            prop_assert!(*s <= l + 1e-12 * l.max(1.0), "{s} > {l}");
        }
    }

    #[test]
    fn picked_beats_ascend_inside_clip(samples in prop::collection::vec(-1.0f64..1.0, 2000..6000), delta in 0.0f64..1.0) {
        let clip = AudioClip { sample_rate: 8000, samples };
        let beats = pick_beats(&onset_envelope(&clip, 256, 64).unwrap(), 0.1, delta).unwrap();
        prop_assert!(beats.times().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(beats.times().iter().all(|&t| t >= 0.0 && t <= clip.duration()));
    }

    #[test]
    fn rhythm_times_count_bits(bits in prop::collection::vec(0u8..=1, 3..400)) {
        let count = bits.iter().filter(|&&b| b == 1).count();
        let times = beats_from_rhythm(&RhythmSequence { fps: 30.0, bits });
        prop_assert_eq!(times.len(), count);
    }
}
