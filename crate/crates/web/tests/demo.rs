use kinebeat_web::{align_demo, rhythm_demo, tempo_demo};

#[test]
fn rhythm_beats_follow_reversals() {
    for half in [20, 30, 45] {
        let d = rhythm_demo(half, 8, 0.3, 0.05).unwrap();
        assert_eq!(d.position.len(), 308);
        assert_eq!(d.acceleration.len(), 306);
        assert_eq!(d.beats.len(), d.reversals.len(), "half period {half}");
        assert!(d.beats.iter().zip(&d.reversals).all(|(b, r)| b.abs_diff(*r) <= 1));
    }
    assert!(rhythm_demo(0, 8, 0.3, 0.05).is_err());
    assert!(rhythm_demo(30, 0, 0.3, 0.05).is_err());
}

#[test]
fn alignment_with_and_without_phase_search() {
    let same = align_demo(120.0, 120.0, 0.0, 0.2, false).unwrap();
    assert_eq!(same.report.f1, 1.0);
    assert!(same.phase_offset.is_none());

    let shifted = align_demo(120.0, 120.0, 0.25, 0.2, true).unwrap();
    assert_eq!(shifted.report.b_a, 0);
    assert!((shifted.phase_offset.unwrap() + 0.25).abs() <= 0.01);
    assert_eq!(shifted.aligned.unwrap().f1, 1.0);

    // twice as many generated beats: every reference beat is hit, half the generated ones are
    let double = align_demo(240.0, 120.0, 0.0, 0.1, false).unwrap();
    assert_eq!(double.report.bhs, 1.0);
    assert!((double.report.bcs - 0.5).abs() < 0.06);
    assert!(align_demo(0.0, 120.0, 0.0, 0.2, false).is_err());
}

#[test]
fn tempo_from_click_tracks() {
    for bpm in [75.0, 100.0, 128.0, 160.0] {
        let d = tempo_demo(bpm, 0.1).unwrap();
        assert!((d.bpm.unwrap() - bpm).abs() <= 1.0, "{bpm}: {:?}", d.bpm);
        assert_eq!(d.beats.len(), d.clicks.len());
        // a beat sits on the STFT frame nearest its click
        for (b, c) in d.beats.iter().zip(&d.clicks) {
            let frame = (b * d.frame_rate).round() as i64;
            assert!((frame - (c * d.frame_rate).round() as i64).abs() <= 1, "{bpm}: beat {b} click {c}");
        }
    }
}

#[test]
fn json_output_shape() {
    let json = serde_json::to_value(tempo_demo(120.0, 0.1).unwrap()).unwrap();
    for key in ["frame_rate", "envelope", "clicks", "beats", "bpm"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}
