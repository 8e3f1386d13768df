//! 2D keypoint sequences: parsing, low-confidence repair and clip segmentation.
//!
//! The on-disk format is a single JSON object:
//!
//! ```json
//! { "fps": 60, "frames": [ [ [x, y, confidence], ... ], ... ] }
//! ```
//!
//! Joint ordering is whatever the pose estimator emits (COCO-17 by
//! convention); the joint count is read from the first frame and every other
//! frame must match it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum number of frames: two successive differences must be defined.
pub const MIN_FRAMES: usize = 3;

/// Default clip length in seconds.
pub const DEFAULT_CLIP_SECONDS: f64 = 5.12;

/// Default confidence below which a keypoint is treated as missing.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.3;

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("malformed pose JSON: {0}")]
    Json(String),
    #[error("fps must be finite and positive, got {0}")]
    BadFps(f64),
    #[error("ragged joints at frame {frame}: expected {expected}, found {found}")]
    Ragged {
        frame: usize,
        expected: usize,
        found: usize,
    },
    #[error("frame {frame} has no joints")]
    NoJoints { frame: usize },
    #[error("non-finite coordinate at frame {frame}, joint {joint}")]
    NonFinite { frame: usize, joint: usize },
    #[error("confidence {value} outside [0, 1] at frame {frame}, joint {joint}")]
    BadConfidence {
        frame: usize,
        joint: usize,
        value: f64,
    },
    #[error("need at least {MIN_FRAMES} frames, found {0}")]
    TooShort(usize),
    #[error("confidence threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("joint {joint} has no frame with confidence >= {threshold}")]
    NoValidFrame { joint: usize, threshold: f64 },
    #[error("clip of {seconds} s at {fps} fps has {frames} frames, need at least {MIN_FRAMES}")]
    ClipTooShort { seconds: f64, fps: f64, frames: i64 },
}

/// A single 2D keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence }
    }
}

/// Timed keypoint trajectories for `J` joints, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    fps: f64,
    joints: usize,
    points: Vec<Keypoint>,
}

#[derive(Serialize, Deserialize)]
struct PoseFile {
    fps: f64,
    frames: Vec<Vec<[f64; 3]>>,
}

impl PoseSequence {
    /// Builds a validated sequence from per-frame joint lists.
    pub fn new(fps: f64, frames: Vec<Vec<Keypoint>>) -> Result<Self, PoseError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(PoseError::BadFps(fps));
        }
        let joints = frames.first().map_or(0, Vec::len);
        let mut points = Vec::with_capacity(frames.len() * joints);
        for (t, frame) in frames.into_iter().enumerate() {
            if frame.is_empty() {
                return Err(PoseError::NoJoints { frame: t });
            }
            if frame.len() != joints {
                return Err(PoseError::Ragged {
                    frame: t,
                    expected: joints,
                    found: frame.len(),
                });
            }
            for (j, kp) in frame.iter().enumerate() {
                if !(kp.x.is_finite() && kp.y.is_finite() && kp.confidence.is_finite()) {
                    return Err(PoseError::NonFinite { frame: t, joint: j });
                }
                if !(0.0..=1.0).contains(&kp.confidence) {
                    return Err(PoseError::BadConfidence {
                        frame: t,
                        joint: j,
                        value: kp.confidence,
                    });
                }
            }
            points.extend(frame);
        }
        let seq = Self {
            fps,
            joints,
            points,
        };
        if seq.num_frames() < MIN_FRAMES {
            return Err(PoseError::TooShort(seq.num_frames()));
        }
        Ok(seq)
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn num_frames(&self) -> usize {
        if self.joints == 0 {
            0
        } else {
            self.points.len() / self.joints
        }
    }

    pub fn num_joints(&self) -> usize {
        self.joints
    }

    pub fn point(&self, frame: usize, joint: usize) -> Keypoint {
        self.points[frame * self.joints + joint]
    }

    pub fn frame(&self, frame: usize) -> &[Keypoint] {
        &self.points[frame * self.joints..(frame + 1) * self.joints]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Keypoint]> {
        self.points.chunks(self.joints)
    }

    /// Copies frames `start..end` into a new sequence with the same fps.
    fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            fps: self.fps,
            joints: self.joints,
            points: self.points[start * self.joints..end * self.joints].to_vec(),
        }
    }

    pub fn to_json(&self) -> String {
        let file = PoseFile {
            fps: self.fps,
            frames: self
                .frames()
                .map(|f| f.iter().map(|k| [k.x, k.y, k.confidence]).collect())
                .collect(),
        };
        serde_json::to_string(&file).expect("pose serialization cannot fail")
    }
}

/// Parses the keypoint JSON format and validates every invariant.
pub fn parse_pose_file(bytes: &[u8]) -> Result<PoseSequence, PoseError> {
    let file: PoseFile = serde_json::from_slice(bytes).map_err(|e| PoseError::Json(e.to_string()))?;
    let frames = file
        .frames
        .into_iter()
        .map(|f| f.into_iter().map(|[x, y, c]| Keypoint::new(x, y, c)).collect())
        .collect();
    PoseSequence::new(file.fps, frames)
}

/// Replaces keypoints with confidence below `threshold` by linear
/// interpolation between the nearest valid frames of the same joint.
/// Leading and trailing gaps hold the nearest valid value. Repaired entries
/// get confidence `threshold`, which makes the operation idempotent.
pub fn interpolate_low_confidence(
    seq: &PoseSequence,
    threshold: f64,
) -> Result<PoseSequence, PoseError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PoseError::BadThreshold(threshold));
    }
    let mut out = seq.clone();
    let t_len = seq.num_frames();
    for j in 0..seq.num_joints() {
        let valid: Vec<usize> = (0..t_len)
            .filter(|&t| seq.point(t, j).confidence >= threshold)
            .collect();
        if valid.is_empty() {
            return Err(PoseError::NoValidFrame { joint: j, threshold });
        }
        if valid.len() == t_len {
            continue;
        }
        let mut next = 0;
        for t in 0..t_len {
            if seq.point(t, j).confidence >= threshold {
                continue;
            }
            while next < valid.len() && valid[next] < t {
                next += 1;
            }
            let (x, y) = match (next.checked_sub(1).map(|i| valid[i]), valid.get(next)) {
                (Some(lo), Some(&hi)) => {
                    let a = seq.point(lo, j);
                    let b = seq.point(hi, j);
                    let w = (t - lo) as f64 / (hi - lo) as f64;
                    (a.x + w * (b.x - a.x), a.y + w * (b.y - a.y))
                }
                (Some(lo), None) => (seq.point(lo, j).x, seq.point(lo, j).y),
                (None, Some(&hi)) => (seq.point(hi, j).x, seq.point(hi, j).y),
                (None, None) => unreachable!("valid is non-empty"),
            };
            out.points[t * seq.joints + j] = Keypoint::new(x, y, threshold);
        }
    }
    Ok(out)
}

/// Fixed clip duration used to segment long recordings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec {
    pub duration: f64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            duration: DEFAULT_CLIP_SECONDS,
        }
    }
}

impl ClipSpec {
    pub fn new(duration: f64) -> Self {
        Self { duration }
    }

    /// `round(duration * fps)`; 5.12 s at 60 fps gives 307 frames.
    pub fn frames_per_clip(&self, fps: f64) -> Result<usize, PoseError> {
        let n = (self.duration * fps).round();
        if !n.is_finite() || n < MIN_FRAMES as f64 {
            return Err(PoseError::ClipTooShort {
                seconds: self.duration,
                fps,
                frames: if n.is_finite() { n as i64 } else { 0 },
            });
        }
        Ok(n as usize)
    }
}

/// Splits `seq` into consecutive non-overlapping clips of
/// `round(duration * fps)` frames. A trailing remainder is dropped.
pub fn segment_clips(seq: &PoseSequence, spec: ClipSpec) -> Result<Vec<PoseSequence>, PoseError> {
    let len = spec.frames_per_clip(seq.fps)?;
    let n = seq.num_frames() / len;
    Ok((0..n).map(|i| seq.slice(i * len, (i + 1) * len)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_from_x(xs: &[(f64, f64)]) -> PoseSequence {
        // one joint, (x, confidence)
        let frames = xs
            .iter()
            .map(|&(x, c)| vec![Keypoint::new(x, x, c)])
            .collect();
        PoseSequence::new(60.0, frames).unwrap()
    }

    fn json_with(frames: usize, joints: usize) -> String {
        let frame: Vec<[f64; 3]> = (0..joints).map(|j| [j as f64, 2.0 * j as f64, 0.9]).collect();
        let file = PoseFile {
            fps: 60.0,
            frames: vec![frame; frames],
        };
        serde_json::to_string(&file).unwrap()
    }

    #[test]
    fn parses_full_clip() {
        let seq = parse_pose_file(json_with(308, 17).as_bytes()).unwrap();
        assert_eq!(seq.fps(), 60.0);
        assert_eq!(seq.num_frames(), 308);
        assert_eq!(seq.num_joints(), 17);
    }

    #[test]
    fn ragged_frame_reports_index() {
        let mut file: PoseFile = serde_json::from_str(&json_with(10, 17)).unwrap();
        file.frames[4].pop();
        let err = parse_pose_file(serde_json::to_string(&file).unwrap().as_bytes()).unwrap_err();
        assert_eq!(
            err,
            PoseError::Ragged {
                frame: 4,
                expected: 17,
                found: 16
            }
        );
        assert!(err.to_string().contains("ragged joints at frame 4"));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(parse_pose_file(b"{\"fps\": 60"), Err(PoseError::Json(_))));
        assert!(matches!(parse_pose_file(b"{\"fps\": 60, \"frames\": [[[0,0,NaN]]]}"), Err(PoseError::Json(_))));
        assert!(matches!(parse_pose_file(b"{\"fps\": 60, \"frames\": [[[1e999,0,1]],[[0,0,1]],[[0,0,1]]]}"), Err(_)));
        assert_eq!(parse_pose_file(json_with(2, 3).as_bytes()), Err(PoseError::TooShort(2)));
        let bad_conf = "{\"fps\": 60, \"frames\": [[[0,0,1]],[[0,0,1.5]],[[0,0,1]]]}";
        assert!(matches!(
            parse_pose_file(bad_conf.as_bytes()),
            Err(PoseError::BadConfidence { frame: 1, joint: 0, .. })
        ));
        assert!(matches!(
            parse_pose_file(b"{\"fps\": 0, \"frames\": [[[0,0,1]],[[0,0,1]],[[0,0,1]]]}"),
            Err(PoseError::BadFps(_))
        ));
    }

    #[test]
    fn clip_length_rounds() {
        // 5.12 * 60 = 307.2
        assert_eq!(ClipSpec::default().frames_per_clip(60.0).unwrap(), 307);
        assert!(ClipSpec::new(0.02).frames_per_clip(60.0).is_err());
    }

    #[test]
    fn interpolates_single_dip() {
        let seq = seq_from_x(&[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (10.0, 0.9), (99.0, 0.1), (14.0, 0.9)]);
        let out = interpolate_low_confidence(&seq, 0.3).unwrap();
        assert_eq!(out.point(5, 0).x, 12.0);
        assert_eq!(out.point(5, 0).y, 12.0);
        assert_eq!(out.point(5, 0).confidence, 0.3);
        assert_eq!(out.point(4, 0), seq.point(4, 0));
    }

    #[test]
    fn zero_threshold_is_identity() {
        let seq = seq_from_x(&[(1.0, 0.0), (2.0, 0.5), (3.0, 0.0)]);
        assert_eq!(interpolate_low_confidence(&seq, 0.0).unwrap(), seq);
    }

    #[test]
    fn boundary_gaps_hold() {
        let frames = vec![
            vec![Keypoint::new(1.0, 1.0, 0.0)],
            vec![Keypoint::new(2.0, 2.0, 0.1)],
            vec![Keypoint::new(3.0, 3.0, 0.2)],
            vec![Keypoint::new(7.0, 7.0, 0.9)],
            vec![Keypoint::new(8.0, 9.0, 0.9)],
            vec![Keypoint::new(0.0, 0.0, 0.0)],
        ];
        let seq = PoseSequence::new(30.0, frames).unwrap();
        let out = interpolate_low_confidence(&seq, 0.3).unwrap();
        for t in 0..3 {
            assert_eq!((out.point(t, 0).x, out.point(t, 0).y), (7.0, 7.0));
        }
        assert_eq!((out.point(5, 0).x, out.point(5, 0).y), (8.0, 9.0));
    }

    #[test]
    fn joint_without_valid_frame_is_named() {
        let frames = vec![vec![Keypoint::new(0.0, 0.0, 1.0), Keypoint::new(0.0, 0.0, 0.1)]; 4];
        let seq = PoseSequence::new(30.0, frames).unwrap();
        assert_eq!(
            interpolate_low_confidence(&seq, 0.3),
            Err(PoseError::NoValidFrame { joint: 1, threshold: 0.3 })
        );
        assert!(interpolate_low_confidence(&seq, 1.5).is_err());
    }

    #[test]
    fn segments_with_remainder() {
        let seq = parse_pose_file(json_with(1000, 2).as_bytes()).unwrap();
        let clips = segment_clips(&seq, ClipSpec::default()).unwrap();
        // 1000 = 3 * 307 + 79
        assert_eq!(clips.len(), 3);
        assert_eq!(1000 - clips.len() * 307, 79);
        assert!(clips.iter().all(|c| c.num_frames() == 307 && c.fps() == 60.0));

        let exact = parse_pose_file(json_with(307, 2).as_bytes()).unwrap();
        assert_eq!(segment_clips(&exact, ClipSpec::default()).unwrap().len(), 1);
        let short = parse_pose_file(json_with(306, 2).as_bytes()).unwrap();
        assert!(segment_clips(&short, ClipSpec::default()).unwrap().is_empty());
    }
}
