//! Brute-force reference implementations shared by the integration tests.
//! They are written from the definitions, not from the library code.

#![allow(dead_code)]

use std::f64::consts::PI;

use kinebeat::inversion::{EncoderParams, FrozenModel, RhythmEncoderParams, Target, ToyGenerator};
use kinebeat::pose::{Keypoint, PoseSequence};

/// Rhythm bits computed straight from keypoints with nested loops.
/// `pts[t][j] = (x, y)`; no confidence repair.
pub fn rhythm_oracle(pts: &[Vec<(f64, f64)>], fps: f64, bins: usize, window: f64, min_value: f64, min_rel: f64) -> Vec<u8> {
    let t_len = pts.len();
    let joints = pts[0].len();
    // directional velocity for frame pairs (t-1, t), t = 1..T
    let mut vq = vec![vec![vec![0.0f64; bins]; joints]; t_len];
    for t in 1..t_len {
        for j in 0..joints {
            let vx = pts[t][j].0 - pts[t - 1][j].0;
            let vy = pts[t][j].1 - pts[t - 1][j].1;
            let mag = (vx * vx + vy * vy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut theta = vy.atan2(vx);
            if theta < 0.0 {
                theta += 2.0 * PI;
            }
            let mut k = (theta / (2.0 * PI / bins as f64)).floor() as usize;
            if k >= bins {
                k = bins - 1;
            }
            vq[t][j][k] = mag;
        }
    }
    // total rectified acceleration for frames t = 2..T
    let mut a = Vec::new();
    for t in 2..t_len {
        let mut total = 0.0;
        for j in 0..joints {
            for k in 0..bins {
                let d = vq[t][j][k] - vq[t - 1][j][k];
                total += if d > 0.0 { d } else { 0.0 };
            }
        }
        a.push(total);
    }
    let mut bits = vec![0u8; t_len];
    let hw = (window * fps / 2.0).round() as i64;
    let peak = a.iter().cloned().fold(0.0, f64::max);
    let floor = if min_rel * peak > min_value { min_rel * peak } else { min_value };
    for t in 0..a.len() {
        if !(a[t] > floor) {
            continue;
        }
        let mut ok = true;
        for u in (t as i64 - hw)..=(t as i64 + hw) {
            if u < 0 || u as usize >= a.len() || u as usize == t {
                continue;
            }
            let other = a[u as usize];
            if (u < t as i64 && a[t] <= other) || (u > t as i64 && a[t] < other) {
                ok = false;
            }
        }
        if ok {
            bits[t + 2] = 1;
        }
    }
    bits
}

pub fn to_sequence(pts: &[Vec<(f64, f64)>], fps: f64) -> PoseSequence {
    let frames = pts
        .iter()
        .map(|f| f.iter().map(|&(x, y)| Keypoint::new(x, y, 1.0)).collect())
        .collect();
    PoseSequence::new(fps, frames).unwrap()
}

/// Size of a maximum one-to-one matching by exhaustive search over subsets.
pub fn exhaustive_matching(gen: &[f64], reference: &[f64], tol: f64) -> usize {
    fn go(i: usize, used: u32, gen: &[f64], reference: &[f64], tol: f64, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == gen.len() {
            return 0;
        }
        if let Some(v) = memo[i][used as usize] {
            return v;
        }
        let mut best = go(i + 1, used, gen, reference, tol, memo);
        for (j, r) in reference.iter().enumerate() {
            if used & (1 << j) == 0 && (gen[i] - r).abs() <= tol {
                best = best.max(1 + go(i + 1, used | (1 << j), gen, reference, tol, memo));
            }
        }
        memo[i][used as usize] = Some(best);
        best
    }
    assert!(reference.len() <= 16);
    let mut memo = vec![vec![None; 1 << reference.len()]; gen.len()];
    go(0, 0, gen, reference, tol, &mut memo)
}

/// Rhythm projector output, written as plain index loops.
pub fn rhythm_forward_oracle(params: &RhythmEncoderParams, r: &[f64]) -> Vec<f64> {
    match params {
        RhythmEncoderParams::Mlp(p) => {
            let h = p.b1.len();
            let d = p.b2.len();
            let mut hidden = vec![0.0; h];
            for i in 0..h {
                let mut s = 0.0;
                for t in 0..r.len() {
                    s += p.w1.data[i * r.len() + t] * r[t];
                }
                hidden[i] = (s + p.b1[i]).tanh();
            }
            (0..d)
                .map(|o| {
                    let mut s = 0.0;
                    for i in 0..h {
                        s += p.w2.data[o * h + i] * hidden[i];
                    }
                    s + p.b2[o]
                })
                .collect()
        }
        RhythmEncoderParams::AttnPos(p) => {
            let dp = p.e.len();
            let t_len = r.len();
            let lin = |w: &[f64], x: &[f64]| -> Vec<f64> {
                (0..dp).map(|i| (0..dp).map(|c| w[i * dp + c] * x[c]).sum()).collect()
            };
            let tokens: Vec<Vec<f64>> = (0..t_len)
                .map(|t| (0..dp).map(|c| p.e[c] * r[t] + p.pos.data[t * dp + c]).collect())
                .collect();
            let q: Vec<Vec<f64>> = tokens.iter().map(|x| lin(&p.wq.data, x)).collect();
            let k: Vec<Vec<f64>> = tokens.iter().map(|x| lin(&p.wk.data, x)).collect();
            let v: Vec<Vec<f64>> = tokens.iter().map(|x| lin(&p.wv.data, x)).collect();
            let mut pool = vec![0.0; dp];
            for t in 0..t_len {
                let scores: Vec<f64> = (0..t_len)
                    .map(|u| (0..dp).map(|c| q[t][c] * k[u][c]).sum::<f64>() / (dp as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for u in 0..t_len {
                    let w = (scores[u] - m).exp() / z;
                    for c in 0..dp {
                        pool[c] += w * v[u][c] / t_len as f64;
                    }
                }
            }
            let d = p.bo.len();
            (0..d)
                .map(|o| (0..dp).map(|c| p.wo.data[o * dp + c] * pool[c]).sum::<f64>() + p.bo[o])
                .collect()
        }
    }
}

/// Loss of one example computed from scratch.
pub fn example_loss_oracle(frozen: &FrozenModel, params: &EncoderParams, rhythm: &[f64], genre: usize, target: &Target) -> f64 {
    let d = frozen.dims.embed;
    let vg: Vec<f64> = (0..d)
        .map(|i| (params.genre.w.data[i * frozen.dims.genres + genre] + params.genre.b[i]).tanh())
        .collect();
    let vr = rhythm_forward_oracle(&params.rhythm, rhythm);
    let tpl = &frozen.template;
    let mut cond = vec![0.0; d];
    for (pos, &tok) in tpl.tokens.iter().enumerate() {
        let row: Vec<f64> = if pos == tpl.genre_slot {
            vg.clone()
        } else if pos == tpl.rhythm_slot {
            vr.clone()
        } else {
            frozen.table.entries.data[tok * d..(tok + 1) * d].to_vec()
        };
        for c in 0..d {
            cond[c] += row[c] / tpl.tokens.len() as f64;
        }
    }
    generator_loss_oracle(&frozen.generator, &cond, target)
}

pub fn generator_loss_oracle(generator: &ToyGenerator, cond: &[f64], target: &Target) -> f64 {
    let w = generator.weights();
    let out: Vec<f64> = (0..w.rows)
        .map(|o| (0..w.cols).map(|c| w.data[o * w.cols + c] * cond[c]).sum())
        .collect();
    match target {
        Target::Regression(y) => out.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / out.len() as f64,
        Target::Tokens(tokens) => {
            let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + out.iter().map(|o| (o - m).exp()).sum::<f64>().ln();
            tokens.iter().map(|&t| lse - out[t]).sum::<f64>() / tokens.len() as f64
        }
    }
}
