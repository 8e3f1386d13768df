//! Trainable projectors: genre one-hot -> `v@`, rhythm bits -> `v*`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{axpy, dot, softmax, Mat};
use super::{one_hot_index, Dims, InversionError, Variant};

fn uniform_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, || rng.gen_range(-scale..=scale))
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()
}

/// `tanh(W g + b)` with `W: d x G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreEncoderParams {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl GenreEncoderParams {
    pub fn forward(&self, g: &[f64]) -> Result<Vec<f64>, InversionError> {
        if g.len() != self.w.cols {
            return Err(InversionError::Shape(format!("genre vector has {} entries, expected {}", g.len(), self.w.cols)));
        }
        Ok(self.forward_index(one_hot_index(g)?))
    }

    pub(crate) fn forward_index(&self, k: usize) -> Vec<f64> {
        (0..self.w.rows).map(|r| (self.w.at(r, k) + self.b[r]).tanh()).collect()
    }

    fn backward(&self, k: usize, out: &[f64], d_out: &[f64], grad: &mut Self) {
        for r in 0..self.w.rows {
            let du = d_out[r] * (1.0 - out[r] * out[r]);
            *grad.w.at_mut(r, k) += du;
            grad.b[r] += du;
        }
    }
}

/// `W2 tanh(W1 r + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

/// Frame tokens `E r_t + P_t`, single-head self-attention, mean pooling and
/// an output projection `W_o pool + b_o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnPosParams {
    /// Frame embedding, `d' x 1` stored as a vector.
    pub e: Vec<f64>,
    /// Positional table, `T x d'`.
    pub pos: Mat,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    /// `d x d'`
    pub wo: Mat,
    pub bo: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "variant")]
pub enum RhythmEncoderParams {
    Mlp(MlpParams),
    AttnPos(AttnPosParams),
}

/// Intermediate values kept for the backward pass.
pub(crate) enum RhythmCache {
    Mlp { hidden: Vec<f64> },
    AttnPos(AttnCache),
}

pub(crate) struct AttnCache {
    h: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    pool: Vec<f64>,
}

impl RhythmEncoderParams {
    pub fn variant(&self) -> Variant {
        match self {
            Self::Mlp(_) => Variant::Mlp,
            Self::AttnPos(_) => Variant::AttnPos,
        }
    }

    pub fn frames(&self) -> usize {
        match self {
            Self::Mlp(p) => p.w1.cols,
            Self::AttnPos(p) => p.pos.rows,
        }
    }

    /// Maps a rhythm vector of the configured length to `v*`.
    pub fn forward(&self, r: &[f64]) -> Result<Vec<f64>, InversionError> {
        self.check_input(r)?;
        Ok(self.forward_cached(r).0)
    }

    pub(crate) fn check_input(&self, r: &[f64]) -> Result<(), InversionError> {
        if r.len() != self.frames() {
            return Err(InversionError::Shape(format!("rhythm has {} frames, expected {}", r.len(), self.frames())));
        }
        if let Some((frame, &value)) = r.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(InversionError::BadRhythmValue { frame, value });
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, r: &[f64]) -> (Vec<f64>, RhythmCache) {
        match self {
            Self::Mlp(p) => {
                let mut hidden = p.w1.matvec(r);
                for (z, b) in hidden.iter_mut().zip(&p.b1) {
                    *z = (*z + b).tanh();
                }
                let mut out = p.w2.matvec(&hidden);
                axpy(&mut out, 1.0, &p.b2);
                (out, RhythmCache::Mlp { hidden })
            }
            Self::AttnPos(p) => {
                let (out, cache) = attn_forward(p, r);
                (out, RhythmCache::AttnPos(cache))
            }
        }
    }

    pub(crate) fn backward(&self, r: &[f64], cache: &RhythmCache, d_out: &[f64], grad: &mut Self) {
        match (self, cache, grad) {
            (Self::Mlp(p), RhythmCache::Mlp { hidden }, Self::Mlp(g)) => {
                g.w2.add_outer(1.0, d_out, hidden);
                axpy(&mut g.b2, 1.0, d_out);
                let d_hidden = p.w2.matvec_t(d_out);
                let dz: Vec<f64> = d_hidden.iter().zip(hidden).map(|(d, a)| d * (1.0 - a * a)).collect();
                g.w1.add_outer(1.0, &dz, r);
                axpy(&mut g.b1, 1.0, &dz);
            }
            (Self::AttnPos(p), RhythmCache::AttnPos(c), Self::AttnPos(g)) => attn_backward(p, r, c, d_out, g),
            _ => unreachable!("gradient buffer variant matches parameters"),
        }
    }
}

fn attn_forward(p: &AttnPosParams, r: &[f64]) -> (Vec<f64>, AttnCache) {
    let t_len = r.len();
    let scale = 1.0 / (p.e.len() as f64).sqrt();
    let h: Vec<Vec<f64>> = (0..t_len)
        .map(|t| p.e.iter().zip(p.pos.row(t)).map(|(e, pe)| e * r[t] + pe).collect())
        .collect();
    let q: Vec<Vec<f64>> = h.iter().map(|x| p.wq.matvec(x)).collect();
    let k: Vec<Vec<f64>> = h.iter().map(|x| p.wk.matvec(x)).collect();
    let v: Vec<Vec<f64>> = h.iter().map(|x| p.wv.matvec(x)).collect();
    let a: Vec<Vec<f64>> = q
        .iter()
        .map(|qt| softmax(&k.iter().map(|ku| scale * dot(qt, ku)).collect::<Vec<_>>()))
        .collect();
    let mut pool = vec![0.0; p.e.len()];
    for row in &a {
        for (w, vu) in row.iter().zip(&v) {
            axpy(&mut pool, w / t_len as f64, vu);
        }
    }
    let mut out = p.wo.matvec(&pool);
    axpy(&mut out, 1.0, &p.bo);
    (out, AttnCache { h, q, k, v, a, pool })
}

fn attn_backward(p: &AttnPosParams, r: &[f64], c: &AttnCache, d_out: &[f64], g: &mut AttnPosParams) {
    let t_len = r.len();
    let width = p.e.len();
    let scale = 1.0 / (width as f64).sqrt();
    g.wo.add_outer(1.0, d_out, &c.pool);
    axpy(&mut g.bo, 1.0, d_out);
    // Every frame output enters the pool with weight 1/T.
    let mut d_o = p.wo.matvec_t(d_out);
    d_o.iter_mut().for_each(|x| *x /= t_len as f64);

    let mut dq = vec![vec![0.0; width]; t_len];
    let mut dk = vec![vec![0.0; width]; t_len];
    let mut dv = vec![vec![0.0; width]; t_len];
    // dA[t,u] = d_o . v_u, the same for every t.
    let d_a: Vec<f64> = c.v.iter().map(|vu| dot(&d_o, vu)).collect();
    for t in 0..t_len {
        let row = &c.a[t];
        let mean: f64 = dot(row, &d_a);
        for u in 0..t_len {
            axpy(&mut dv[u], row[u], &d_o);
            let ds = row[u] * (d_a[u] - mean) * scale;
            axpy(&mut dq[t], ds, &c.k[u]);
            axpy(&mut dk[u], ds, &c.q[t]);
        }
    }
    for t in 0..t_len {
        g.wq.add_outer(1.0, &dq[t], &c.h[t]);
        g.wk.add_outer(1.0, &dk[t], &c.h[t]);
        g.wv.add_outer(1.0, &dv[t], &c.h[t]);
        let mut dh = p.wq.matvec_t(&dq[t]);
        axpy(&mut dh, 1.0, &p.wk.matvec_t(&dk[t]));
        axpy(&mut dh, 1.0, &p.wv.matvec_t(&dv[t]));
        axpy(&mut g.e, r[t], &dh);
        axpy(g.pos.row_mut(t), 1.0, &dh);
    }
}

/// All trainable parameters: both encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub genre: GenreEncoderParams,
    pub rhythm: RhythmEncoderParams,
}

impl EncoderParams {
    /// Uniform entries on `[-scale, scale]`.
    pub fn random(dims: Dims, variant: Variant, rng: &mut ChaCha8Rng, scale: f64) -> Self {
        let genre = GenreEncoderParams {
            w: uniform_mat(rng, dims.embed, dims.genres, scale),
            b: uniform_vec(rng, dims.embed, scale),
        };
        let rhythm = match variant {
            Variant::Mlp => RhythmEncoderParams::Mlp(MlpParams {
                w1: uniform_mat(rng, dims.hidden, dims.frames, scale),
                b1: uniform_vec(rng, dims.hidden, scale),
                w2: uniform_mat(rng, dims.embed, dims.hidden, scale),
                b2: uniform_vec(rng, dims.embed, scale),
            }),
            Variant::AttnPos => RhythmEncoderParams::AttnPos(AttnPosParams {
                e: uniform_vec(rng, dims.attn, scale),
                pos: uniform_mat(rng, dims.frames, dims.attn, scale),
                wq: uniform_mat(rng, dims.attn, dims.attn, scale),
                wk: uniform_mat(rng, dims.attn, dims.attn, scale),
                wv: uniform_mat(rng, dims.attn, dims.attn, scale),
                wo: uniform_mat(rng, dims.embed, dims.attn, scale),
                bo: uniform_vec(rng, dims.embed, scale),
            }),
        };
        Self { genre, rhythm }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, block) in z.blocks_mut() {
            block.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![("genre.w", &self.genre.w.data), ("genre.b", &self.genre.b)];
        match &self.rhythm {
            RhythmEncoderParams::Mlp(p) => out.extend([
                ("rhythm.w1", &p.w1.data[..]),
                ("rhythm.b1", &p.b1[..]),
                ("rhythm.w2", &p.w2.data[..]),
                ("rhythm.b2", &p.b2[..]),
            ]),
            RhythmEncoderParams::AttnPos(p) => out.extend([
                ("rhythm.e", &p.e[..]),
                ("rhythm.pos", &p.pos.data[..]),
                ("rhythm.wq", &p.wq.data[..]),
                ("rhythm.wk", &p.wk.data[..]),
                ("rhythm.wv", &p.wv.data[..]),
                ("rhythm.wo", &p.wo.data[..]),
                ("rhythm.bo", &p.bo[..]),
            ]),
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> =
            vec![("genre.w", &mut self.genre.w.data), ("genre.b", &mut self.genre.b)];
        match &mut self.rhythm {
            RhythmEncoderParams::Mlp(p) => out.extend([
                ("rhythm.w1", &mut p.w1.data[..]),
                ("rhythm.b1", &mut p.b1[..]),
                ("rhythm.w2", &mut p.w2.data[..]),
                ("rhythm.b2", &mut p.b2[..]),
            ]),
            RhythmEncoderParams::AttnPos(p) => out.extend([
                ("rhythm.e", &mut p.e[..]),
                ("rhythm.pos", &mut p.pos.data[..]),
                ("rhythm.wq", &mut p.wq.data[..]),
                ("rhythm.wk", &mut p.wk.data[..]),
                ("rhythm.wv", &mut p.wv.data[..]),
                ("rhythm.wo", &mut p.wo.data[..]),
                ("rhythm.bo", &mut p.bo[..]),
            ]),
        }
        out
    }

    /// `self += alpha * other` over every block.
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) {
        for ((_, dst), (_, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            axpy(dst, alpha, src);
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks().iter().flat_map(|(_, b)| b.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn genre_backward(&self, k: usize, out: &[f64], d_out: &[f64], grad: &mut Self) {
        self.genre.backward(k, out, d_out, &mut grad.genre);
    }
}
