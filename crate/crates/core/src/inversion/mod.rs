//! Desk-scale encoder-based textual inversion.
//!
//! A fixed prompt `a @ music with * as the rhythm` is embedded through a
//! frozen table, except at the two pseudo-word slots: `@` receives the
//! genre encoder's output and `*` the rhythm encoder's output. The mean of
//! the prompt embeddings conditions a frozen linear toy generator whose
//! reconstruction loss (squared error or token cross-entropy) is minimised
//! with respect to the two encoders only.

mod encoders;
pub mod linalg;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use encoders::{
    AttnPosParams, EncoderParams, GenreEncoderParams, MlpParams, RhythmEncoderParams,
};
pub use linalg::Mat;
pub use train::{
    batch_loss, compare_with_finite_differences, encoder_gradients, gradcheck, init_params, load_dataset,
    reconstruction_loss, relative_error, teacher_student_dataset, train, train_params, BlockError, Checkpoint, Dataset,
    Example, FrozenDigests, GradCheckReport, Target, TrainOutcome, TrainingConfig, GRADCHECK_TOLERANCE, INIT_SCALE,
    TEACHER_SCALE,
};

use crate::rhythm::RhythmSequence;

pub const PROMPT: &str = "a @ music with * as the rhythm";
pub const GENRE_TOKEN: &str = "@";
pub const RHYTHM_TOKEN: &str = "*";

#[derive(Debug, Error, PartialEq)]
pub enum InversionError {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("genre input is not one-hot")]
    NotOneHot,
    #[error("rhythm input value {value} at frame {frame} outside [0, 1]")]
    BadRhythmValue { frame: usize, value: f64 },
    #[error("learning rate must be finite and nonnegative, got {0}")]
    BadLearningRate(f64),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("target does not match {0:?} mode")]
    TargetMode(Mode),
    #[error("loss became non-finite at epoch {0}")]
    Diverged(usize),
    #[error("dataset: {0}")]
    Dataset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mlp,
    AttnPos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Regression,
    Categorical,
}

/// Model sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Rhythm sequence length fed to the projector.
    pub frames: usize,
    /// Text embedding width.
    pub embed: usize,
    /// MLP hidden width.
    pub hidden: usize,
    /// Attention width.
    pub attn: usize,
    pub genres: usize,
    /// Regression target width.
    pub target: usize,
    /// Toy audio-token vocabulary size.
    pub audio_vocab: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            frames: 308,
            embed: 16,
            hidden: 32,
            attn: 16,
            genres: 10,
            target: 24,
            audio_vocab: 32,
        }
    }
}

impl Dims {
    /// Sizes small enough to finite-difference every coordinate quickly.
    pub fn small() -> Self {
        Self {
            frames: 20,
            embed: 6,
            hidden: 7,
            attn: 5,
            genres: 4,
            target: 5,
            audio_vocab: 9,
        }
    }
}

/// Token ids of the fixed prompt and the positions of both pseudo-words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub vocab: Vec<String>,
    pub tokens: Vec<usize>,
    pub genre_slot: usize,
    pub rhythm_slot: usize,
}

impl PromptTemplate {
    pub fn new(prompt: &str) -> Result<Self, InversionError> {
        let mut vocab: Vec<String> = Vec::new();
        let mut tokens = Vec::new();
        for word in prompt.split_whitespace() {
            let id = match vocab.iter().position(|v| v == word) {
                Some(id) => id,
                None => {
                    vocab.push(word.to_string());
                    vocab.len() - 1
                }
            };
            tokens.push(id);
        }
        let slot = |w: &str| {
            let mut hits = prompt.split_whitespace().enumerate().filter(|(_, x)| *x == w);
            match (hits.next(), hits.next()) {
                (Some((i, _)), None) => Ok(i),
                _ => Err(InversionError::Shape(format!("prompt must contain exactly one {w:?}"))),
            }
        };
        Ok(Self {
            genre_slot: slot(GENRE_TOKEN)?,
            rhythm_slot: slot(RHYTHM_TOKEN)?,
            vocab,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(PROMPT).expect("built-in prompt is valid")
    }
}

fn normal_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, || scale * rng.sample::<f64, _>(StandardNormal))
}

fn digest(data: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in data {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Frozen token embeddings, `vocab x d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub entries: Mat,
}

impl EmbeddingTable {
    pub fn row(&self, token: usize) -> &[f64] {
        self.entries.row(token)
    }

    pub fn digest(&self) -> String {
        digest(&self.entries.data)
    }
}

/// Frozen linear generator standing in for the pretrained backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "weights")]
pub enum ToyGenerator {
    /// `target x d`
    Regression(Mat),
    /// `audio_vocab x d` logits
    Categorical(Mat),
}

impl ToyGenerator {
    pub fn mode(&self) -> Mode {
        match self {
            Self::Regression(_) => Mode::Regression,
            Self::Categorical(_) => Mode::Categorical,
        }
    }

    pub fn weights(&self) -> &Mat {
        match self {
            Self::Regression(w) | Self::Categorical(w) => w,
        }
    }

    pub fn output(&self, condition: &[f64]) -> Vec<f64> {
        self.weights().matvec(condition)
    }

    pub fn digest(&self) -> String {
        digest(&self.weights().data)
    }
}

/// Scale of the frozen generator weights.
pub const GENERATOR_SCALE: f64 = 1.0;

/// Everything that stays frozen during inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel {
    pub dims: Dims,
    pub template: PromptTemplate,
    pub table: EmbeddingTable,
    pub generator: ToyGenerator,
}

impl FrozenModel {
    /// Table entries are standard normal scaled by `1 / sqrt(d)`; generator
    /// entries are standard normal times [`GENERATOR_SCALE`]. Both come from `seed`.
    pub fn new(dims: Dims, mode: Mode, seed: u64) -> Self {
        let template = PromptTemplate::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dims.embed as f64).sqrt();
        let table = EmbeddingTable {
            entries: normal_mat(&mut rng, template.vocab.len(), dims.embed, scale),
        };
        let generator = match mode {
            Mode::Regression => ToyGenerator::Regression(normal_mat(&mut rng, dims.target, dims.embed, GENERATOR_SCALE)),
            Mode::Categorical => {
                ToyGenerator::Categorical(normal_mat(&mut rng, dims.audio_vocab, dims.embed, GENERATOR_SCALE))
            }
        };
        Self {
            dims,
            template,
            table,
            generator,
        }
    }

    pub fn mode(&self) -> Mode {
        self.generator.mode()
    }

    /// Prompt embeddings with the pseudo-word slots replaced.
    pub fn assemble_prompt_embeddings(&self, v_genre: &[f64], v_rhythm: &[f64]) -> Result<Vec<Vec<f64>>, InversionError> {
        assemble_prompt_embeddings(&self.template, &self.table, v_genre, v_rhythm)
    }
}

pub fn assemble_prompt_embeddings(
    template: &PromptTemplate,
    table: &EmbeddingTable,
    v_genre: &[f64],
    v_rhythm: &[f64],
) -> Result<Vec<Vec<f64>>, InversionError> {
    let d = table.entries.cols;
    if v_genre.len() != d || v_rhythm.len() != d {
        return Err(InversionError::Shape(format!(
            "slot vectors have lengths {} and {}, embedding width is {d}",
            v_genre.len(),
            v_rhythm.len()
        )));
    }
    Ok(template
        .tokens
        .iter()
        .enumerate()
        .map(|(pos, &tok)| {
            if pos == template.genre_slot {
                v_genre.to_vec()
            } else if pos == template.rhythm_slot {
                v_rhythm.to_vec()
            } else {
                table.row(tok).to_vec()
            }
        })
        .collect())
}

/// Projector input: rhythm bits as reals, zero padded or truncated at the
/// tail to `frames`.
pub fn rhythm_input(r: &RhythmSequence, frames: usize) -> Vec<f64> {
    let mut x: Vec<f64> = r.bits.iter().take(frames).map(|&b| b as f64).collect();
    x.resize(frames, 0.0);
    x
}

/// One-hot genre vector.
pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// Index of the hot entry, or an error if `g` is not exactly one-hot.
pub fn one_hot_index(g: &[f64]) -> Result<usize, InversionError> {
    let mut hot = None;
    for (i, &v) in g.iter().enumerate() {
        if v == 1.0 && hot.is_none() {
            hot = Some(i);
        } else if v != 0.0 {
            return Err(InversionError::NotOneHot);
        }
    }
    hot.ok_or(InversionError::NotOneHot)
}
