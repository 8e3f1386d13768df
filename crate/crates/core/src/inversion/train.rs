//! Losses, analytic gradients, gradient descent and finite-difference checks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::encoders::EncoderParams;
use super::linalg::{log_sum_exp, softmax};
use super::{one_hot, one_hot_index, rhythm_input, Dims, FrozenModel, InversionError, Mode, ToyGenerator, Variant};
use crate::rhythm::RhythmSequence;

/// Uniform init range of trainable weights.
pub const INIT_SCALE: f64 = 0.1;
/// Uniform init range of the hidden teacher in teacher-student data.
pub const TEACHER_SCALE: f64 = 0.5;
/// Largest acceptable relative error between analytic and numeric gradients.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const FD_STEP: f64 = 1e-3;
/// Denominator floor of the relative error, so coordinates whose gradient
/// is numerically zero are compared absolutely.
const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Generator output to reconstruct.
    Regression(Vec<f64>),
    /// Audio-token ids; the loss averages cross-entropy over them.
    Tokens(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Projector input of the configured length, values in [0, 1].
    pub rhythm: Vec<f64>,
    pub genre: usize,
    pub target: Target,
}

/// Training data plus the frozen model it was produced against.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: Dims,
    pub mode: Mode,
    pub frozen_seed: u64,
    pub examples: Vec<Example>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    dims: Dims,
    mode: Mode,
    frozen_seed: u64,
    examples: Vec<ExampleFile>,
}

#[derive(Serialize, Deserialize)]
struct ExampleFile {
    rhythm: RhythmSequence,
    genre: Vec<f64>,
    target: Target,
}

impl Dataset {
    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            dims: self.dims,
            mode: self.mode,
            frozen_seed: self.frozen_seed,
            examples: self
                .examples
                .iter()
                .map(|e| ExampleFile {
                    rhythm: RhythmSequence {
                        fps: 60.0,
                        bits: e.rhythm.iter().map(|&v| (v != 0.0) as u8).collect(),
                    },
                    genre: one_hot(e.genre, self.dims.genres),
                    target: e.target.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("dataset serialization cannot fail")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, InversionError> {
        let file: DatasetFile = serde_json::from_slice(bytes).map_err(|e| InversionError::Dataset(e.to_string()))?;
        let dims = file.dims;
        let examples = file
            .examples
            .into_iter()
            .map(|e| {
                if e.genre.len() != dims.genres {
                    return Err(InversionError::Shape(format!("genre vector of length {}", e.genre.len())));
                }
                Ok(Example {
                    rhythm: rhythm_input(&e.rhythm, dims.frames),
                    genre: one_hot_index(&e.genre)?,
                    target: e.target,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            dims,
            mode: file.mode,
            frozen_seed: file.frozen_seed,
            examples,
        })
    }
}

/// Reads `dataset.json` from a directory, or the file itself.
pub fn load_dataset(path: &Path) -> Result<Dataset, InversionError> {
    let file = if path.is_dir() { path.join("dataset.json") } else { path.to_path_buf() };
    let bytes = std::fs::read(&file).map_err(|e| InversionError::Dataset(format!("{}: {e}", file.display())))?;
    Dataset::from_json(&bytes)
}

/// Mean of the prompt embeddings, the generator's condition vector.
fn pooled(embeddings: &[Vec<f64>]) -> Vec<f64> {
    let mut c = vec![0.0; embeddings.first().map_or(0, Vec::len)];
    for e in embeddings {
        for (ci, v) in c.iter_mut().zip(e) {
            *ci += v;
        }
    }
    let n = embeddings.len() as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

/// Loss of one example and its gradient w.r.t. the generator output.
fn output_loss(generator: &ToyGenerator, out: &[f64], target: &Target) -> Result<(f64, Vec<f64>), InversionError> {
    match (generator, target) {
        (ToyGenerator::Regression(_), Target::Regression(y)) => {
            if y.len() != out.len() {
                return Err(InversionError::Shape(format!("target of length {}, expected {}", y.len(), out.len())));
            }
            let m = out.len() as f64;
            let loss = out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / m;
            let grad = out.iter().zip(y).map(|(o, t)| 2.0 * (o - t) / m).collect();
            Ok((loss, grad))
        }
        (ToyGenerator::Categorical(_), Target::Tokens(tokens)) => {
            if tokens.is_empty() || tokens.iter().any(|&t| t >= out.len()) {
                return Err(InversionError::Shape(format!("token targets {tokens:?} for vocabulary {}", out.len())));
            }
            let n = tokens.len() as f64;
            let lse = log_sum_exp(out);
            let loss = tokens.iter().map(|&t| lse - out[t]).sum::<f64>() / n;
            let mut grad = softmax(out);
            for &t in tokens {
                grad[t] -= 1.0 / n;
            }
            Ok((loss, grad))
        }
        (g, _) => Err(InversionError::TargetMode(g.mode())),
    }
}

/// Reconstruction loss of an assembled prompt: squared error of the
/// generator output (regression) or mean token cross-entropy of its
/// softmax (categorical).
pub fn reconstruction_loss(generator: &ToyGenerator, embeddings: &[Vec<f64>], target: &Target) -> Result<f64, InversionError> {
    let d = generator.weights().cols;
    if embeddings.is_empty() || embeddings.iter().any(|e| e.len() != d) {
        return Err(InversionError::Shape(format!("embeddings must be non-empty rows of width {d}")));
    }
    let out = generator.output(&pooled(embeddings));
    Ok(output_loss(generator, &out, target)?.0)
}

fn check_example(frozen: &FrozenModel, params: &EncoderParams, ex: &Example) -> Result<(), InversionError> {
    params.rhythm.check_input(&ex.rhythm)?;
    if ex.genre >= frozen.dims.genres || params.genre.w.cols != frozen.dims.genres {
        return Err(InversionError::Shape(format!("genre {} of {}", ex.genre, frozen.dims.genres)));
    }
    Ok(())
}

/// Mean batch loss and, when `want_grad`, its exact gradient with respect
/// to the encoder parameters. The table and generator are read-only here.
fn loss_and_grad(
    frozen: &FrozenModel,
    params: &EncoderParams,
    batch: &[Example],
    want_grad: bool,
) -> Result<(f64, Option<EncoderParams>), InversionError> {
    if batch.is_empty() {
        return Err(InversionError::EmptyDataset);
    }
    let n = batch.len() as f64;
    let slots = frozen.template.len() as f64;
    let mut grad = want_grad.then(|| params.zeros_like());
    let mut total = 0.0;
    for ex in batch {
        check_example(frozen, params, ex)?;
        let v_genre = params.genre.forward_index(ex.genre);
        let (v_rhythm, cache) = params.rhythm.forward_cached(&ex.rhythm);
        let embeddings = frozen.assemble_prompt_embeddings(&v_genre, &v_rhythm)?;
        let out = frozen.generator.output(&pooled(&embeddings));
        let (loss, d_out) = output_loss(&frozen.generator, &out, &ex.target)?;
        total += loss;
        if let Some(g) = grad.as_mut() {
            // Both slot vectors enter the pooled condition with weight 1/L.
            let mut d_slot = frozen.generator.weights().matvec_t(&d_out);
            d_slot.iter_mut().for_each(|v| *v /= slots * n);
            params.genre_backward(ex.genre, &v_genre, &d_slot, g);
            params.rhythm.backward(&ex.rhythm, &cache, &d_slot, &mut g.rhythm);
        }
    }
    Ok((total / n, grad))
}

/// Batch loss and analytic gradients for both encoders.
pub fn encoder_gradients(
    frozen: &FrozenModel,
    params: &EncoderParams,
    batch: &[Example],
) -> Result<(f64, EncoderParams), InversionError> {
    let (loss, grad) = loss_and_grad(frozen, params, batch, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

pub fn batch_loss(frozen: &FrozenModel, params: &EncoderParams, batch: &[Example]) -> Result<f64, InversionError> {
    Ok(loss_and_grad(frozen, params, batch, false)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    pub mode: Mode,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 2000,
            seed: 7,
            variant: Variant::Mlp,
            mode: Mode::Regression,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    /// Entry `e` is the loss after `e` updates; length `epochs + 1`.
    pub history: Vec<f64>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.history[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.history.last().expect("history is never empty")
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (e, l) in self.history.iter().enumerate() {
            out.push_str(&format!("{e},{l}\n"));
        }
        out
    }
}

/// Initial encoder parameters for `config`.
pub fn init_params(dims: Dims, config: &TrainingConfig) -> EncoderParams {
    EncoderParams::random(dims, config.variant, &mut ChaCha8Rng::seed_from_u64(config.seed), INIT_SCALE)
}

/// Full-batch gradient descent on the encoders.
pub fn train_params(
    frozen: &FrozenModel,
    mut params: EncoderParams,
    config: &TrainingConfig,
    examples: &[Example],
) -> Result<TrainOutcome, InversionError> {
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(InversionError::BadLearningRate(config.learning_rate));
    }
    if frozen.mode() != config.mode {
        return Err(InversionError::TargetMode(frozen.mode()));
    }
    let mut history = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..config.epochs {
        let (loss, grad) = encoder_gradients(frozen, &params, examples)?;
        if !loss.is_finite() {
            return Err(InversionError::Diverged(epoch));
        }
        history.push(loss);
        params.add_scaled(-config.learning_rate, &grad);
    }
    let last = batch_loss(frozen, &params, examples)?;
    if !last.is_finite() {
        return Err(InversionError::Diverged(config.epochs));
    }
    history.push(last);
    Ok(TrainOutcome { params, history })
}

/// Trains freshly initialised encoders on `data` and wraps the result in a
/// checkpoint.
pub fn train(config: &TrainingConfig, data: &Dataset) -> Result<(Checkpoint, TrainOutcome), InversionError> {
    if data.examples.is_empty() {
        return Err(InversionError::EmptyDataset);
    }
    if data.mode != config.mode {
        return Err(InversionError::TargetMode(data.mode));
    }
    let frozen = FrozenModel::new(data.dims, data.mode, data.frozen_seed);
    let outcome = train_params(&frozen, init_params(data.dims, config), config, &data.examples)?;
    let checkpoint = Checkpoint::new(*config, data.frozen_seed, &frozen, outcome.params.clone());
    Ok((checkpoint, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenDigests {
    pub table: String,
    pub generator: String,
}

impl FrozenDigests {
    pub fn of(frozen: &FrozenModel) -> Self {
        Self {
            table: frozen.table.digest(),
            generator: frozen.generator.digest(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainingConfig,
    pub dims: Dims,
    pub frozen_seed: u64,
    pub params: EncoderParams,
    pub frozen_digests: FrozenDigests,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn new(config: TrainingConfig, frozen_seed: u64, frozen: &FrozenModel, params: EncoderParams) -> Self {
        Self {
            version: Self::VERSION,
            config,
            dims: frozen.dims,
            frozen_seed,
            params,
            frozen_digests: FrozenDigests::of(frozen),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, InversionError> {
        serde_json::from_slice(bytes).map_err(|e| InversionError::Dataset(e.to_string()))
    }

    /// True when the frozen model rebuilt from the stored seed still has
    /// the recorded digests.
    pub fn frozen_intact(&self) -> bool {
        let frozen = FrozenModel::new(self.dims, self.config.mode, self.frozen_seed);
        FrozenDigests::of(&frozen) == self.frozen_digests
    }
}

fn random_rhythm(rng: &mut ChaCha8Rng, frames: usize, density: f64) -> Vec<f64> {
    (0..frames)
        .map(|t| if t >= 2 && rng.gen_bool(density) { 1.0 } else { 0.0 })
        .collect()
}

/// Synthetic data whose targets come from a hidden teacher of the same
/// architecture, so a zero-residual solution exists (regression) or the
/// teacher's argmax token is reachable (categorical).
pub fn teacher_student_dataset(
    dims: Dims,
    variant: Variant,
    mode: Mode,
    frozen_seed: u64,
    teacher_seed: u64,
    count: usize,
) -> Dataset {
    let frozen = FrozenModel::new(dims, mode, frozen_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(teacher_seed);
    let teacher = EncoderParams::random(dims, variant, &mut rng, TEACHER_SCALE);
    let examples = (0..count)
        .map(|i| {
            let rhythm = random_rhythm(&mut rng, dims.frames, 1.0 / 20.0);
            let genre = i % dims.genres;
            let v_genre = teacher.genre.forward_index(genre);
            let v_rhythm = teacher.rhythm.forward_cached(&rhythm).0;
            let embeddings = frozen.assemble_prompt_embeddings(&v_genre, &v_rhythm).expect("shapes agree");
            let out = frozen.generator.output(&pooled(&embeddings));
            let target = match mode {
                Mode::Regression => Target::Regression(out),
                Mode::Categorical => {
                    let best = out
                        .iter()
                        .enumerate()
                        .fold(0, |b, (i, v)| if *v > out[b] { i } else { b });
                    Target::Tokens(vec![best])
                }
            };
            Example { rhythm, genre, target }
        })
        .collect();
    Dataset {
        dims,
        mode,
        frozen_seed,
        examples,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockError {
    pub name: &'static str,
    pub params: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub variant: Variant,
    pub mode: Mode,
    pub seed: u64,
    pub blocks: Vec<BlockError>,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic gradients against central differences on every
/// coordinate of a random small instance.
pub fn gradcheck(variant: Variant, mode: Mode, seed: u64) -> Result<GradCheckReport, InversionError> {
    let dims = Dims::small();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frozen = FrozenModel::new(dims, mode, rng.gen());
    let params = EncoderParams::random(dims, variant, &mut rng, 0.5);
    let batch: Vec<Example> = (0..3)
        .map(|i| Example {
            rhythm: random_rhythm(&mut rng, dims.frames, 0.3),
            genre: (i * 3 + 1) % dims.genres,
            target: match mode {
                Mode::Regression => {
                    Target::Regression((0..dims.target).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                }
                Mode::Categorical => Target::Tokens(vec![rng.gen_range(0..dims.audio_vocab), rng.gen_range(0..dims.audio_vocab)]),
            },
        })
        .collect();
    let blocks = compare_with_finite_differences(&frozen, &params, &batch)?;
    let max_rel_err = blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        variant,
        mode,
        seed,
        blocks,
        max_rel_err,
        passed: max_rel_err < GRADCHECK_TOLERANCE,
    })
}

/// Per-block maxima of the analytic vs central-difference error, using the
/// five-point stencil.
pub fn compare_with_finite_differences(
    frozen: &FrozenModel,
    params: &EncoderParams,
    batch: &[Example],
) -> Result<Vec<BlockError>, InversionError> {
    let (_, analytic) = encoder_gradients(frozen, params, batch)?;
    let names: Vec<&'static str> = params.blocks().iter().map(|(n, _)| *n).collect();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(names.len());
    for (b, name) in names.into_iter().enumerate() {
        let len = params.blocks()[b].1.len();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for i in 0..len {
            let orig = params.blocks()[b].1[i];
            let mut eval = |h: f64| -> Result<f64, InversionError> {
                probe.blocks_mut()[b].1[i] = orig + h;
                batch_loss(frozen, &probe, batch)
            };
            let (p1, m1) = (eval(FD_STEP)?, eval(-FD_STEP)?);
            let (p2, m2) = (eval(2.0 * FD_STEP)?, eval(-2.0 * FD_STEP)?);
            probe.blocks_mut()[b].1[i] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * FD_STEP);
            let a = analytic.blocks()[b].1[i];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        out.push(BlockError {
            name,
            params: len,
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    Ok(out)
}
