use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Kinematic rhythm, musical beats and beat-alignment metrics.
#[derive(Debug, Parser)]
#[command(name = "kinebeat", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for commands that draw random numbers.
    #[arg(long, global = true, env = "KINEBEAT_SEED")]
    pub seed: Option<u64>,
    /// Output file (or directory, for commands writing several files). Defaults to stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Mlp,
    Attnpos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Regression,
    Categorical,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract kinematic rhythm sequences from a keypoint JSON file.
    ExtractRhythm(ExtractRhythm),
    /// Detect musical beats in a WAV file.
    DetectBeats(DetectBeats),
    /// Score generated beats against reference beats.
    Evaluate(Evaluate),
    /// Estimate the tempo of a WAV file.
    Tempo(Tempo),
    /// Train the toy rhythm and genre encoders.
    TrainToy(TrainToy),
    /// Compare analytic encoder gradients with finite differences.
    Gradcheck(Gradcheck),
    /// Write a teacher-student dataset for train-toy.
    MakeToyData(MakeToyData),
    /// Write a click-track WAV file.
    SynthClicks(SynthClicks),
    /// Write a synthetic oscillating-joint keypoint file.
    SynthPoses(SynthPoses),
}

#[derive(Debug, Args)]
pub struct ExtractRhythm {
    #[arg(long)]
    pub poses: PathBuf,
    /// Number of direction bins.
    #[arg(long, default_value_t = 8)]
    pub bins: usize,
    /// Local-maximum window in seconds.
    #[arg(long, default_value_t = 0.3)]
    pub window: f64,
    /// Beat floor as a fraction of the peak acceleration.
    #[arg(long, default_value_t = 0.05)]
    pub min_rel: f64,
    /// Absolute beat floor.
    #[arg(long, default_value_t = 0.0)]
    pub min_value: f64,
    /// Keypoints below this confidence are interpolated.
    #[arg(long, default_value_t = 0.3)]
    pub conf_threshold: f64,
    /// Clip length in seconds, or "none" to process the whole sequence.
    #[arg(long, default_value = "5.12")]
    pub clip: String,
}

#[derive(Debug, Args)]
pub struct DetectBeats {
    #[arg(long)]
    pub audio: PathBuf,
    /// Peak-picking window in seconds.
    #[arg(long, default_value_t = 0.3)]
    pub peak_window: f64,
    /// Threshold above the local mean, in global standard deviations.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[command(flatten)]
    pub stft: Stft,
}

#[derive(Debug, Args)]
pub struct Stft {
    /// STFT window in samples.
    #[arg(long, default_value_t = 1024)]
    pub fft_window: usize,
    /// STFT hop in samples.
    #[arg(long, default_value_t = 256)]
    pub hop: usize,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    /// Generated beats: a beats JSON file or a directory of them.
    #[arg(long = "gen")]
    pub generated: PathBuf,
    /// Reference beats: a beats JSON file or a directory of them.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub tolerance: f64,
    /// Search a global offset of the generated beats before scoring.
    #[arg(long)]
    pub phase_align: bool,
    #[arg(long, default_value_t = 1.0)]
    pub phase_range: f64,
    #[arg(long, default_value_t = 0.01)]
    pub phase_step: f64,
    /// Tempo JSON (or directory) for the generated side.
    #[arg(long, requires = "tempo_ref")]
    pub tempo_gen: Option<PathBuf>,
    /// Tempo JSON (or directory) for the reference side.
    #[arg(long, requires = "tempo_gen")]
    pub tempo_ref: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Tempo {
    #[arg(long)]
    pub audio: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    pub bpm_min: f64,
    #[arg(long, default_value_t = 180.0)]
    pub bpm_max: f64,
    #[command(flatten)]
    pub stft: Stft,
}

#[derive(Debug, Args)]
pub struct TrainToy {
    /// Directory holding dataset.json (or the file itself).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantArg::Mlp)]
    pub variant: VariantArg,
    /// Defaults to the dataset's mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
}

#[derive(Debug, Args)]
pub struct Gradcheck {
    #[arg(long, value_enum, default_value_t = VariantArg::Mlp)]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Regression)]
    pub mode: ModeArg,
}

#[derive(Debug, Args)]
pub struct MakeToyData {
    #[arg(long, value_enum, default_value_t = VariantArg::Mlp)]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Regression)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 32)]
    pub count: usize,
    /// Seed of the frozen table and generator.
    #[arg(long, default_value_t = 7)]
    pub frozen_seed: u64,
    /// Use the small dimensions (T = 20) instead of the defaults.
    #[arg(long)]
    pub small: bool,
}

#[derive(Debug, Args)]
pub struct SynthClicks {
    /// Tempo of the click train; 0 writes silence.
    #[arg(long, default_value_t = 120.0)]
    pub bpm: f64,
    #[arg(long, default_value_t = 5.12)]
    pub duration: f64,
    #[arg(long, default_value_t = 22050)]
    pub sample_rate: u32,
    /// Time of the first click in seconds.
    #[arg(long, default_value_t = 0.1)]
    pub offset: f64,
}

#[derive(Debug, Args)]
pub struct SynthPoses {
    #[arg(long, default_value_t = 308)]
    pub frames: usize,
    #[arg(long, default_value_t = 60.0)]
    pub fps: f64,
    /// Frames between direction reversals; 0 writes a still pose.
    #[arg(long, default_value_t = 30)]
    pub half_period: usize,
    /// Pixels per frame.
    #[arg(long, default_value_t = 4.0)]
    pub speed: f64,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad input or arguments: exit 2.
    Input(String),
    /// A verification step ran and failed: exit 1.
    Check(String),
}

impl Failure {
    pub fn input(e: impl std::fmt::Display) -> Self {
        Self::Input(e.to_string())
    }

    pub fn at(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Input(format!("{}: {e}", path.display()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
