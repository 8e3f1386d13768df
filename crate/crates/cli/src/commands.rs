use std::fs;
use std::path::{Path, PathBuf};

use kinebeat::audio::{self, AudioClip, BeatList, TempoEstimate};
use kinebeat::inversion::{self, Dataset, Dims, GradCheckReport, Mode, TrainingConfig, Variant};
use kinebeat::metrics::{self, AlignmentReport, AlignmentSummary, PhaseSearch};
use kinebeat::pose::{self, ClipSpec, Keypoint, PoseSequence};
use kinebeat::rhythm::{self, PeakConfig, RhythmConfig};
use kinebeat::synth;
use serde::Serialize;

use crate::{
    Cli, Command, DetectBeats, Evaluate, ExtractRhythm, Failure, Format, Global, Gradcheck, MakeToyData, ModeArg,
    Stft, SynthClicks, SynthPoses, Tempo, TrainToy, VariantArg,
};

const DEFAULT_TRAIN_SEED: u64 = 7;
const DEFAULT_TEACHER_SEED: u64 = 8;
const DEFAULT_GRADCHECK_SEED: u64 = 0;

type Result<T> = std::result::Result<T, Failure>;

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::ExtractRhythm(a) => extract_rhythm(g, a),
        Command::DetectBeats(a) => detect_beats(g, a),
        Command::Evaluate(a) => evaluate(g, a),
        Command::Tempo(a) => tempo(g, a),
        Command::TrainToy(a) => train_toy(g, a),
        Command::Gradcheck(a) => gradcheck(g, a),
        Command::MakeToyData(a) => make_toy_data(g, a),
        Command::SynthClicks(a) => synth_clicks(g, a),
        Command::SynthPoses(a) => synth_poses(g, a),
    }
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Mlp => Variant::Mlp,
            VariantArg::Attnpos => Variant::AttnPos,
        }
    }
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Regression => Mode::Regression,
            ModeArg::Categorical => Mode::Categorical,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::at(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::at(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::at(path, e))
}

/// Writes to `--output` or stdout.
fn emit(g: &Global, text: &str) -> Result<()> {
    match &g.output {
        Some(path) => write(path, text.as_bytes()),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output types always serialize")
}

fn json_only(g: &Global, command: &str) -> Result<()> {
    match g.format {
        Format::Json => Ok(()),
        Format::Csv => Err(Failure::Input(format!("{command} has no CSV output"))),
    }
}

fn read_audio(path: &Path, stft: &Stft) -> Result<audio::OnsetEnvelope> {
    let clip = audio::read_wav(&read(path)?).map_err(|e| Failure::at(path, e))?;
    audio::onset_envelope(&clip, stft.fft_window, stft.hop).map_err(|e| Failure::at(path, e))
}

fn extract_rhythm(g: &Global, a: &ExtractRhythm) -> Result<()> {
    json_only(g, "extract-rhythm")?;
    let seq = pose::parse_pose_file(&read(&a.poses)?).map_err(|e| Failure::at(&a.poses, e))?;
    let config = RhythmConfig {
        bins: a.bins,
        peak: PeakConfig {
            window: a.window,
            min_value: a.min_value,
            min_rel: a.min_rel,
        },
        confidence_threshold: Some(a.conf_threshold),
    };
    let extract = |s: &PoseSequence| rhythm::extract_rhythm(s, &config).map_err(|e| Failure::at(&a.poses, e));

    if a.clip.eq_ignore_ascii_case("none") {
        return emit(g, &extract(&seq)?.to_json());
    }
    let seconds: f64 = a
        .clip
        .parse()
        .map_err(|_| Failure::Input(format!("--clip expects seconds or \"none\", got {:?}", a.clip)))?;
    let clips = pose::segment_clips(&seq, ClipSpec::new(seconds)).map_err(Failure::input)?;
    if clips.is_empty() {
        return Err(Failure::Input(format!(
            "{} frames are fewer than one {seconds} s clip; use --clip none",
            seq.num_frames()
        )));
    }
    let rhythms = clips.iter().map(extract).collect::<Result<Vec<_>>>()?;
    match &g.output {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure::at(dir, e))?;
            for (i, r) in rhythms.iter().enumerate() {
                write(&dir.join(format!("clip_{i:03}.json")), r.to_json().as_bytes())?;
            }
            Ok(())
        }
        None => emit(g, &to_json(&rhythms)),
    }
}

fn detect_beats(g: &Global, a: &DetectBeats) -> Result<()> {
    json_only(g, "detect-beats")?;
    let env = read_audio(&a.audio, &a.stft)?;
    let beats = audio::pick_beats(&env, a.peak_window, a.delta).map_err(Failure::input)?;
    emit(g, &beats.to_json())
}

fn tempo(g: &Global, a: &Tempo) -> Result<()> {
    json_only(g, "tempo")?;
    let env = read_audio(&a.audio, &a.stft)?;
    let t = audio::estimate_tempo(&env, a.bpm_min, a.bpm_max).map_err(|e| Failure::at(&a.audio, e))?;
    emit(g, &to_json(&t))
}

fn read_beats(path: &Path) -> Result<BeatList> {
    BeatList::from_json(&read(path)?).map_err(|e| Failure::at(path, e))
}

fn read_tempo(path: &Path) -> Result<TempoEstimate> {
    serde_json::from_slice(&read(path)?).map_err(|e| Failure::at(path, e))
}

/// `*.json` files of a directory sorted by name.
fn json_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Failure::at(dir, e))? {
        let path = entry.map_err(|e| Failure::at(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            let name = path.file_name().expect("listed file has a name").to_string_lossy().into_owned();
            out.push((name, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Pairs files of two directories by file name; both sides must agree.
fn paired(gen: &Path, reference: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let g = json_files(gen)?;
    let r = json_files(reference)?;
    let names = |v: &[(String, PathBuf)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    if names(&g) != names(&r) {
        return Err(Failure::Input(format!(
            "{} and {} do not contain the same file names",
            gen.display(),
            reference.display()
        )));
    }
    if g.is_empty() {
        return Err(Failure::Input(format!("{} has no .json files", gen.display())));
    }
    Ok(g.into_iter().zip(r).map(|((n, gp), (_, rp))| (n, gp, rp)).collect())
}

#[derive(Serialize)]
struct ClipEvaluation {
    #[serde(skip_serializing_if = "Option::is_none")]
    clip: Option<String>,
    #[serde(flatten)]
    report: AlignmentReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    phase_offset: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tempo_difference: Option<f64>,
}

#[derive(Serialize)]
struct DatasetEvaluation {
    clips: Vec<ClipEvaluation>,
    summary: AlignmentSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_tempo_difference: Option<f64>,
}

fn score(a: &Evaluate, gen: &BeatList, reference: &BeatList) -> Result<(AlignmentReport, Option<f64>)> {
    if a.phase_align {
        let search = PhaseSearch {
            range: a.phase_range,
            step: a.phase_step,
            tolerance: a.tolerance,
        };
        let pa = metrics::phase_align(gen, reference, search).map_err(Failure::input)?;
        Ok((pa.report, Some(pa.offset)))
    } else {
        Ok((metrics::match_beats(gen, reference, a.tolerance).map_err(Failure::input)?, None))
    }
}

fn evaluate(g: &Global, a: &Evaluate) -> Result<()> {
    let tempo_dirs = a.tempo_gen.as_ref().zip(a.tempo_ref.as_ref());
    if a.generated.is_dir() != a.reference.is_dir() {
        return Err(Failure::Input("--gen and --ref must both be files or both be directories".into()));
    }

    let mut clips = Vec::new();
    let mut tempo_pairs = Vec::new();
    if a.generated.is_dir() {
        for (name, gp, rp) in paired(&a.generated, &a.reference)? {
            let (report, phase_offset) = score(a, &read_beats(&gp)?, &read_beats(&rp)?)?;
            let td = match tempo_dirs {
                Some((tg, tr)) => {
                    let pair = (read_tempo(&tg.join(&name))?, read_tempo(&tr.join(&name))?);
                    tempo_pairs.push(pair);
                    Some(metrics::tempo_difference(pair.0, pair.1))
                }
                None => None,
            };
            clips.push(ClipEvaluation {
                clip: Some(name),
                report,
                phase_offset,
                tempo_difference: td,
            });
        }
    } else {
        let (report, phase_offset) = score(a, &read_beats(&a.generated)?, &read_beats(&a.reference)?)?;
        let td = match tempo_dirs {
            Some((tg, tr)) => {
                let pair = (read_tempo(tg)?, read_tempo(tr)?);
                tempo_pairs.push(pair);
                Some(metrics::tempo_difference(pair.0, pair.1))
            }
            None => None,
        };
        clips.push(ClipEvaluation {
            clip: None,
            report,
            phase_offset,
            tempo_difference: td,
        });
    }

    let reports: Vec<AlignmentReport> = clips.iter().map(|c| c.report.clone()).collect();
    let summary = metrics::aggregate_reports(&reports).map_err(Failure::input)?;
    match g.format {
        Format::Csv => {
            let names: Vec<String> = clips
                .iter()
                .map(|c| c.clip.clone().unwrap_or_else(|| a.generated.display().to_string()))
                .collect();
            emit(g, &metrics::reports_to_csv(&names, &reports, &summary))
        }
        Format::Json if a.generated.is_dir() => emit(
            g,
            &to_json(&DatasetEvaluation {
                clips,
                summary,
                mean_tempo_difference: metrics::mean_tempo_difference(&tempo_pairs),
            }),
        ),
        Format::Json => emit(g, &to_json(&clips[0])),
    }
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    variant: Variant,
    mode: Mode,
    learning_rate: f64,
    epochs: usize,
    initial_loss: f64,
    final_loss: f64,
    loss_ratio: f64,
    frozen_intact: bool,
    checkpoint: PathBuf,
    history: PathBuf,
}

fn train_toy(g: &Global, a: &TrainToy) -> Result<()> {
    json_only(g, "train-toy")?;
    let data: Dataset = inversion::load_dataset(&a.data).map_err(|e| Failure::at(&a.data, e))?;
    let config = TrainingConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        seed: g.seed.unwrap_or(DEFAULT_TRAIN_SEED),
        variant: a.variant.into(),
        mode: a.mode.map_or(data.mode, Mode::from),
    };
    let (checkpoint, outcome) = inversion::train(&config, &data).map_err(Failure::input)?;
    let out_dir = match &g.output {
        Some(dir) => dir.clone(),
        None if a.data.is_dir() => a.data.clone(),
        None => a.data.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let ckpt_path = out_dir.join("checkpoint.json");
    let hist_path = out_dir.join("loss.csv");
    write(&ckpt_path, checkpoint.to_json().as_bytes())?;
    write(&hist_path, outcome.history_csv().as_bytes())?;
    let summary = TrainSummary {
        seed: config.seed,
        variant: config.variant,
        mode: config.mode,
        learning_rate: config.learning_rate,
        epochs: config.epochs,
        initial_loss: outcome.initial_loss(),
        final_loss: outcome.final_loss(),
        loss_ratio: outcome.final_loss() / outcome.initial_loss(),
        frozen_intact: checkpoint.frozen_intact(),
        checkpoint: ckpt_path,
        history: hist_path,
    };
    println!("{}", to_json(&summary));
    Ok(())
}

fn gradcheck_csv(r: &GradCheckReport) -> String {
    let mut out = String::from("block,params,max_rel_err,max_abs_err\n");
    for b in &r.blocks {
        out.push_str(&format!("{},{},{},{}\n", b.name, b.params, b.max_rel_err, b.max_abs_err));
    }
    out
}

fn gradcheck(g: &Global, a: &Gradcheck) -> Result<()> {
    let seed = g.seed.unwrap_or(DEFAULT_GRADCHECK_SEED);
    let report = inversion::gradcheck(a.variant.into(), a.mode.into(), seed).map_err(Failure::input)?;
    match g.format {
        Format::Json => emit(g, &to_json(&report))?,
        Format::Csv => emit(g, &gradcheck_csv(&report))?,
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max relative error {:e} >= {:e}",
            report.max_rel_err,
            inversion::GRADCHECK_TOLERANCE
        )))
    }
}

fn make_toy_data(g: &Global, a: &MakeToyData) -> Result<()> {
    json_only(g, "make-toy-data")?;
    let dims = if a.small { Dims::small() } else { Dims::default() };
    let teacher_seed = g.seed.unwrap_or(DEFAULT_TEACHER_SEED);
    let data = inversion::teacher_student_dataset(dims, a.variant.into(), a.mode.into(), a.frozen_seed, teacher_seed, a.count);
    let dir = g.output.clone().unwrap_or_else(|| PathBuf::from("toy_data"));
    let path = dir.join("dataset.json");
    write(&path, data.to_json().as_bytes())?;
    eprintln!("wrote {} examples to {}", a.count, path.display());
    Ok(())
}

fn synth_clicks(g: &Global, a: &SynthClicks) -> Result<()> {
    let Some(path) = &g.output else {
        return Err(Failure::Input("synth-clicks needs --output FILE.wav".into()));
    };
    if !(a.duration > 0.0 && a.sample_rate > 0 && a.bpm >= 0.0) {
        return Err(Failure::Input("need positive duration and sample rate, nonnegative bpm".into()));
    }
    let clip = if a.bpm == 0.0 {
        AudioClip {
            sample_rate: a.sample_rate,
            samples: vec![0.0; (a.duration * a.sample_rate as f64).round() as usize],
        }
    } else {
        synth::click_track(a.bpm, a.duration, a.sample_rate, a.offset)
    };
    write(path, &clip.to_wav_bytes())
}

fn synth_poses(g: &Global, a: &SynthPoses) -> Result<()> {
    json_only(g, "synth-poses")?;
    if a.frames < pose::MIN_FRAMES || !(a.fps > 0.0) {
        return Err(Failure::Input(format!("need at least {} frames and positive fps", pose::MIN_FRAMES)));
    }
    let seq = if a.half_period == 0 {
        PoseSequence::new(a.fps, vec![vec![Keypoint::new(320.0, 240.0, 1.0)]; a.frames]).map_err(Failure::input)?
    } else {
        synth::oscillator(a.frames, a.half_period, a.speed, a.fps)
    };
    emit(g, &seq.to_json())
}
