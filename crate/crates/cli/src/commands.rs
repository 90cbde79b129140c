//! Subcommand implementations.

use crate::{config, Cli, Command};
use ndarray::Array2;
use ofkit::decoder::{strategy_by_name, DecodeError, DecoderConfig};
use ofkit::frontend::AudioBuffer;
use ofkit::labels::LabelSet;
use ofkit::losses::total_loss;
use ofkit::mat1::{self, Mat1Data};
use ofkit::metrics::{aggregate, evaluate_piece_with, EvalReport, MatchingConfig};
use ofkit::midi::{apply_sustain, parse_midi, write_midi, MidiParse};
use ofkit::types::{BinaryRoll, FrameGrid, Posteriorgram, NUM_PITCHES};
use ofkit::wav::{read_wav_file, write_wav_file, WavData};
use rayon::prelude::*;
use serde::Serialize;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

const EXIT_GENERIC: i32 = 1;
const EXIT_MISSING_INPUT: i32 = 2;
const EXIT_SHAPE_MISMATCH: i32 = 3;
const EXIT_NO_PAIRS: i32 = 4;

#[derive(Debug)]
pub struct Failure {
    pub exit_code: i32,
    pub message: String,
}

impl Failure {
    fn new(exit_code: i32, message: impl Into<String>) -> Self {
        Failure {
            exit_code,
            message: message.into(),
        }
    }

    /// Read failures: missing files get the dedicated exit code.
    pub fn read(path: &Path, err: &std::io::Error) -> Self {
        let code = if err.kind() == ErrorKind::NotFound {
            EXIT_MISSING_INPUT
        } else {
            EXIT_GENERIC
        };
        Failure::new(code, format!("{}: {err}", path.display()))
    }

    fn shape(message: impl Into<String>) -> Self {
        Failure::new(EXIT_SHAPE_MISMATCH, message)
    }

    fn in_file(path: &Path, message: impl std::fmt::Display) -> Self {
        Failure::new(EXIT_GENERIC, format!("{}: {message}", path.display()))
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::new(EXIT_GENERIC, err.to_string())
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let file_config = config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Frontend { input, output } => cmd_frontend(&input, &output),
        Command::Labels {
            midi,
            out_prefix,
            duration,
        } => cmd_labels(&midi, &out_prefix, duration),
        Command::Decode {
            onset,
            frame,
            velocity,
            output,
            onset_threshold,
            frame_threshold,
            no_onset_gate,
        } => {
            let cfg = file_config.decoder_config(onset_threshold, frame_threshold);
            let strategy = file_config.strategy_name(no_onset_gate);
            cmd_decode(&onset, &frame, &velocity, &output, &cfg, &strategy)
        }
        Command::Eval {
            reference,
            estimate,
            json,
            onset_tolerance,
            velocity_tau,
        } => {
            let cfg = file_config.matching_config(onset_tolerance, velocity_tau);
            cmd_eval(&reference, &estimate, json.as_deref(), &cfg)
        }
        Command::Split { wav, midi, out_dir } => cmd_split(&wav, &midi, &out_dir),
        Command::Loss {
            labels_prefix,
            onset,
            frame,
            velocity,
        } => cmd_loss(&labels_prefix, &onset, &frame, &velocity),
    }
}

/// Worker pool capped by the OFK_THREADS environment variable.
fn thread_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("OFK_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        builder = builder.num_threads(n);
    }
    builder.build().expect("thread pool")
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::read(path, &e))
}

fn parse_midi_file(path: &Path) -> Result<MidiParse, Failure> {
    let bytes = read_bytes(path)?;
    let parsed = parse_midi(&bytes).map_err(|e| Failure::in_file(path, e))?;
    for warning in &parsed.warnings {
        eprintln!("warning: {}: {warning}", path.display());
    }
    Ok(parsed)
}

/// Sorted listing of files with one of the given extensions.
fn list_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>, Failure> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::read(dir, &e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| extensions.iter().any(|x| x.eq_ignore_ascii_case(e)))
        })
        .collect();
    files.sort();
    Ok(files)
}

// ---------------------------------------------------------------------------
// frontend

fn cmd_frontend(input: &Path, output: &Path) -> Result<(), Failure> {
    if input.is_dir() {
        let files = list_files(input, &["wav"])?;
        std::fs::create_dir_all(output)?;
        let results: Vec<Result<(), Failure>> = thread_pool().install(|| {
            files
                .par_iter()
                .map(|wav| {
                    let out = output
                        .join(wav.file_stem().expect("listed file"))
                        .with_extension("mat");
                    frontend_one(wav, &out)
                })
                .collect()
        });
        results.into_iter().collect()
    } else {
        frontend_one(input, output)
    }
}

fn frontend_one(input: &Path, output: &Path) -> Result<(), Failure> {
    let wav = read_wav_file(input).map_err(|e| match e {
        ofkit::wav::WavError::Io(io) => Failure::read(input, &io),
        other => Failure::in_file(input, other),
    })?;
    let audio = AudioBuffer::from_wav(&wav);
    let mel = ofkit::frontend::log_mel(&audio).map_err(|e| Failure::in_file(input, e))?;
    mat1::write_f32_file(output, &mel.values)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// labels

fn label_paths(prefix: &Path) -> [PathBuf; 4] {
    let with = |suffix: &str| {
        let mut name = prefix.file_name().unwrap_or_default().to_os_string();
        name.push(suffix);
        prefix.with_file_name(name)
    };
    [
        with(".frames.mat"),
        with(".onsets.mat"),
        with(".weights.mat"),
        with(".velocities.mat"),
    ]
}

fn cmd_labels(midi: &Path, out_prefix: &Path, duration: Option<f64>) -> Result<(), Failure> {
    let parsed = parse_midi_file(midi)?;
    let seq = apply_sustain(&parsed.sequence, &parsed.pedal);
    let duration = duration.unwrap_or_else(|| seq.duration_s());
    let grid = FrameGrid::for_duration(duration);
    let labels = LabelSet::from_sequence(&seq, grid);

    let [frames, onsets, weights, velocities] = label_paths(out_prefix);
    if let Some(parent) = out_prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    mat1::write_u8_file(frames, labels.frames.values())?;
    mat1::write_u8_file(onsets, labels.onsets.values())?;
    mat1::write_f32_file(weights, &labels.weights)?;
    mat1::write_f32_file(velocities, &labels.velocities)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// decode

fn read_mat(path: &Path) -> Result<Mat1Data, Failure> {
    mat1::read_file(path).map_err(|e| match e {
        mat1::Mat1Error::Io(io) => Failure::read(path, &io),
        other => Failure::in_file(path, other),
    })
}

/// Loads a probability channel, clamping stray values into [0, 1] (binary
/// label files pass through exactly).
fn read_probabilities(path: &Path, grid: Option<FrameGrid>) -> Result<Posteriorgram, Failure> {
    let data = read_mat(path)?;
    if data.cols() != NUM_PITCHES {
        return Err(Failure::shape(format!(
            "{}: expected 88 columns, found {}",
            path.display(),
            data.cols()
        )));
    }
    let grid = match grid {
        Some(g) if g.n_frames != data.rows() => {
            return Err(Failure::shape(format!(
                "{}: {} frames where {} were expected",
                path.display(),
                data.rows(),
                g.n_frames
            )))
        }
        Some(g) => g,
        None => FrameGrid::new(
            FrameGrid::DEFAULT_SAMPLE_RATE,
            FrameGrid::DEFAULT_HOP_LENGTH,
            data.rows(),
        ),
    };
    let values = data.to_f64().mapv(|v| v.clamp(0.0, 1.0));
    Posteriorgram::new(grid, values).map_err(|e| Failure::shape(e.to_string()))
}

fn cmd_decode(
    onset: &Path,
    frame: &Path,
    velocity: &Path,
    output: &Path,
    cfg: &DecoderConfig,
    strategy: &str,
) -> Result<(), Failure> {
    let p_onset = read_probabilities(onset, None)?;
    let p_frame = read_probabilities(frame, Some(p_onset.grid))?;
    let v_data = read_mat(velocity)?;
    if v_data.rows() != p_onset.grid.n_frames || v_data.cols() != NUM_PITCHES {
        return Err(Failure::shape(format!(
            "{}: velocity matrix is {}x{}, posteriorgrams are {}x{}",
            velocity.display(),
            v_data.rows(),
            v_data.cols(),
            p_onset.grid.n_frames,
            NUM_PITCHES
        )));
    }

    let decoder =
        strategy_by_name(strategy).map_err(|e| Failure::new(EXIT_GENERIC, e.to_string()))?;
    let seq = decoder
        .decode(&p_onset, &p_frame, &v_data.to_f64(), cfg)
        .map_err(|e| match e {
            DecodeError::GridMismatch(..) | DecodeError::ShapeMismatch { .. } => {
                Failure::shape(e.to_string())
            }
            other => Failure::new(EXIT_GENERIC, other.to_string()),
        })?;
    std::fs::write(output, write_midi(&seq))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Serialize)]
struct EvalDocument {
    schema_version: u32,
    pieces: Vec<EvalReport>,
    aggregate: EvalReport,
}

fn cmd_eval(
    reference: &Path,
    estimate: &Path,
    json_out: Option<&Path>,
    cfg: &MatchingConfig,
) -> Result<(), Failure> {
    let pairs = collect_pairs(reference, estimate)?;
    if pairs.is_empty() {
        return Err(Failure::new(EXIT_NO_PAIRS, "no reference/estimate pairs"));
    }

    let results: Vec<Result<EvalReport, Failure>> = thread_pool().install(|| {
        pairs
            .par_iter()
            .map(|(name, ref_path, est_path)| {
                let ref_parsed = parse_midi_file(ref_path)?;
                let est_parsed = parse_midi_file(est_path)?;
                let reference = apply_sustain(&ref_parsed.sequence, &ref_parsed.pedal);
                let estimate = apply_sustain(&est_parsed.sequence, &est_parsed.pedal);
                let duration = reference.duration_s().max(estimate.duration_s());
                let grid = FrameGrid::for_duration(duration);
                let mut report = evaluate_piece_with(&reference, &estimate, grid, cfg);
                report.piece = name.clone();
                Ok(report)
            })
            .collect()
    });
    let pieces: Vec<EvalReport> = results.into_iter().collect::<Result<_, _>>()?;

    let document = EvalDocument {
        schema_version: 1,
        aggregate: aggregate(&pieces).expect("pairs is non-empty"),
        pieces,
    };
    let json = serde_json::to_string_pretty(&document).expect("serializable");
    println!("{json}");
    if let Some(path) = json_out {
        std::fs::write(path, json.as_bytes())?;
    }
    Ok(())
}

/// (piece name, reference path, estimate path) pairs, sorted by name.
/// Direct file inputs form a single pair; directories pair by file stem.
fn collect_pairs(
    reference: &Path,
    estimate: &Path,
) -> Result<Vec<(String, PathBuf, PathBuf)>, Failure> {
    match (reference.is_dir(), estimate.is_dir()) {
        (false, false) => {
            for p in [reference, estimate] {
                if !p.exists() {
                    return Err(Failure::new(
                        EXIT_MISSING_INPUT,
                        format!("{}: not found", p.display()),
                    ));
                }
            }
            let name = reference
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "piece".to_string());
            Ok(vec![(
                name,
                reference.to_path_buf(),
                estimate.to_path_buf(),
            )])
        }
        (true, true) => {
            let refs = list_files(reference, &["mid", "midi"])?;
            let ests = list_files(estimate, &["mid", "midi"])?;
            let est_by_stem: std::collections::HashMap<String, PathBuf> = ests
                .iter()
                .filter_map(|p| {
                    p.file_stem()
                        .map(|s| (s.to_string_lossy().into_owned(), p.clone()))
                })
                .collect();
            let mut pairs = Vec::new();
            for ref_path in &refs {
                let stem = ref_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                match est_by_stem.get(&stem) {
                    Some(est_path) => {
                        pairs.push((stem.clone(), ref_path.clone(), est_path.clone()));
                    }
                    None => eprintln!(
                        "warning: {}: no matching estimate, skipped",
                        ref_path.display()
                    ),
                }
            }
            for est_path in &ests {
                let stem = est_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                if !pairs.iter().any(|(name, _, _)| *name == stem) {
                    eprintln!(
                        "warning: {}: no matching reference, skipped",
                        est_path.display()
                    );
                }
            }
            pairs.sort_by(|a, b| a.0.cmp(&b.0));
            Ok(pairs)
        }
        _ => Err(Failure::new(
            EXIT_GENERIC,
            "reference and estimate must both be files or both be directories",
        )),
    }
}

// ---------------------------------------------------------------------------
// split

#[derive(Serialize)]
struct SplitManifest {
    schema_version: u32,
    sample_rate: u32,
    channels: u16,
    split_samples: Vec<usize>,
    split_times_s: Vec<f64>,
    segments: Vec<String>,
}

fn cmd_split(wav_path: &Path, midi_path: &Path, out_dir: &Path) -> Result<(), Failure> {
    let wav = read_wav_file(wav_path).map_err(|e| match e {
        ofkit::wav::WavError::Io(io) => Failure::read(wav_path, &io),
        other => Failure::in_file(wav_path, other),
    })?;
    let parsed = parse_midi_file(midi_path)?;
    let seq = apply_sustain(&parsed.sequence, &parsed.pedal);

    let audio = AudioBuffer::from_wav(&wav);
    let splits = ofkit::frontend::find_splits(&audio, &seq, 20.0);
    std::fs::create_dir_all(out_dir)?;

    // cut the original payload when it is already at 16 kHz (bit-exact
    // segments);
    // otherwise cut the resampled mono signal
    let (sample_rate, channels, cut): (u32, u16, WavData) = if wav.sample_rate == 16_000 {
        (16_000, wav.channels, wav.data.clone())
    } else {
        (
            16_000,
            1,
            WavData::F32(audio.samples.iter().map(|&x| x as f32).collect()),
        )
    };
    let n_frames = cut.len() / channels as usize;

    let mut boundaries = vec![0usize];
    boundaries.extend(splits.iter().copied().filter(|&s| s < n_frames));
    boundaries.push(n_frames);

    let mut segments = Vec::new();
    for (i, window) in boundaries.windows(2).enumerate() {
        let (a, b) = (window[0] * channels as usize, window[1] * channels as usize);
        let slice = match &cut {
            WavData::I16(v) => WavData::I16(v[a..b].to_vec()),
            WavData::F32(v) => WavData::F32(v[a..b].to_vec()),
        };
        let name = format!("segment_{i:03}.wav");
        write_wav_file(out_dir.join(&name), sample_rate, channels, &slice)?;
        segments.push(name);
    }

    let manifest = SplitManifest {
        schema_version: 1,
        sample_rate,
        channels,
        split_times_s: splits
            .iter()
            .map(|&s| s as f64 / f64::from(audio.sample_rate))
            .collect(),
        split_samples: splits,
        segments,
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("serializable"),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// loss

fn read_binary_roll(path: &Path, grid: FrameGrid) -> Result<BinaryRoll, Failure> {
    let data = read_mat(path)?;
    let values: Array2<u8> = match data {
        Mat1Data::U8(m) => m,
        Mat1Data::F32(m) => {
            let mut out = Array2::zeros(m.dim());
            for (idx, &v) in m.indexed_iter() {
                if v != 0.0 && v != 1.0 {
                    return Err(Failure::in_file(path, "roll entries must be 0 or 1"));
                }
                out[idx] = v as u8;
            }
            out
        }
    };
    if values.dim() != (grid.n_frames, NUM_PITCHES) {
        return Err(Failure::shape(format!(
            "{}: roll is {:?}, expected {:?}",
            path.display(),
            values.dim(),
            (grid.n_frames, NUM_PITCHES)
        )));
    }
    BinaryRoll::new(grid, values).map_err(|e| Failure::in_file(path, e))
}

fn cmd_loss(
    labels_prefix: &Path,
    onset: &Path,
    frame: &Path,
    velocity: &Path,
) -> Result<(), Failure> {
    let [frames_path, onsets_path, weights_path, velocities_path] = label_paths(labels_prefix);
    let frames_data = read_mat(&frames_path)?;
    let grid = FrameGrid::new(
        FrameGrid::DEFAULT_SAMPLE_RATE,
        FrameGrid::DEFAULT_HOP_LENGTH,
        frames_data.rows(),
    );
    drop(frames_data);

    let labels = LabelSet {
        frames: read_binary_roll(&frames_path, grid)?,
        onsets: read_binary_roll(&onsets_path, grid)?,
        weights: read_mat(&weights_path)?.to_f64(),
        velocities: read_mat(&velocities_path)?.to_f64(),
    };

    let p_onset = read_probabilities(onset, Some(grid))?;
    let p_frame = read_probabilities(frame, Some(grid))?;
    let v_pred = read_mat(velocity)?.to_f64();

    let breakdown = total_loss(&labels, &p_onset, &p_frame, &v_pred)
        .map_err(|e| Failure::shape(e.to_string()))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&breakdown).expect("serializable")
    );
    Ok(())
}
