//! `ofkit` — batch CLI over the transcription toolkit.
//!
//! Exit codes: 0 success, 1 generic failure, 2 missing input file,
//! 3 matrix shape mismatch, 4 no evaluation pairs.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "ofkit",
    version,
    about = "Piano transcription pipeline toolkit"
)]
pub struct Cli {
    /// TOML config file ([decoder] and [matching] sections); command-line
    /// flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Log-mel spectrogram of a WAV file (or every WAV in a directory)
    Frontend {
        /// Input WAV file or directory
        input: PathBuf,
        /// Output .mat file or directory
        output: PathBuf,
    },
    /// Quantize a MIDI file into frame/onset/weight/velocity matrices
    Labels {
        midi: PathBuf,
        /// Output prefix; writes <prefix>.{frames,onsets,weights,velocities}.mat
        out_prefix: PathBuf,
        /// Piece duration in seconds (defaults to the MIDI duration)
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Decode onset/frame/velocity matrices into a MIDI file
    Decode {
        onset: PathBuf,
        frame: PathBuf,
        velocity: PathBuf,
        output: PathBuf,
        #[arg(long)]
        onset_threshold: Option<f64>,
        #[arg(long)]
        frame_threshold: Option<f64>,
        /// Drop the onset gate: run-length decode of the frame channel alone
        #[arg(long)]
        no_onset_gate: bool,
    },
    /// Evaluate estimated MIDI against reference MIDI (files or directories)
    Eval {
        reference: PathBuf,
        estimate: PathBuf,
        /// Also write the JSON report to this path
        #[arg(long, value_name = "PATH")]
        json: Option<PathBuf>,
        /// Note onset tolerance in seconds
        #[arg(long)]
        onset_tolerance: Option<f64>,
        /// Velocity residual threshold
        #[arg(long)]
        velocity_tau: Option<f64>,
    },
    /// Split audio at ~20 s boundaries, preferring note gaps, else zero
    /// crossings; writes segments plus a JSON manifest
    Split {
        wav: PathBuf,
        midi: PathBuf,
        out_dir: PathBuf,
    },
    /// Loss breakdown between a label set and predicted matrices
    Loss {
        /// Prefix written by `labels`
        labels_prefix: PathBuf,
        onset: PathBuf,
        frame: PathBuf,
        velocity: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(failure) = commands::run(cli) {
        eprintln!("error: {}", failure.message);
        std::process::exit(failure.exit_code);
    }
}
