//! Single-binary front end: corpus synthesis, training, separation, and
//! profiling. Human-readable output goes to stdout, progress and
//! diagnostics to stderr; a nonzero exit means the requested artifact was
//! not completely written.

mod cmd_profile;
mod cmd_separate;
mod cmd_synth;
mod cmd_train;
mod run_config;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

/// Audio-visual speech separation: an iterative separator with one shared
/// block per modality, plus the tooling to feed and measure it.
#[derive(Parser)]
#[command(name = "avlit", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic audio-visual corpus
    Synth(cmd_synth::SynthArgs),
    /// Train a separator on a corpus
    Train(cmd_train::TrainArgs),
    /// Separate one mixture with a trained model
    Separate(cmd_separate::SeparateArgs),
    /// Analytical cost report, preset cross-checks, and timing
    Profile(cmd_profile::ProfileArgs),
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("AVLIT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("AVLIT_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            bail!("AVLIT_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing the worker pool")?;
    }
    Ok(())
}

fn main() -> Result<()> {
    init_threads()?;
    match Cli::parse().cmd {
        Cmd::Synth(a) => cmd_synth::run(a),
        Cmd::Train(a) => cmd_train::run(a),
        Cmd::Separate(a) => cmd_separate::run(a),
        Cmd::Profile(a) => cmd_profile::run(a),
    }
}
