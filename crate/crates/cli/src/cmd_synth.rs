//! `avlit synth`: generate a synthetic audio-visual corpus.

use anyhow::Result;
use avlit_core::datagen::{write_corpus, MixSpec};
use clap::Args;
use std::path::PathBuf;

/// Inclusive dB range written as `lo:hi`.
pub fn parse_db_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|_| format!("bad lower bound {lo:?}"))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|_| format!("bad upper bound {hi:?}"))?;
    if !lo.is_finite() || !hi.is_finite() {
        return Err(format!("bounds must be finite, got {s:?}"));
    }
    if lo > hi {
        return Err(format!("range is inverted: {lo} > {hi}"));
    }
    Ok((lo, hi))
}

/// `lo:hi`, or `none` to disable the noise source.
#[derive(Clone, Copy, Debug)]
pub struct NoiseRange(pub Option<(f64, f64)>);

pub fn parse_noise_range(s: &str) -> Result<NoiseRange, String> {
    if s.trim() == "none" {
        return Ok(NoiseRange(None));
    }
    parse_db_range(s).map(|r| NoiseRange(Some(r)))
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output corpus directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of items to generate
    #[arg(long)]
    pub items: usize,
    /// Item length in seconds
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    /// Speakers per mixture
    #[arg(long, default_value_t = 2)]
    pub speakers: usize,
    /// Relative speaker power range in dB, written lo:hi
    #[arg(long = "speech-snr", value_parser = parse_db_range, default_value = "-5:5")]
    pub speech_snr: (f64, f64),
    /// Mixture noise SNR range in dB, written lo:hi (or `none` for clean items)
    #[arg(long = "noise-snr", value_parser = parse_noise_range, default_value = "-6:3")]
    pub noise_snr: NoiseRange,
    /// Corpus seed; the same seed reproduces the corpus byte for byte
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Audio sample rate in Hz
    #[arg(long = "sample-rate", default_value_t = 16000)]
    pub sample_rate: u32,
    /// Video frame rate
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    /// Video frame edge length in pixels (multiple of 16)
    #[arg(long = "frame-size", default_value_t = 64)]
    pub frame_size: usize,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let spec = MixSpec {
        speakers: args.speakers,
        duration: args.duration,
        sample_rate: args.sample_rate,
        fps: args.fps,
        frame_size: args.frame_size,
        gain_range_db: args.speech_snr,
        noise_snr_db: args.noise_snr.0,
        seed: args.seed,
    };
    let rows = write_corpus(&args.out, &spec, args.items)?;
    let hours = args.items as f64 * args.duration / 3600.0;
    println!(
        "wrote {} items ({:.3} h of audio) to {}",
        rows.len(),
        hours,
        args.out.display()
    );
    println!(
        "  {} speakers/item, {:.2} s @ {} Hz, {} fps {}x{} video, seed {}",
        spec.speakers,
        spec.duration,
        spec.sample_rate,
        spec.fps,
        spec.frame_size,
        spec.frame_size,
        spec.seed
    );
    let noise = match spec.noise_snr_db {
        Some((lo, hi)) => format!("[{lo}, {hi}] dB"),
        None => "none".to_string(),
    };
    println!(
        "  speaker gains [{}, {}] dB, noise snr {}",
        spec.gain_range_db.0, spec.gain_range_db.1, noise
    );
    Ok(())
}
