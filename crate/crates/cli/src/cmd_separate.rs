//! `avlit separate`: run a trained model on one mixture and write one
//! estimate WAV per speaker, ordered like the video arguments.

use anyhow::{ensure, Context, Result};
use avlit_core::io::avfr::read_avfr;
use avlit_core::io::wav::{read_wav, write_wav, SampleFormat};
use avlit_core::model::load_checkpoint;
use avlit_core::objectives::si_sdr_improvement;
use avlit_core::{Model32, Tensor32};
use clap::Args;
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct SeparateArgs {
    /// Checkpoint written by `avlit train`
    #[arg(long)]
    pub model: PathBuf,
    /// Mixture WAV (mono, at the model's sample rate)
    #[arg(long)]
    pub mix: PathBuf,
    /// One frame-stream file per speaker; outputs keep this order.
    /// Omit to separate on audio alone.
    #[arg(long, num_args = 1..)]
    pub video: Vec<PathBuf>,
    /// Output directory for s1.wav .. sM.wav
    #[arg(long)]
    pub out: PathBuf,
    /// Reference WAVs in the same order; prints per-speaker SI-SDRi
    #[arg(long, num_args = 1..)]
    pub refs: Vec<PathBuf>,
}

pub fn run(args: SeparateArgs) -> Result<()> {
    let model: Model32 = load_checkpoint(&args.model)?;
    let cfg = model.config().clone();
    let (mix, wav_spec) = read_wav::<f32>(&args.mix)?;
    ensure!(
        wav_spec.sample_rate == cfg.sample_rate,
        "{} is {} Hz but the model expects {} Hz",
        args.mix.display(),
        wav_spec.sample_rate,
        cfg.sample_rate
    );

    let video = if args.video.is_empty() {
        None
    } else {
        ensure!(
            args.video.len() == cfg.speakers,
            "model separates {} speakers, got {} video streams",
            cfg.speakers,
            args.video.len()
        );
        let streams = args
            .video
            .iter()
            .map(|p| read_avfr(p))
            .collect::<avlit_core::Result<Vec<_>>>()?;
        let want = cfg.frames_for_samples(mix.numel());
        for (p, s) in args.video.iter().zip(&streams) {
            ensure!(
                s.count() == want,
                "{}: mixture of {} samples implies {} frames at {} fps, stream has {}",
                p.display(),
                mix.numel(),
                want,
                cfg.fps,
                s.count()
            );
        }
        Some(model.encode_video(&streams)?)
    };

    let estimates = model.separate(&mix, video.as_ref())?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut written = Vec::new();
    for (i, est) in estimates.iter().enumerate() {
        let path = args.out.join(format!("s{}.wav", i + 1));
        write_wav(&path, est, cfg.sample_rate, SampleFormat::Float32)?;
        println!("wrote {}", path.display());
        written.push(path);
    }

    if !args.refs.is_empty() {
        ensure!(
            args.refs.len() == written.len(),
            "got {} references for {} estimates",
            args.refs.len(),
            written.len()
        );
        // score exactly what landed on disk
        let mut mean = 0.0;
        for (i, (est_path, ref_path)) in written.iter().zip(&args.refs).enumerate() {
            let (est, _): (Tensor32, _) = read_wav(est_path)?;
            let (reference, ref_spec): (Tensor32, _) = read_wav(ref_path)?;
            ensure!(
                ref_spec.sample_rate == cfg.sample_rate,
                "{} is {} Hz but the model runs at {} Hz",
                ref_path.display(),
                ref_spec.sample_rate,
                cfg.sample_rate
            );
            ensure!(
                reference.numel() == mix.numel(),
                "{} has {} samples, mixture has {}",
                ref_path.display(),
                reference.numel(),
                mix.numel()
            );
            let ds = si_sdr_improvement(est.as_slice(), mix.as_slice(), reference.as_slice())?;
            println!("s{}: si-sdri {:+.2} dB", i + 1, ds);
            mean += ds;
        }
        println!("mean si-sdri {:+.2} dB", mean / written.len() as f64);
    }
    Ok(())
}
