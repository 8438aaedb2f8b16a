//! `avlit train`: fit a separator on a corpus and write checkpoint,
//! metrics, and the resolved config.

use crate::run_config::RunConfig;
use anyhow::{ensure, Context, Result};
use avlit_core::datagen::{load_item, open_corpus};
use avlit_core::model::{fusion_preset, save_checkpoint, ModelConfig};
use avlit_core::objectives::{metrics_csv, train, TrainItem};
use avlit_core::Model32;
use clap::Args;
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Key-value config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus directory (from `avlit synth`)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for model.ckpt, metrics.csv, run.cfg
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Ignore video: no fusion input, permutation-invariant loss
    #[arg(long = "audio-only")]
    pub audio_only: bool,
    /// Size preset (avlit-2, avlit-4, avlit-8): sets the iteration counts
    #[arg(long)]
    pub preset: Option<String>,
    /// Fusion schedule (early, middle, late, all)
    #[arg(long)]
    pub fusion: Option<String>,
    /// Audio branch width: encoder and audio block channels
    #[arg(long)]
    pub ca: Option<usize>,
    /// Video branch width: video block channels
    #[arg(long)]
    pub cv: Option<usize>,
    /// Weight-init and shuffling seed; reruns are byte-identical
    #[arg(long)]
    pub seed: Option<u64>,
    /// Items per optimizer step
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// Base learning rate
    #[arg(long)]
    pub lr: Option<f64>,
}

/// Layer the command-line flags over the config file (flags win).
pub fn resolve(args: &TrainArgs) -> Result<RunConfig> {
    let mut rc = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(name) = &args.preset {
        let p = ModelConfig::preset(name)?;
        rc.model.audio_iters = p.audio_iters;
        rc.model.video_iters = p.video_iters;
        rc.model.fusion_positions = p.fusion_positions;
    }
    if let Some(name) = &args.fusion {
        rc.model.fusion_positions = fusion_preset(name, rc.model.audio_iters)?;
    }
    if let Some(ca) = args.ca {
        rc.model.enc_channels = ca;
        rc.model.audio_channels = ca;
    }
    if let Some(cv) = args.cv {
        rc.model.video_channels = cv;
    }
    if let Some(e) = args.epochs {
        rc.train.epochs = e;
    }
    if args.audio_only {
        rc.train.audio_only = true;
    }
    if let Some(s) = args.seed {
        rc.train.seed = s;
    }
    if let Some(b) = args.batch_size {
        rc.train.batch_size = b;
    }
    if let Some(lr) = args.lr {
        rc.train.lr = lr;
    }
    if let Some(d) = &args.data {
        rc.data = Some(d.clone());
    }
    if let Some(o) = &args.out {
        rc.out = Some(o.clone());
    }
    rc.model.validate()?;
    Ok(rc)
}

pub fn run(args: TrainArgs) -> Result<()> {
    let rc = resolve(&args)?;
    let data = rc
        .data
        .clone()
        .context("no corpus given: pass --data or set `data` in the config")?;
    let out = rc
        .out
        .clone()
        .context("no output directory given: pass --out or set `out` in the config")?;

    let corpus = open_corpus(&data)?;
    let m = &rc.model;
    ensure!(
        corpus.spec.speakers == m.speakers,
        "corpus has {} speakers per item, model separates {}",
        corpus.spec.speakers,
        m.speakers
    );
    ensure!(
        corpus.spec.sample_rate == m.sample_rate,
        "corpus is {} Hz, model expects {} Hz",
        corpus.spec.sample_rate,
        m.sample_rate
    );
    ensure!(
        corpus.spec.fps == m.fps && corpus.spec.frame_size == m.frame_size,
        "corpus video is {} fps {}x{}, model expects {} fps {}x{}",
        corpus.spec.fps,
        corpus.spec.frame_size,
        corpus.spec.frame_size,
        m.fps,
        m.frame_size,
        m.frame_size
    );

    eprintln!("loading {} items from {}", corpus.rows.len(), data.display());
    let items: Vec<TrainItem<f32>> = corpus
        .rows
        .iter()
        .map(|row| Ok(load_item(&data, &corpus.spec, row)?.train_item()))
        .collect::<Result<_>>()?;

    let mut model = Model32::new(rc.model.clone(), rc.train.seed)?;
    eprintln!(
        "training: {} parameters, {} items, {} epochs (audio iters {}, video iters {}, fusion {:?}{})",
        model.params().total_elements(),
        items.len(),
        rc.train.epochs,
        m.audio_iters,
        m.video_iters,
        m.fusion_positions,
        if rc.train.audio_only { ", audio-only" } else { "" }
    );
    let report = train(&mut model, &items, &rc.train, |row| {
        eprintln!(
            "epoch {:>3} {:<5} loss {:>9.4}  si-sdri {:>7.2} dB  (lr {:.2e})",
            row.epoch, row.split, row.loss, row.si_sdri, row.lr
        );
    })?;

    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&model, &ckpt)?;
    let metrics = out.join("metrics.csv");
    std::fs::write(&metrics, metrics_csv(&report.rows))
        .with_context(|| format!("writing {}", metrics.display()))?;
    let cfg_path = out.join("run.cfg");
    std::fs::write(&cfg_path, rc.to_kv_text())
        .with_context(|| format!("writing {}", cfg_path.display()))?;

    match report.best_val_si_sdri {
        Some(v) => println!(
            "best epoch {} with validation si-sdri {:+.2} dB",
            report.best_epoch, v
        ),
        None => println!("finished {} epochs (no validation split)", rc.train.epochs),
    }
    for p in [&ckpt, &metrics, &cfg_path] {
        println!("wrote {}", p.display());
    }
    Ok(())
}
