//! `avlit profile`: analytical per-layer cost report, structural cost
//! checks across the size presets, and optional wall-clock timing.

use crate::run_config::RunConfig;
use anyhow::{bail, ensure, Result};
use avlit_core::model::ModelConfig;
use avlit_core::profiler::{cost_report, count_macs, count_params, time_inference};
use avlit_core::Model32;
use clap::Args;
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// Size preset (avlit-2, avlit-4, avlit-8)
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Config file (an `avlit train` run.cfg works)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input length in seconds
    #[arg(long, default_value_t = 2.0)]
    pub seconds: f64,
    /// Wall-clock timing trials (0 skips timing)
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    /// Write the per-layer CSV here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The profiled architecture resized to each preset's iteration counts.
fn preset_family(cfg: &ModelConfig) -> [(String, ModelConfig); 3] {
    [(2usize, 1usize), (4, 2), (8, 4)].map(|(na, nv)| {
        let mut c = cfg.clone();
        c.audio_iters = na;
        c.video_iters = nv;
        if !c.fusion_positions.is_empty() {
            c.fusion_positions = vec![0];
        }
        (format!("avlit-{na}"), c)
    })
}

pub fn run(args: ProfileArgs) -> Result<()> {
    let cfg = match (&args.preset, &args.config) {
        (Some(name), None) => ModelConfig::preset(name)?,
        (None, Some(path)) => RunConfig::from_file(path)?.model,
        (None, None) => ModelConfig::default(),
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };
    cfg.validate()?;
    if !(args.seconds > 0.0) {
        bail!("--seconds must be positive, got {}", args.seconds);
    }

    let report = cost_report(&cfg, args.seconds)?;
    println!("{}", report.render_table());
    println!(
        "params: {} ({:.3} M)   macs: {} ({:.3} G)   activations: {} elements ({:.2} M)",
        report.total_params(),
        report.total_params() as f64 / 1e6,
        report.total_macs(),
        report.total_macs() as f64 / 1e9,
        report.total_act_elems(),
        report.total_act_elems() as f64 / 1e6
    );

    // Structural guarantees of the shared-block design, checked on this
    // architecture resized across the preset family: one parameter set
    // regardless of depth, and compute affine in the iteration count.
    let family = preset_family(&cfg);
    let params: Vec<u64> = family.iter().map(|(_, c)| count_params(c)).collect();
    ensure!(
        params[0] == params[1] && params[1] == params[2],
        "parameter counts differ across presets: {params:?}"
    );
    println!(
        "check: params identical across {} = {} [pass]",
        family
            .iter()
            .map(|(n, _)| n.as_str())
            .collect::<Vec<_>>()
            .join("/"),
        params[0]
    );
    let macs: Vec<u64> = family
        .iter()
        .map(|(_, c)| count_macs(c, args.seconds))
        .collect::<avlit_core::Result<_>>()?;
    ensure!(
        macs[2] - macs[1] == 2 * (macs[1] - macs[0]),
        "macs are not affine in the iteration count: {macs:?}"
    );
    println!(
        "check: macs(avlit-8) - macs(avlit-4) = 2 x (macs(avlit-4) - macs(avlit-2)) = {} [pass]",
        macs[2] - macs[1]
    );

    if args.trials > 0 {
        let model = Model32::new(cfg.clone(), 0)?;
        let t = time_inference(&model, args.seconds, args.trials, 0)?;
        println!(
            "forward wall time: {:.1} ms +/- {:.1} ms over {} trials",
            t.mean_seconds * 1e3,
            t.std_seconds * 1e3,
            t.trials
        );
    }

    match &args.out {
        Some(path) => {
            std::fs::write(path, report.to_csv())
                .map_err(|e| avlit_core::Error::io(path, e))?;
            println!("wrote {}", path.display());
        }
        None => {
            println!("per-layer csv:");
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}
