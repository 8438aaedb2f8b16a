//! Analytical cost model and wall-clock timing.
//!
//! MAC accounting matches the instrumented kernels exactly: convs count
//! `K * (Cin/groups) * Cout * T_out` (transposed convs the mirror image
//! with `T_in`), normalizations count `2 * numel`, and elementwise work
//! (activations, adds, masking, resampling) counts nothing. The cost plan
//! mirrors the forward pass structurally, so the instrumented counter and
//! `count_macs` agree to the last multiply on any configuration.

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, AE_CHANNELS, AE_KERNEL};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// One layer's cost. `macs` and `act_elems` are totals across all
/// executions (`runs`); `params` are counted once since repeated runs
/// share weights.
#[derive(Clone, Debug)]
pub struct CostRow {
    pub name: String,
    pub runs: u64,
    pub macs: u64,
    pub params: u64,
    pub act_elems: u64,
}

impl CostRow {
    pub fn new(name: String, macs: u64, params: u64, act_elems: u64) -> Self {
        CostRow {
            name,
            runs: 1,
            macs,
            params,
            act_elems,
        }
    }

    fn repeated(mut self, runs: u64) -> Self {
        self.runs = runs;
        self.macs *= runs;
        self.act_elems *= runs;
        self
    }
}

#[derive(Clone, Debug)]
pub struct CostReport {
    pub seconds: f64,
    pub samples: usize,
    pub latent_len: usize,
    pub frames: usize,
    pub rows: Vec<CostRow>,
}

impl CostReport {
    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_act_elems(&self) -> u64 {
        self.rows.iter().map(|r| r.act_elems).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,macs,params,act_elems\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.name, r.macs, r.params, r.act_elems
            ));
        }
        s.push_str(&format!(
            "total,{},{},{}\n",
            self.total_macs(),
            self.total_params(),
            self.total_act_elems()
        ));
        s
    }

    pub fn render_table(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(["layer".len(), "total".len()])
            .max()
            .unwrap();
        let mut s = format!(
            "input: {:.2}s ({} samples, latent {}, {} frames)\n",
            self.seconds, self.samples, self.latent_len, self.frames
        );
        s.push_str(&format!(
            "{:<name_w$}  {:>4}  {:>14}  {:>12}  {:>14}\n",
            "layer", "runs", "macs", "params", "act_elems"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<name_w$}  {:>4}  {:>14}  {:>12}  {:>14}\n",
                r.name, r.runs, r.macs, r.params, r.act_elems
            ));
        }
        s.push_str(&format!(
            "{:<name_w$}  {:>4}  {:>14}  {:>12}  {:>14}\n",
            "total",
            "",
            self.total_macs(),
            self.total_params(),
            self.total_act_elems()
        ));
        s
    }
}

/// Build the cost plan for one forward pass over `seconds` of audio.
/// Mirrors the forward exactly: the video branch appears only when the
/// fusion schedule is non-empty, and frame encoding covers all speakers'
/// frames.
pub fn cost_report(cfg: &ModelConfig, seconds: f64) -> Result<CostReport> {
    cfg.validate()?;
    if !(seconds > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "input duration must be positive, got {seconds}"
        )));
    }
    let samples = (seconds * cfg.sample_rate as f64).round() as usize;
    let t_lat = cfg.latent_len(samples)?;
    let frames = cfg.frames_for_samples(samples);
    let (c, k, m) = (
        cfg.enc_channels as u64,
        cfg.enc_kernel as u64,
        cfg.speakers as u64,
    );
    let t_lat64 = t_lat as u64;
    let f64_ = frames as u64;
    let bv = cfg.video_bottleneck as u64;
    let cp = cfg.embed_dim as u64;

    let mut rows = Vec::new();
    rows.push(CostRow::new(
        "audio_enc".into(),
        k * c * t_lat64,
        c * k + c,
        c * t_lat64,
    ));

    let video_active = !cfg.fusion_positions.is_empty();
    if video_active {
        if frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "{seconds}s of audio yields zero video frames at {} fps",
                cfg.fps
            )));
        }
        // frame encoder: 4 convs per frame, all speakers
        let mut ae_macs = 0u64;
        let mut ae_act = 0u64;
        let mut side = cfg.frame_size as u64;
        for i in 0..4 {
            side /= 2;
            ae_macs += (AE_CHANNELS[i + 1] * AE_CHANNELS[i] * AE_KERNEL * AE_KERNEL) as u64
                * side
                * side;
            ae_act += AE_CHANNELS[i + 1] as u64 * side * side;
        }
        let ae_params: u64 = (0..4)
            .map(|i| (AE_CHANNELS[i + 1] * AE_CHANNELS[i] * AE_KERNEL * AE_KERNEL) as u64)
            .sum();
        rows.push(CostRow::new("video_ae".into(), ae_macs, ae_params, ae_act).repeated(m * f64_));
        rows.push(
            CostRow::new("video_in".into(), bv * cp * f64_, bv * cp + bv, bv * f64_).repeated(m),
        );
        if cfg.video_iters > 0 {
            let runs = m * cfg.video_iters as u64;
            for row in cfg.video_block().cost_rows("video_block.", frames) {
                rows.push(row.repeated(runs));
            }
        }
        rows.push(CostRow::new(
            "video_merge".into(),
            c * (m * bv) * f64_,
            c * (m * bv) + c,
            c * f64_ + c * t_lat64, // merge output plus its resampling
        ));
    }

    let runs = cfg.audio_iters as u64;
    for row in cfg.audio_block().cost_rows("audio_block.", t_lat) {
        rows.push(row.repeated(runs));
    }

    let t_dec = (t_lat64 - 1) * cfg.enc_stride as u64 + k;
    rows.push(CostRow::new(
        "audio_dec".into(),
        c * m * k * t_lat64,
        c * m * k + m,
        m * t_dec,
    ));

    Ok(CostReport {
        seconds,
        samples,
        latent_len: t_lat,
        frames,
        rows,
    })
}

/// Total multiply-accumulates of one forward pass.
pub fn count_macs(cfg: &ModelConfig, seconds: f64) -> Result<u64> {
    Ok(cost_report(cfg, seconds)?.total_macs())
}

/// Total parameters (shared weights counted once, frozen included).
pub fn count_params(cfg: &ModelConfig) -> u64 {
    cfg.param_count()
}

#[derive(Clone, Copy, Debug)]
pub struct TimingReport {
    pub trials: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

/// Wall-clock timing of `separate()` on synthetic input (video embeddings
/// precomputed, one untimed warm-up run first). Population standard
/// deviation across trials.
pub fn time_inference<T: Scalar>(
    model: &Model<T>,
    seconds: f64,
    trials: usize,
    seed: u64,
) -> Result<TimingReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let cfg = model.config();
    let samples = (seconds * cfg.sample_rate as f64).round() as usize;
    let frames = cfg.frames_for_samples(samples).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = Tensor::from_vec(
        vec![samples],
        (0..samples)
            .map(|_| T::from_f64(rng.gen_range(-0.5..0.5)))
            .collect(),
    )?;
    let embed = Tensor::from_vec(
        vec![cfg.speakers, cfg.embed_dim, frames],
        (0..cfg.speakers * cfg.embed_dim * frames)
            .map(|_| T::from_f64(rng.gen_range(-1.0..1.0)))
            .collect(),
    )?;
    let video = if cfg.fusion_positions.is_empty() {
        None
    } else {
        Some(&embed)
    };

    model.separate(&mix, video)?; // warm-up
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        model.separate(&mix, video)?;
        times.push(start.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / trials as f64;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / trials as f64;
    Ok(TimingReport {
        trials,
        mean_seconds: mean,
        std_seconds: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::macs;

    fn micro() -> ModelConfig {
        ModelConfig {
            speakers: 2,
            audio_iters: 3,
            video_iters: 2,
            fusion_positions: vec![0, 2],
            enc_channels: 8,
            enc_kernel: 16,
            enc_stride: 8,
            audio_bottleneck: 4,
            audio_channels: 8,
            audio_stages: 3,
            video_bottleneck: 4,
            video_channels: 6,
            video_stages: 2,
            embed_dim: 64,
            frame_size: 16,
            fps: 25.0,
            sample_rate: 800,
        }
    }

    #[test]
    fn params_are_independent_of_iteration_counts() {
        let p2 = count_params(&ModelConfig::preset("avlit-2").unwrap());
        let p4 = count_params(&ModelConfig::preset("avlit-4").unwrap());
        let p8 = count_params(&ModelConfig::preset("avlit-8").unwrap());
        assert_eq!(p2, p4);
        assert_eq!(p4, p8);
    }

    #[test]
    fn macs_are_affine_in_audio_iterations() {
        let m2 = count_macs(&ModelConfig::preset("avlit-2").unwrap(), 2.0).unwrap();
        let m4 = count_macs(&ModelConfig::preset("avlit-4").unwrap(), 2.0).unwrap();
        let m8 = count_macs(&ModelConfig::preset("avlit-8").unwrap(), 2.0).unwrap();
        assert_eq!(m8 - m4, 2 * (m4 - m2));
        assert!(m2 < m4 && m4 < m8);
    }

    #[test]
    fn report_totals_equal_column_sums() {
        let report = cost_report(&micro(), 1.0).unwrap();
        let macs: u64 = report.rows.iter().map(|r| r.macs).sum();
        assert_eq!(report.total_macs(), macs);
        let csv = report.to_csv();
        assert!(csv.starts_with("layer,macs,params,act_elems\n"));
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with(&format!("total,{macs},")));
    }

    #[test]
    fn analytic_params_match_the_store() {
        let cfg = micro();
        let model = Model::<f32>::new(cfg.clone(), 0).unwrap();
        assert_eq!(count_params(&cfg), model.params().total_elements());
        // report params also agree: every layer appears exactly once
        let report = cost_report(&cfg, 1.0).unwrap();
        assert_eq!(report.total_params(), count_params(&cfg));
    }

    #[test]
    fn instrumented_counter_matches_the_analytic_plan() {
        use crate::io::avfr::FrameStream;
        let cfg = micro();
        let model = Model::<f32>::new(cfg.clone(), 5).unwrap();
        let seconds = 1.0;
        let samples = (seconds * cfg.sample_rate as f64) as usize;
        let frames = cfg.frames_for_samples(samples);
        let mix = Tensor::<f32>::from_vec(
            vec![samples],
            (0..samples).map(|i| ((i % 97) as f32 / 97.0) - 0.5).collect(),
        )
        .unwrap();
        let streams: Vec<FrameStream> = (0..cfg.speakers)
            .map(|s| {
                let px = (0..frames * 16 * 16)
                    .map(|i| ((i * 7 + s * 13) % 256) as u8)
                    .collect();
                FrameStream::new(16, 16, px).unwrap()
            })
            .collect();

        macs::start();
        let embed = model.encode_video(&streams).unwrap();
        model.separate(&mix, Some(&embed)).unwrap();
        let counted = macs::stop();
        assert_eq!(counted, count_macs(&cfg, seconds).unwrap());

        // audio-only config: video branch absent from plan and execution
        let mut audio_cfg = cfg.clone();
        audio_cfg.fusion_positions = vec![];
        let audio_model = Model::<f32>::new(audio_cfg.clone(), 5).unwrap();
        macs::start();
        audio_model.separate(&mix, None).unwrap();
        let counted = macs::stop();
        assert_eq!(counted, count_macs(&audio_cfg, seconds).unwrap());
    }

    #[test]
    fn doubling_duration_roughly_doubles_macs() {
        let cfg = micro();
        let m1 = count_macs(&cfg, 2.0).unwrap() as f64;
        let m2 = count_macs(&cfg, 4.0).unwrap() as f64;
        let ratio = m2 / m1;
        assert!((ratio - 2.0).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn timing_runs_and_reports() {
        let model = Model::<f32>::new(micro(), 3).unwrap();
        let r = time_inference(&model, 0.5, 3, 7).unwrap();
        assert_eq!(r.trials, 3);
        assert!(r.mean_seconds > 0.0);
        assert!(r.std_seconds >= 0.0);
    }
}
