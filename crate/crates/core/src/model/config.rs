use crate::afrcnn::BlockConfig;
use crate::error::{Error, Result};
use crate::io::kv::{self, KvEntry};
use crate::params::{Init, ParamDef};
use std::path::Path;

/// Frozen video autoencoder: channel progression of the 4 conv layers.
pub const AE_CHANNELS: [usize; 5] = [1, 4, 8, 16, 64];
pub const AE_KERNEL: usize = 2;
pub const AE_STRIDE: usize = 2;
pub const AE_LEAKY_SLOPE: f64 = 0.3;

/// Everything that determines the network's architecture. Iteration counts
/// and fusion positions change only how often the shared blocks run, never
/// the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of speakers to separate (M).
    pub speakers: usize,
    /// Applications of the shared audio block (N_A).
    pub audio_iters: usize,
    /// Applications of the shared video block (N_V).
    pub video_iters: usize,
    /// Audio iterations that receive the video features (sorted, each
    /// in `[0, audio_iters)`; empty = audio-only iteration).
    pub fusion_positions: Vec<usize>,
    /// Audio encoder: output channels (C), kernel, hop.
    pub enc_channels: usize,
    pub enc_kernel: usize,
    pub enc_stride: usize,
    /// Audio block widths.
    pub audio_bottleneck: usize,
    pub audio_channels: usize,
    pub audio_stages: usize,
    /// Video branch widths; the bottleneck is also the video block's
    /// boundary width.
    pub video_bottleneck: usize,
    pub video_channels: usize,
    pub video_stages: usize,
    /// Flattened output size of the frozen frame encoder (C').
    pub embed_dim: usize,
    /// Input frames are `frame_size x frame_size` grayscale.
    pub frame_size: usize,
    pub fps: f64,
    pub sample_rate: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_iters(4, 2)
    }
}

impl ModelConfig {
    /// Reference architecture with the given iteration counts and fusion
    /// at the first iteration.
    pub fn with_iters(audio_iters: usize, video_iters: usize) -> Self {
        ModelConfig {
            speakers: 2,
            audio_iters,
            video_iters,
            fusion_positions: vec![0],
            enc_channels: 512,
            enc_kernel: 40,
            enc_stride: 20,
            audio_bottleneck: 128,
            audio_channels: 512,
            audio_stages: 5,
            video_bottleneck: 128,
            video_channels: 128,
            video_stages: 5,
            embed_dim: 1024,
            frame_size: 64,
            fps: 25.0,
            sample_rate: 16000,
        }
    }

    /// Named size presets: `avlit-2`, `avlit-4`, `avlit-8`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "avlit-2" => Ok(Self::with_iters(2, 1)),
            "avlit-4" => Ok(Self::with_iters(4, 2)),
            "avlit-8" => Ok(Self::with_iters(8, 4)),
            _ => Err(Error::Config(format!(
                "unknown preset {name:?} (expected avlit-2, avlit-4, or avlit-8)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers == 0 {
            return Err(Error::Config("speakers must be at least 1".into()));
        }
        if self.audio_iters == 0 {
            return Err(Error::Config("audio_iters must be at least 1".into()));
        }
        let p = &self.fusion_positions;
        if !p.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "fusion_positions must be strictly increasing, got {p:?}"
            )));
        }
        if let Some(&last) = p.last() {
            if last >= self.audio_iters {
                return Err(Error::Config(format!(
                    "fusion position {last} out of range for {} audio iterations",
                    self.audio_iters
                )));
            }
        }
        if self.enc_kernel == 0 || self.enc_stride == 0 || self.enc_stride > self.enc_kernel {
            return Err(Error::Config(format!(
                "encoder kernel {} / stride {} invalid (need 1 <= stride <= kernel)",
                self.enc_kernel, self.enc_stride
            )));
        }
        if self.enc_channels == 0 || self.embed_dim == 0 {
            return Err(Error::Config("zero-width layer".into()));
        }
        if self.frame_size < 16 || self.frame_size % 16 != 0 {
            return Err(Error::Config(format!(
                "frame_size {} must be a positive multiple of 16 (four halvings)",
                self.frame_size
            )));
        }
        let spatial = self.frame_size / 16;
        let expected_embed = AE_CHANNELS[4] * spatial * spatial;
        if self.embed_dim != expected_embed {
            return Err(Error::Config(format!(
                "embed_dim {} inconsistent with frame_size {}: the frame encoder produces {}",
                self.embed_dim, self.frame_size, expected_embed
            )));
        }
        if !(self.fps > 0.0) || self.sample_rate == 0 {
            return Err(Error::Config("fps and sample_rate must be positive".into()));
        }
        self.audio_block().validate()?;
        self.video_block().validate()?;
        Ok(())
    }

    pub fn audio_block(&self) -> BlockConfig {
        BlockConfig {
            io: self.enc_channels,
            bottleneck: self.audio_bottleneck,
            channels: self.audio_channels,
            stages: self.audio_stages,
        }
    }

    pub fn video_block(&self) -> BlockConfig {
        BlockConfig {
            io: self.video_bottleneck,
            bottleneck: self.video_bottleneck,
            channels: self.video_channels,
            stages: self.video_stages,
        }
    }

    /// Latent length produced by the audio encoder for `t` input samples.
    pub fn latent_len(&self, t: usize) -> Result<usize> {
        if t < self.enc_kernel {
            return Err(Error::InvalidArgument(format!(
                "input of {t} samples is shorter than the encoder kernel ({})",
                self.enc_kernel
            )));
        }
        Ok((t - self.enc_kernel) / self.enc_stride + 1)
    }

    /// Expected frame count for `t` samples at the configured rates.
    pub fn frames_for_samples(&self, t: usize) -> usize {
        (t as f64 / self.sample_rate as f64 * self.fps).round() as usize
    }

    /// Parameter layout. Independent of `audio_iters`, `video_iters`, and
    /// `fusion_positions` by construction: iterating shares the same
    /// tensors. Frame-encoder weights are frozen (bias-free layers).
    pub fn param_defs(&self) -> Vec<ParamDef> {
        let mut defs = Vec::new();
        let (c, k) = (self.enc_channels, self.enc_kernel);
        defs.push(ParamDef::new(
            "audio_enc.w",
            vec![c, 1, k],
            Init::UniformFanIn(k),
        ));
        defs.push(ParamDef::new("audio_enc.b", vec![c], Init::UniformFanIn(k)));
        defs.extend(self.audio_block().param_defs("audio_block."));
        for i in 0..4 {
            defs.push(
                ParamDef::new(
                    format!("video_ae.conv{i}.w"),
                    vec![AE_CHANNELS[i + 1], AE_CHANNELS[i], AE_KERNEL, AE_KERNEL],
                    Init::UniformFanIn(AE_CHANNELS[i] * AE_KERNEL * AE_KERNEL),
                )
                .frozen(),
            );
        }
        let bv = self.video_bottleneck;
        defs.push(ParamDef::new(
            "video_in.w",
            vec![bv, self.embed_dim, 1],
            Init::UniformFanIn(self.embed_dim),
        ));
        defs.push(ParamDef::new(
            "video_in.b",
            vec![bv],
            Init::UniformFanIn(self.embed_dim),
        ));
        defs.extend(self.video_block().param_defs("video_block."));
        defs.push(ParamDef::new(
            "video_merge.w",
            vec![c, self.speakers * bv, 1],
            Init::UniformFanIn(self.speakers * bv),
        ));
        defs.push(ParamDef::new(
            "video_merge.b",
            vec![c],
            Init::UniformFanIn(self.speakers * bv),
        ));
        defs.push(ParamDef::new(
            "audio_dec.w",
            vec![c, self.speakers, k],
            Init::UniformFanIn(c * k),
        ));
        defs.push(ParamDef::new(
            "audio_dec.b",
            vec![self.speakers],
            Init::UniformFanIn(c * k),
        ));
        defs
    }

    /// Closed-form total parameter count; equals the sum over `param_defs`.
    pub fn param_count(&self) -> u64 {
        let (c, k, m) = (
            self.enc_channels as u64,
            self.enc_kernel as u64,
            self.speakers as u64,
        );
        let bv = self.video_bottleneck as u64;
        let cp = self.embed_dim as u64;
        let enc = c * k + c;
        let ae: u64 = (0..4)
            .map(|i| (AE_CHANNELS[i + 1] * AE_CHANNELS[i] * AE_KERNEL * AE_KERNEL) as u64)
            .sum();
        let video_in = bv * cp + bv;
        let video_merge = c * (m * bv) + c;
        let dec = c * m * k + m;
        enc + self.audio_block().param_count()
            + ae
            + video_in
            + self.video_block().param_count()
            + video_merge
            + dec
    }

    // ---- kv serialization ----

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("speakers", self.speakers.to_string()),
            ("audio_iters", self.audio_iters.to_string()),
            ("video_iters", self.video_iters.to_string()),
            (
                "fusion_positions",
                kv::emit_index_list(&self.fusion_positions),
            ),
            ("enc_channels", self.enc_channels.to_string()),
            ("enc_kernel", self.enc_kernel.to_string()),
            ("enc_stride", self.enc_stride.to_string()),
            ("audio_bottleneck", self.audio_bottleneck.to_string()),
            ("audio_channels", self.audio_channels.to_string()),
            ("audio_stages", self.audio_stages.to_string()),
            ("video_bottleneck", self.video_bottleneck.to_string()),
            ("video_channels", self.video_channels.to_string()),
            ("video_stages", self.video_stages.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("frame_size", self.frame_size.to_string()),
            ("fps", self.fps.to_string()),
            ("sample_rate", self.sample_rate.to_string()),
        ]
    }

    pub fn to_kv_text(&self) -> String {
        kv::emit(&self.to_pairs())
    }

    /// Apply one parsed entry. Returns false when the key is not a model
    /// key, letting callers layer their own keys on top.
    pub fn apply_entry(&mut self, e: &KvEntry, path: &Path) -> Result<bool> {
        match e.key.as_str() {
            "speakers" => self.speakers = kv::parse_usize(e, path)?,
            "audio_iters" => self.audio_iters = kv::parse_usize(e, path)?,
            "video_iters" => self.video_iters = kv::parse_usize(e, path)?,
            "fusion_positions" => self.fusion_positions = kv::parse_index_list(e, path)?,
            "enc_channels" => self.enc_channels = kv::parse_usize(e, path)?,
            "enc_kernel" => self.enc_kernel = kv::parse_usize(e, path)?,
            "enc_stride" => self.enc_stride = kv::parse_usize(e, path)?,
            "audio_bottleneck" => self.audio_bottleneck = kv::parse_usize(e, path)?,
            "audio_channels" => self.audio_channels = kv::parse_usize(e, path)?,
            "audio_stages" => self.audio_stages = kv::parse_usize(e, path)?,
            "video_bottleneck" => self.video_bottleneck = kv::parse_usize(e, path)?,
            "video_channels" => self.video_channels = kv::parse_usize(e, path)?,
            "video_stages" => self.video_stages = kv::parse_usize(e, path)?,
            "embed_dim" => self.embed_dim = kv::parse_usize(e, path)?,
            "frame_size" => self.frame_size = kv::parse_usize(e, path)?,
            "fps" => self.fps = kv::parse_f64(e, path)?,
            "sample_rate" => self.sample_rate = kv::parse_u32(e, path)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parse a complete config text (all keys optional, defaults filled in,
    /// unknown keys rejected with their line number).
    pub fn from_kv_text(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for e in kv::parse(text, path)? {
            if !cfg.apply_entry(&e, path)? {
                return Err(kv::unknown_key(&e, path));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Named fusion-position schedules over `audio_iters` iterations.
pub fn fusion_preset(name: &str, audio_iters: usize) -> Result<Vec<usize>> {
    match name {
        "early" => Ok(vec![0]),
        "middle" => Ok(vec![audio_iters / 2]),
        "late" => Ok(vec![audio_iters.saturating_sub(1)]),
        "all" => Ok((0..audio_iters).collect()),
        _ => Err(Error::Config(format!(
            "unknown fusion preset {name:?} (expected early, middle, late, or all)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn presets_set_iteration_counts() {
        for (name, na, nv) in [("avlit-2", 2, 1), ("avlit-4", 4, 2), ("avlit-8", 8, 4)] {
            let cfg = ModelConfig::preset(name).unwrap();
            assert_eq!(cfg.audio_iters, na);
            assert_eq!(cfg.video_iters, nv);
            assert_eq!(cfg.fusion_positions, vec![0]);
            cfg.validate().unwrap();
        }
        assert!(ModelConfig::preset("avlit-3").is_err());
    }

    #[test]
    fn param_layout_is_independent_of_iteration_counts() {
        let a = ModelConfig::preset("avlit-2").unwrap();
        let b = ModelConfig::preset("avlit-8").unwrap();
        let da = a.param_defs();
        let db = b.param_defs();
        assert_eq!(da.len(), db.len());
        for (x, y) in da.iter().zip(&db) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.shape, y.shape);
        }
    }

    #[test]
    fn closed_form_count_matches_defs() {
        for cfg in [
            ModelConfig::default(),
            ModelConfig {
                speakers: 3,
                enc_channels: 96,
                audio_bottleneck: 24,
                audio_channels: 48,
                audio_stages: 3,
                video_bottleneck: 16,
                video_channels: 24,
                video_stages: 2,
                ..ModelConfig::default()
            },
        ] {
            let by_defs: u64 = cfg.param_defs().iter().map(|d| d.numel() as u64).sum();
            assert_eq!(cfg.param_count(), by_defs);
        }
    }

    #[test]
    fn frame_encoder_is_bias_free_and_frozen() {
        let cfg = ModelConfig::default();
        let ae: Vec<_> = cfg
            .param_defs()
            .into_iter()
            .filter(|d| d.name.starts_with("video_ae."))
            .collect();
        assert_eq!(ae.len(), 4);
        assert!(ae.iter().all(|d| !d.trainable));
        let total: u64 = ae.iter().map(|d| d.numel() as u64).sum();
        assert_eq!(total, 4752);
    }

    #[test]
    fn kv_round_trip_reproduces_config() {
        let mut cfg = ModelConfig::preset("avlit-8").unwrap();
        cfg.fusion_positions = vec![0, 3, 7];
        cfg.speakers = 3;
        let text = cfg.to_kv_text();
        let p = PathBuf::from("<test>");
        let back = ModelConfig::from_kv_text(&text, &p).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_kv_text(), text);

        // empty fusion list survives the trip
        let mut cfg = ModelConfig::default();
        cfg.fusion_positions = vec![];
        let back = ModelConfig::from_kv_text(&cfg.to_kv_text(), &p).unwrap();
        assert_eq!(back.fusion_positions, Vec::<usize>::new());
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let text = "speakers = 2\nbanana = 7\n";
        let err = ModelConfig::from_kv_text(text, &PathBuf::from("m.conf")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("banana"), "{msg}");
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = ModelConfig::default();
        cfg.fusion_positions = vec![4];
        assert!(cfg.validate().is_err()); // out of range for 4 iterations

        let mut cfg = ModelConfig::default();
        cfg.fusion_positions = vec![1, 1];
        assert!(cfg.validate().is_err()); // not strictly increasing

        let mut cfg = ModelConfig::default();
        cfg.embed_dim = 512;
        assert!(cfg.validate().is_err()); // inconsistent with frame_size

        let mut cfg = ModelConfig::default();
        cfg.frame_size = 60;
        assert!(cfg.validate().is_err()); // not a multiple of 16

        let mut cfg = ModelConfig::default();
        cfg.enc_stride = 50;
        assert!(cfg.validate().is_err()); // stride > kernel
    }

    #[test]
    fn fusion_presets() {
        assert_eq!(fusion_preset("early", 8).unwrap(), vec![0]);
        assert_eq!(fusion_preset("middle", 8).unwrap(), vec![4]);
        assert_eq!(fusion_preset("late", 8).unwrap(), vec![7]);
        assert_eq!(fusion_preset("all", 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(fusion_preset("sometimes", 4).is_err());
    }
}
