//! The resolved settings behind one run: architecture, training
//! hyper-parameters, corpus-synthesis ranges, and paths, round-tripping
//! through a plain-text key-value file. Shared quantities (speakers,
//! sample rate, fps, frame size) live on the model section so the corpus
//! and the network can never disagree.

use avlit_core::datagen::MixSpec;
use avlit_core::io::kv;
use avlit_core::model::ModelConfig;
use avlit_core::objectives::TrainConfig;
use avlit_core::{Error, Result};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Synthesis: item length in seconds.
    pub duration: f64,
    /// Synthesis: corpus size.
    pub items: usize,
    /// Synthesis: relative speaker power range, dB.
    pub gain_range_db: (f64, f64),
    /// Synthesis: mixture noise SNR range, dB; `None` for clean items.
    pub noise_snr_db: Option<(f64, f64)>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mix = MixSpec::default();
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            duration: mix.duration,
            items: 100,
            gain_range_db: mix.gain_range_db,
            noise_snr_db: mix.noise_snr_db,
            data: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn to_kv_text(&self) -> String {
        let mut pairs: Vec<(&str, String)> = self.model.to_pairs();
        pairs.push(("duration", self.duration.to_string()));
        pairs.push(("items", self.items.to_string()));
        pairs.push(("gain_lo_db", self.gain_range_db.0.to_string()));
        pairs.push(("gain_hi_db", self.gain_range_db.1.to_string()));
        match self.noise_snr_db {
            Some((lo, hi)) => {
                pairs.push(("noise_snr_lo_db", lo.to_string()));
                pairs.push(("noise_snr_hi_db", hi.to_string()));
            }
            None => {
                pairs.push(("noise_snr_lo_db", "none".into()));
                pairs.push(("noise_snr_hi_db", "none".into()));
            }
        }
        let t = &self.train;
        pairs.push(("epochs", t.epochs.to_string()));
        pairs.push(("batch_size", t.batch_size.to_string()));
        pairs.push(("lr", t.lr.to_string()));
        pairs.push(("weight_decay", t.weight_decay.to_string()));
        pairs.push(("lr_decay_period", t.lr_decay_period.to_string()));
        pairs.push((
            "max_grad_norm",
            t.max_grad_norm.map_or_else(|| "none".into(), |v| v.to_string()),
        ));
        pairs.push(("val_fraction", t.val_fraction.to_string()));
        pairs.push(("seed", t.seed.to_string()));
        pairs.push(("audio_only", t.audio_only.to_string()));
        pairs.push(("ae_epochs", t.ae_epochs.to_string()));
        pairs.push(("ae_lr", t.ae_lr.to_string()));
        pairs.push(("ae_frames_per_epoch", t.ae_frames_per_epoch.to_string()));
        if let Some(p) = &self.data {
            pairs.push(("data", p.display().to_string()));
        }
        if let Some(p) = &self.out {
            pairs.push(("out", p.display().to_string()));
        }
        kv::emit(&pairs)
    }

    /// Parse a config text. Every key is optional (defaults fill in);
    /// unknown keys are rejected with their line number.
    pub fn from_kv_text(text: &str, path: &Path) -> Result<Self> {
        let mut rc = RunConfig::default();
        // each bound: unseen | explicit "none" | a value
        let mut noise: (Option<Option<f64>>, Option<Option<f64>>) = (None, None);
        let parse_bound = |e: &kv::KvEntry| -> Result<Option<f64>> {
            if e.value == "none" {
                Ok(None)
            } else {
                kv::parse_f64(e, path).map(Some)
            }
        };
        for e in kv::parse(text, path)? {
            if rc.model.apply_entry(&e, path)? {
                continue;
            }
            match e.key.as_str() {
                "duration" => rc.duration = kv::parse_f64(&e, path)?,
                "items" => rc.items = kv::parse_usize(&e, path)?,
                "gain_lo_db" => rc.gain_range_db.0 = kv::parse_f64(&e, path)?,
                "gain_hi_db" => rc.gain_range_db.1 = kv::parse_f64(&e, path)?,
                "noise_snr_lo_db" => noise.0 = Some(parse_bound(&e)?),
                "noise_snr_hi_db" => noise.1 = Some(parse_bound(&e)?),
                "epochs" => rc.train.epochs = kv::parse_usize(&e, path)?,
                "batch_size" => rc.train.batch_size = kv::parse_usize(&e, path)?,
                "lr" => rc.train.lr = kv::parse_f64(&e, path)?,
                "weight_decay" => rc.train.weight_decay = kv::parse_f64(&e, path)?,
                "lr_decay_period" => rc.train.lr_decay_period = kv::parse_usize(&e, path)?,
                "max_grad_norm" => {
                    rc.train.max_grad_norm = if e.value == "none" {
                        None
                    } else {
                        Some(kv::parse_f64(&e, path)?)
                    };
                }
                "val_fraction" => rc.train.val_fraction = kv::parse_f64(&e, path)?,
                "seed" => rc.train.seed = kv::parse_u64(&e, path)?,
                "audio_only" => rc.train.audio_only = kv::parse_bool(&e, path)?,
                "ae_epochs" => rc.train.ae_epochs = kv::parse_usize(&e, path)?,
                "ae_lr" => rc.train.ae_lr = kv::parse_f64(&e, path)?,
                "ae_frames_per_epoch" => {
                    rc.train.ae_frames_per_epoch = kv::parse_usize(&e, path)?
                }
                "data" => rc.data = Some(PathBuf::from(&e.value)),
                "out" => rc.out = Some(PathBuf::from(&e.value)),
                _ => return Err(kv::unknown_key(&e, path)),
            }
        }
        rc.noise_snr_db = match noise {
            (None, None) => rc.noise_snr_db, // keys absent: keep the default
            (Some(Some(lo)), Some(Some(hi))) => Some((lo, hi)),
            (Some(None), Some(None)) => None,
            _ => {
                return Err(Error::ConfigFile {
                    path: path.to_path_buf(),
                    line: 0,
                    detail: "noise snr bounds must both be given, as numbers or both `none`"
                        .into(),
                })
            }
        };
        Ok(rc)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_text(&text, path)
    }
}
