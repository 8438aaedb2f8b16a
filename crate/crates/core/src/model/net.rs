use crate::afrcnn::{block_forward, BlockVars};
use crate::error::{Error, Result};
use crate::io::avfr::FrameStream;
use crate::model::config::{ModelConfig, AE_LEAKY_SLOPE, AE_STRIDE};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::kernels;
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;
use crate::params::{ParamStore, ParamVars};

/// The separation network: weights plus the architecture that wires them.
pub struct Model<T: Scalar> {
    cfg: ModelConfig,
    store: ParamStore<T>,
}

impl<T: Scalar> std::fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("speakers", &self.cfg.speakers)
            .field("audio_iters", &self.cfg.audio_iters)
            .field("video_iters", &self.cfg.video_iters)
            .field("params", &self.store.total_elements())
            .finish()
    }
}

/// Handles into one forward build.
pub struct ForwardPass {
    /// `[M, T]`: all speaker estimates.
    pub estimates: Var,
    /// Per-speaker `[1, T]` slices of `estimates`.
    pub per_speaker: Vec<Var>,
    /// Every parameter leaf by name (for optimizers and tests).
    pub params: ParamVars,
}

impl<T: Scalar> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::init(cfg.param_defs(), seed)?;
        Ok(Model { cfg, store })
    }

    /// Wrap an existing parameter store (checkpoint load); the store must
    /// have been built from this config's layout.
    pub fn from_parts(cfg: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let defs = cfg.param_defs();
        if defs.len() != store.defs().len() {
            return Err(Error::Checkpoint(format!(
                "layout mismatch: config declares {} tensors, store has {}",
                defs.len(),
                store.defs().len()
            )));
        }
        for (want, got) in defs.iter().zip(store.defs()) {
            if want.name != got.name || want.shape != got.shape {
                return Err(Error::Checkpoint(format!(
                    "layout mismatch at {}: expected {:?}, got {} {:?}",
                    want.name, want.shape, got.name, got.shape
                )));
            }
        }
        Ok(Model { cfg, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
        }
    }

    // ---- frozen frame encoder (value-level; never trained here) ----

    /// Encode one `[1, H, W]` frame to its flattened embedding `[C']`.
    pub fn encode_frame(&self, frame: &Tensor<T>) -> Result<Vec<T>> {
        let shape = frame.shape();
        if frame.rank() != 3
            || shape[0] != 1
            || shape[1] != self.cfg.frame_size
            || shape[2] != self.cfg.frame_size
        {
            return Err(Error::ShapeMismatch {
                op: "encode_frame",
                expected: vec![1, self.cfg.frame_size, self.cfg.frame_size],
                got: shape.to_vec(),
            });
        }
        let slope = T::from_f64(AE_LEAKY_SLOPE);
        let mut h = frame.clone();
        for i in 0..4 {
            let w = self.store.get(&format!("video_ae.conv{i}.w"));
            h = kernels::conv2d(&h, w, None, AE_STRIDE)?;
            h = h.map(|v| if v > T::zero() { v } else { v * slope });
        }
        debug_assert_eq!(h.numel(), self.cfg.embed_dim);
        Ok(h.into_vec())
    }

    /// Encode all speakers' frames to a `[M, C', F]` embedding stack.
    pub fn encode_video(&self, streams: &[FrameStream]) -> Result<Tensor<T>> {
        let m = self.cfg.speakers;
        if streams.len() != m {
            return Err(Error::InvalidArgument(format!(
                "expected {m} video streams, got {}",
                streams.len()
            )));
        }
        let f = streams[0].count();
        for s in streams {
            if s.count() != f {
                return Err(Error::InvalidArgument(format!(
                    "video streams disagree on frame count: {f} vs {}",
                    s.count()
                )));
            }
        }
        let cp = self.cfg.embed_dim;
        let mut out = Tensor::zeros(vec![m, cp, f]);
        for (mi, s) in streams.iter().enumerate() {
            for fi in 0..f {
                let emb = self.encode_frame(&s.frame_tensor(fi))?;
                let base = mi * cp * f;
                for (ci, &v) in emb.iter().enumerate() {
                    out.as_mut_slice()[base + ci * f + fi] = v;
                }
            }
        }
        Ok(out)
    }

    // ---- separator forward ----

    /// Build the separator on a graph. `mixture` is a `[T]` waveform;
    /// `video` an optional `[M, C', F]` embedding stack. Returns handles to
    /// the `[M, T]` estimates and to every parameter leaf.
    ///
    /// The audio branch runs `audio_iters` applications of one shared
    /// block over refinements R: R(0) = 0, R(i+1) = block(R(i) + f_A + f'_V
    /// at fusion positions). The final R gates the encoder output as a
    /// ReLU mask, and one transposed conv maps the masked latent to all
    /// speaker waveforms at once.
    pub fn forward_on(
        &self,
        g: &mut Graph<T>,
        mixture: &Tensor<T>,
        video: Option<&Tensor<T>>,
    ) -> Result<ForwardPass> {
        let cfg = &self.cfg;
        if mixture.rank() != 1 {
            return Err(Error::ShapeMismatch {
                op: "forward mixture",
                expected: vec![0],
                got: mixture.shape().to_vec(),
            });
        }
        let t = mixture.numel();
        let t_lat = cfg.latent_len(t)?;
        let params = self.store.load_into(g);

        // encode audio -> [C, T']
        let mix2d = g.constant(mixture.reshape(vec![1, t])?);
        let f_a = g.conv1d(
            mix2d,
            params.var("audio_enc.w"),
            Some(params.var("audio_enc.b")),
            cfg.enc_stride,
            0,
            1,
        )?;

        // video branch -> f'_V [C, T'] (skipped entirely when unused)
        let f_v = match video {
            Some(embed) if !cfg.fusion_positions.is_empty() => {
                Some(self.video_features(g, &params, embed, t, t_lat)?)
            }
            _ => None,
        };

        // iterative refinement with the shared audio block
        let audio_cfg = cfg.audio_block();
        let audio_vars = BlockVars::resolve(&params, "audio_block.", &audio_cfg);
        let mut r: Option<Var> = None;
        for i in 0..cfg.audio_iters {
            let mut acc = match r {
                Some(r) => g.add(r, f_a)?,
                None => f_a, // R(0) = 0
            };
            if let Some(fv) = f_v {
                if cfg.fusion_positions.binary_search(&i).is_ok() {
                    acc = g.add(acc, fv)?;
                }
            }
            r = Some(block_forward(g, acc, &audio_vars, &audio_cfg)?);
        }
        let mask = g.relu(r.expect("at least one audio iteration"));

        // gate and decode all speakers in one transposed conv
        let masked = g.mul(f_a, mask)?;
        let decoded = g.conv_transpose1d(
            masked,
            params.var("audio_dec.w"),
            Some(params.var("audio_dec.b")),
            cfg.enc_stride,
            0,
        )?;
        let estimates = g.fit_time(decoded, t)?;

        let per_speaker = (0..cfg.speakers)
            .map(|mi| g.slice_channels(estimates, mi, 1))
            .collect::<Result<Vec<_>>>()?;

        Ok(ForwardPass {
            estimates,
            per_speaker,
            params,
        })
    }

    /// Video branch: per-speaker shared adapter and shared block, then a
    /// merge conv and nearest resampling to the audio latent rate.
    fn video_features(
        &self,
        g: &mut Graph<T>,
        params: &ParamVars,
        embed: &Tensor<T>,
        t: usize,
        t_lat: usize,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let (m, cp) = (cfg.speakers, cfg.embed_dim);
        if embed.rank() != 3 || embed.shape()[0] != m || embed.shape()[1] != cp {
            return Err(Error::ShapeMismatch {
                op: "video embedding",
                expected: vec![m, cp, 0],
                got: embed.shape().to_vec(),
            });
        }
        let frames = embed.shape()[2];
        let expected = cfg.frames_for_samples(t);
        if frames.abs_diff(expected) > 1 {
            return Err(Error::InvalidArgument(format!(
                "video has {frames} frames but {t} samples at {} Hz / {} fps imply {expected}",
                cfg.sample_rate, cfg.fps
            )));
        }

        let video_cfg = cfg.video_block();
        let video_vars = BlockVars::resolve(params, "video_block.", &video_cfg);
        let stacked = g.constant(embed.reshape(vec![m * cp, frames])?);
        let mut speaker_feats = Vec::with_capacity(m);
        for mi in 0..m {
            let one = g.slice_channels(stacked, mi * cp, cp)?;
            let mut h = g.conv1d(
                one,
                params.var("video_in.w"),
                Some(params.var("video_in.b")),
                1,
                0,
                1,
            )?;
            for _ in 0..cfg.video_iters {
                h = block_forward(g, h, &video_vars, &video_cfg)?;
            }
            speaker_feats.push(h);
        }
        let cat = if m == 1 {
            speaker_feats[0]
        } else {
            g.concat_channels(&speaker_feats)?
        };
        let merged = g.conv1d(
            cat,
            params.var("video_merge.w"),
            Some(params.var("video_merge.b")),
            1,
            0,
            1,
        )?;
        if frames == t_lat {
            Ok(merged)
        } else {
            g.nearest_interp1d(merged, t_lat)
        }
    }

    /// Run inference on a mixture, returning one `[T]` waveform per
    /// speaker.
    pub fn separate(
        &self,
        mixture: &Tensor<T>,
        video: Option<&Tensor<T>>,
    ) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let pass = self.forward_on(&mut g, mixture, video)?;
        let est = g.value(pass.estimates);
        let t = est.shape()[1];
        (0..self.cfg.speakers)
            .map(|mi| Tensor::from_vec(vec![t], est.row(mi).to_vec()))
            .collect()
    }
}


#[cfg(test)]
pub use tests::micro_config;
