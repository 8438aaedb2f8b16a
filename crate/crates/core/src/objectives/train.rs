//! Separator training and frame-encoder pretraining.
//!
//! One item per graph: each training item builds a fresh tape, its
//! gradients pool into a batch buffer, and the optimizer consumes the
//! batch mean. Video embeddings are computed once up front (after the
//! optional frame-encoder pretrain) since the frame encoder stays frozen
//! while the separator learns.

use crate::error::{Error, Result};
use crate::io::avfr::FrameStream;
use crate::model::{Model, AE_CHANNELS, AE_KERNEL, AE_LEAKY_SLOPE, AE_STRIDE};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;
use crate::objectives::metrics::{
    best_permutation, ordered_loss, ordered_si_sdr, pit_loss, si_sdr, si_sdr_matrix,
};
use crate::objectives::optim::{lr_at, AdamW, GradBuffer};
use crate::params::{Init, ParamDef, ParamStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One supervised example: a mixture, its ground-truth sources, and one
/// frame stream per speaker. `frames` may be empty for audio-only
/// training (no fusion positions).
pub struct TrainItem<T: Scalar> {
    pub mixture: Tensor<T>,
    pub references: Vec<Tensor<T>>,
    pub frames: Vec<FrameStream>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Epochs between each lr /= 3.
    pub lr_decay_period: usize,
    pub max_grad_norm: Option<f64>,
    /// Fraction of items held out (taken from the end of the list).
    pub val_fraction: f64,
    pub seed: u64,
    /// Ignore video entirely: no fusion input, permutation-invariant loss.
    /// With video in play the loss is order-preserving instead — the output
    /// slots are anchored to the video streams.
    pub audio_only: bool,
    /// Frame-encoder pretraining passes; 0 keeps the seeded encoder.
    pub ae_epochs: usize,
    pub ae_lr: f64,
    pub ae_frames_per_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 4,
            lr: 1e-3,
            weight_decay: 1e-4,
            lr_decay_period: 8,
            max_grad_norm: Some(5.0),
            val_fraction: 0.2,
            seed: 0,
            audio_only: false,
            ae_epochs: 3,
            ae_lr: 2e-3,
            ae_frames_per_epoch: 256,
        }
    }
}

/// One line of the training log (and of the metrics CSV).
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub si_sdri: f64,
    pub lr: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("epoch,split,loss,si_sdri,lr\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.4},{:.6e}\n",
            r.epoch, r.split, r.loss, r.si_sdri, r.lr
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub rows: Vec<MetricsRow>,
    /// Epoch whose weights the model carries after training (best
    /// validation SI-SDRi, or the last epoch without a validation split).
    pub best_epoch: usize,
    pub best_val_si_sdri: Option<f64>,
    pub pretrain: Option<PretrainReport>,
}

#[derive(Clone, Copy, Debug)]
pub struct PretrainReport {
    pub epochs: usize,
    pub first_mse: f64,
    pub last_mse: f64,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(epoch as u64 + 1)))
}

/// Train the separator in place. Items split train/val deterministically
/// (val = tail). Returns per-epoch metrics; the model ends up with the
/// best-validation weights. Non-finite losses or gradients abort with
/// `Error::Diverged`.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    items: &[TrainItem<T>],
    cfg: &TrainConfig,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainReport> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("no training items".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "epochs and batch size must be positive".into(),
        ));
    }
    let m = model.config().speakers;
    for (i, item) in items.iter().enumerate() {
        if item.references.len() != m {
            return Err(Error::InvalidArgument(format!(
                "item {i} has {} references, model separates {m}",
                item.references.len()
            )));
        }
    }

    let n = items.len();
    let n_val = if cfg.val_fraction > 0.0 && n >= 2 {
        ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let n_train = n - n_val;
    let use_video = !model.config().fusion_positions.is_empty() && !cfg.audio_only;

    let pretrain = if use_video && cfg.ae_epochs > 0 {
        let streams: Vec<&FrameStream> = items[..n_train]
            .iter()
            .flat_map(|it| it.frames.iter())
            .collect();
        Some(pretrain_video_encoder(
            model,
            &streams,
            cfg.ae_epochs,
            cfg.ae_lr,
            cfg.ae_frames_per_epoch,
            cfg.seed,
        )?)
    } else {
        None
    };

    // embeddings and mixture baselines are fixed for the whole run
    let mut embeds: Vec<Option<Tensor<T>>> = Vec::with_capacity(n);
    let mut baselines = Vec::with_capacity(n);
    for item in items {
        embeds.push(if use_video {
            Some(model.encode_video(&item.frames)?)
        } else {
            None
        });
        let mut base = 0.0;
        for r in &item.references {
            base += si_sdr(item.mixture.as_slice(), r.as_slice())?;
        }
        baselines.push(base / m as f64);
    }

    let mut opt = AdamW::new(model.params(), cfg.lr, cfg.weight_decay);
    let mut buffer = GradBuffer::new(model.params());
    let mut rows = Vec::new();
    let mut best: Option<(usize, f64, Vec<Tensor<T>>)> = None;

    for epoch in 0..cfg.epochs {
        opt.lr = lr_at(cfg.lr, epoch, cfg.lr_decay_period);
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));

        let mut train_loss = 0.0;
        let mut train_sdri = 0.0;
        let mut step = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            buffer.zero();
            for &idx in batch {
                let item = &items[idx];
                let mut g = Graph::new();
                let pass = model.forward_on(&mut g, &item.mixture, embeds[idx].as_ref())?;
                let loss = build_loss(&mut g, &pass.per_speaker, &item.references, use_video)?;
                let loss_val = g.value(loss).item().to_f64v();
                if !loss_val.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        detail: format!("loss {loss_val} on item {idx} (lr {:.3e})", opt.lr),
                    });
                }
                g.backward(loss)?;
                buffer
                    .accumulate(model.params(), &pass.params, &g)
                    .map_err(|e| Error::Diverged {
                        epoch,
                        step,
                        detail: format!("item {idx}: {e} (lr {:.3e})", opt.lr),
                    })?;
                train_loss += loss_val;
                train_sdri += assignment_si_sdr(&g, &pass.per_speaker, &item.references, use_video)?
                    - baselines[idx];
            }
            if let Some(max) = cfg.max_grad_norm {
                buffer.clip_mean_norm(max);
            }
            opt.step(model.params_mut(), &buffer)?;
            step += 1;
        }
        let row = MetricsRow {
            epoch,
            split: "train",
            loss: train_loss / n_train as f64,
            si_sdri: train_sdri / n_train as f64,
            lr: opt.lr,
        };
        on_row(&row);
        rows.push(row);

        if n_val > 0 {
            let mut val_loss = 0.0;
            let mut val_sdri = 0.0;
            for idx in n_train..n {
                let item = &items[idx];
                let mut g = Graph::new();
                let pass = model.forward_on(&mut g, &item.mixture, embeds[idx].as_ref())?;
                let loss = build_loss(&mut g, &pass.per_speaker, &item.references, use_video)?;
                val_loss += g.value(loss).item().to_f64v();
                val_sdri += assignment_si_sdr(&g, &pass.per_speaker, &item.references, use_video)?
                    - baselines[idx];
            }
            let row = MetricsRow {
                epoch,
                split: "val",
                loss: val_loss / n_val as f64,
                si_sdri: val_sdri / n_val as f64,
                lr: opt.lr,
            };
            let improved = best.as_ref().map_or(true, |(_, b, _)| row.si_sdri > *b);
            if improved {
                let snapshot = model.params().iter().map(|(_, t)| t.clone()).collect();
                best = Some((epoch, row.si_sdri, snapshot));
            }
            on_row(&row);
            rows.push(row);
        }
    }

    let (best_epoch, best_val) = match best {
        Some((epoch, score, snapshot)) => {
            let names: Vec<String> = model
                .params()
                .defs()
                .iter()
                .map(|d| d.name.clone())
                .collect();
            for (name, tensor) in names.into_iter().zip(snapshot) {
                *model.params_mut().get_mut(&name) = tensor;
            }
            (epoch, Some(score))
        }
        None => (cfg.epochs - 1, None),
    };

    Ok(TrainReport {
        rows,
        best_epoch,
        best_val_si_sdri: best_val,
        pretrain,
    })
}

/// Training loss for one item. With video present the pairing is fixed by
/// the order of the visual inputs; without it the permutation is searched.
fn build_loss<T: Scalar>(
    g: &mut Graph<T>,
    estimates: &[Var],
    references: &[Tensor<T>],
    ordered: bool,
) -> Result<Var> {
    if ordered {
        ordered_loss(g, estimates, references)
    } else {
        Ok(pit_loss(g, estimates, references)?.0)
    }
}

/// Mean SI-SDR between current estimate values and references, under the
/// same assignment rule as the loss (fixed order with video, best
/// permutation without).
fn assignment_si_sdr<T: Scalar>(
    g: &Graph<T>,
    estimates: &[Var],
    references: &[Tensor<T>],
    ordered: bool,
) -> Result<f64> {
    let est: Vec<Tensor<T>> = estimates.iter().map(|&v| g.value(v).clone()).collect();
    let refs: Vec<Tensor<T>> = references
        .iter()
        .zip(&est)
        .map(|(r, e)| r.reshape(e.shape().to_vec()))
        .collect::<Result<_>>()?;
    if ordered {
        return ordered_si_sdr(&est, &refs);
    }
    let matrix = si_sdr_matrix(&est, &refs)?;
    Ok(best_permutation(&matrix)?.1)
}

/// Pretrain the frame encoder as one half of a reconstruction autoencoder
/// (bias-free mirrored decoder, mean-squared pixel loss), then freeze the
/// result back into the model. Frames are sampled without replacement
/// each pass.
pub fn pretrain_video_encoder<T: Scalar>(
    model: &mut Model<T>,
    streams: &[&FrameStream],
    epochs: usize,
    lr: f64,
    frames_per_epoch: usize,
    seed: u64,
) -> Result<PretrainReport> {
    if epochs == 0 {
        return Err(Error::InvalidArgument("pretraining needs epochs >= 1".into()));
    }
    let mut index: Vec<(usize, usize)> = Vec::new();
    for (si, s) in streams.iter().enumerate() {
        for fi in 0..s.count() {
            index.push((si, fi));
        }
    }
    if index.is_empty() {
        return Err(Error::InvalidArgument("pretraining needs frames".into()));
    }

    let mut defs = Vec::new();
    for i in 0..4 {
        defs.push(ParamDef::new(
            format!("enc{i}.w"),
            vec![AE_CHANNELS[i + 1], AE_CHANNELS[i], AE_KERNEL, AE_KERNEL],
            Init::UniformFanIn(AE_CHANNELS[i] * AE_KERNEL * AE_KERNEL),
        ));
    }
    for i in 0..4 {
        // conv_transpose weights are [Cin, Cout, K, K]; mirror 64 -> 1
        defs.push(ParamDef::new(
            format!("dec{i}.w"),
            vec![AE_CHANNELS[4 - i], AE_CHANNELS[3 - i], AE_KERNEL, AE_KERNEL],
            Init::UniformFanIn(AE_CHANNELS[4 - i] * AE_KERNEL * AE_KERNEL),
        ));
    }
    let mut store = ParamStore::<T>::init(defs, seed ^ 0xAE)?;
    for i in 0..4 {
        *store.get_mut(&format!("enc{i}.w")) =
            model.params().get(&format!("video_ae.conv{i}.w")).clone();
    }

    let mut opt = AdamW::new(&store, lr, 0.0);
    let mut buffer = GradBuffer::new(&store);
    let slope = T::from_f64(AE_LEAKY_SLOPE);
    let batch = 8usize;
    let per_epoch = frames_per_epoch.max(1).min(index.len());
    let (mut first_mse, mut last_mse) = (0.0, 0.0);

    for epoch in 0..epochs {
        index.shuffle(&mut epoch_rng(seed ^ 0xAE, epoch));
        let mut epoch_mse = 0.0;
        for chunk in index[..per_epoch].chunks(batch) {
            buffer.zero();
            for &(si, fi) in chunk {
                let mut g = Graph::new();
                let vars = store.load_into(&mut g);
                let frame: Tensor<T> = streams[si].frame_tensor(fi);
                let numel = frame.numel();
                let x = g.constant(frame);
                let mut h = x;
                for i in 0..4 {
                    h = g.conv2d(h, vars.var(&format!("enc{i}.w")), None, AE_STRIDE)?;
                    h = g.leaky_relu(h, slope);
                }
                for i in 0..4 {
                    h = g.conv_transpose2d(h, vars.var(&format!("dec{i}.w")), None, AE_STRIDE)?;
                    if i < 3 {
                        h = g.leaky_relu(h, slope);
                    }
                }
                let diff = g.sub(h, x)?;
                let sq = g.mul(diff, diff)?;
                let sum = g.sum(sq);
                let loss = g.scale(sum, T::from_f64(1.0 / numel as f64));
                let loss_val = g.value(loss).item().to_f64v();
                if !loss_val.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        step: 0,
                        detail: format!("frame-encoder loss {loss_val}"),
                    });
                }
                g.backward(loss)?;
                buffer.accumulate(&store, &vars, &g)?;
                epoch_mse += loss_val;
            }
            opt.step(&mut store, &buffer)?;
        }
        epoch_mse /= per_epoch as f64;
        if epoch == 0 {
            first_mse = epoch_mse;
        }
        last_mse = epoch_mse;
    }

    for i in 0..4 {
        *model.params_mut().get_mut(&format!("video_ae.conv{i}.w")) =
            store.get(&format!("enc{i}.w")).clone();
    }
    Ok(PretrainReport {
        epochs,
        first_mse,
        last_mse,
    })
}
