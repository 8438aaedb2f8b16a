//! Training objectives and the training loop: scale-invariant SDR,
//! permutation-invariant assignment, AdamW, and separator/frame-encoder
//! training drivers.

pub mod metrics;
pub mod optim;
pub mod train;

pub use metrics::{
    best_permutation, ordered_loss, ordered_si_sdr, pit_loss, si_sdr, si_sdr_improvement,
    si_sdr_loss, si_sdr_matrix,
};
pub use optim::{lr_at, AdamW, GradBuffer};
pub use train::{
    metrics_csv, pretrain_video_encoder, train, MetricsRow, PretrainReport, TrainConfig,
    TrainItem, TrainReport,
};
