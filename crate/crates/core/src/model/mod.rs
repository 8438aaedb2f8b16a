//! The separation network: configuration, parameter layout, forward pass,
//! and checkpoint format.

mod checkpoint;
mod config;
mod net;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{fusion_preset, ModelConfig, AE_CHANNELS, AE_KERNEL, AE_LEAKY_SLOPE, AE_STRIDE};
pub use net::{ForwardPass, Model};

#[cfg(test)]
pub(crate) use net::micro_config;
