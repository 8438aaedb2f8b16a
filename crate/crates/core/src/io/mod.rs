//! File formats: `key = value` config text, mono WAV audio, and the raw
//! grayscale frame-stream container used for video.

pub mod avfr;
pub mod kv;
pub mod wav;
