//! Audio-visual speech separation with an iterative, weight-shared
//! separator network, plus everything needed to exercise it end to end:
//! a small reverse-mode autodiff engine, synthetic corpus generation,
//! training utilities, and an analytical cost profiler.
//!
//! All numeric code is generic over the scalar type (`f32` or `f64`).
//! `f32` is the runtime type; `f64` exists so gradients can be verified
//! against finite differences at tight tolerances.

pub mod afrcnn;
pub mod datagen;
pub mod error;
pub mod io;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod params;
pub mod profiler;

pub use error::{Error, Result};
pub use numerics::graph::{Graph, Var};
pub use numerics::scalar::Scalar;
pub use numerics::tensor::Tensor;

/// Runtime tensor type.
pub type Tensor32 = Tensor<f32>;
/// Verification tensor type (finite-difference gradient checks).
pub type Tensor64 = Tensor<f64>;
/// Runtime model type.
pub type Model32 = model::Model<f32>;
/// Verification model type.
pub type Model64 = model::Model<f64>;
