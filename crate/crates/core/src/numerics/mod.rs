//! Minimal numerics stack: dense tensors, value-level kernels, a
//! tape-based reverse-mode autodiff graph, an executed-multiply counter,
//! and a finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod macs;
pub mod scalar;
pub mod tensor;
