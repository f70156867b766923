//! Numerical core of a volumetric CT segmentation engine.
//!
//! The crate is `no_std` (it only needs `alloc`). It holds everything that is
//! pure computation: dense tensors and differentiable layer primitives, the
//! 3D-encoder / 2D-decoder network, the boundary-weighted loss, the
//! boundary-band CRF, augmentation and window extraction, fold planning,
//! metrics, optimizers and the finite-difference gradient harness.
//!
//! File formats, training orchestration and the command-line front end live
//! in the `voxelseg` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod crf;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod optim;
pub mod real;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use mask::Mask;
pub use real::{DType, Real};
pub use tensor::Tensor;
