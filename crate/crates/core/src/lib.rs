//! Hyperspectral image denoising with an attention-based deep residual
//! network.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases below fix the precision used by the command-line tools.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod denoise;
pub mod error;
pub mod hsi;
pub mod io;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod render;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training and inference precision.
pub type Real = f32;

pub type Tensor = tensor::Tensor4<Real>;
pub type Tensor64 = tensor::Tensor4<f64>;
pub type Cube = hsi::HsiCube<Real>;
pub type Cube64 = hsi::HsiCube<f64>;
pub type Model = model::AdrnModel<Real>;
pub type Model64 = model::AdrnModel<f64>;
