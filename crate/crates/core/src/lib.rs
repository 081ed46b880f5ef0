//! From-scratch deep-learning core for hybrid CNN/vision-transformer image
//! classifiers: a reverse-mode autodiff tensor engine, the layers both
//! branches need, the two model families and their fused combinations, plus
//! losses, Adam, a deterministic training loop, and binary checkpoints.
//!
//! All numerics are generic over [`Scalar`] (f32 or f64). f32 is the
//! training default; f64 drives gradient checks and replay-equality tests.

pub mod error;
pub mod init;
pub mod layers;
pub mod model;
pub mod multinet;
pub mod scalar;
pub mod vit;
pub mod tensor;

pub use error::{CoreError, Result};
pub use scalar::{Dtype, Scalar};
pub use tensor::Tensor;

/// Single-precision tensor, the training default.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, used by gradient checks and determinism tests.
pub type Tensor64 = Tensor<f64>;
