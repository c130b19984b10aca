//! Crossing-aggregation segmentation networks on a small CPU tensor stack.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the common instantiations.

pub mod autograd;
pub mod blocks;
pub mod data_io;
mod error;
pub mod metrics;
pub mod models;
pub mod nn_ops;
pub mod params;
mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::{Shape4, Tensor4};

pub type Tensor4f = Tensor4<f32>;
pub type Tensor4d = Tensor4<f64>;
pub type ParamStoreF32 = params::ParamStore<f32>;
pub type ParamStoreF64 = params::ParamStore<f64>;
pub type ModelF32 = models::Model<f32>;
pub type ModelF64 = models::Model<f64>;
