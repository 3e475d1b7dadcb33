//! Learnable Wiener filter + U-Net image desmoking.
//!
//! All numeric code is generic over [`Scalar`] (`f32` for training and
//! inference, `f64` for gradient verification); the aliases below name the
//! two concrete instantiations.

pub mod datakit;
pub mod diffcore;
pub mod error;
pub mod netblocks;
pub mod objective;
pub mod quality;
pub mod runner;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = diffcore::Tensor<f32>;
pub type Tensor64 = diffcore::Tensor<f64>;
pub type Graph32 = diffcore::Graph<f32>;
pub type Graph64 = diffcore::Graph<f64>;

pub type ParamStore32 = netblocks::ParamStore<f32>;
pub type ParamStore64 = netblocks::ParamStore<f64>;
