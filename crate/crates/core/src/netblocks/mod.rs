//! The desmoking network: a learnable Wiener gain layer feeding a U-Net.

mod model;
mod params;
mod unet;
pub mod wiener;

pub use model::{ModelConfig, Preset, UlwModel};
pub use params::{BoundParams, ParamStore};
pub use unet::{unet_forward, UNetConfig};
pub use wiener::{gaussian_kernel, wiener_apply, wiener_forward, WienerConfig, WienerParams};
