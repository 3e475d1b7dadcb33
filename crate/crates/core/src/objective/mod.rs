//! Training objective: pixel MSE, SSIM loss and a frozen-feature perceptual
//! loss, mixed with weights that must sum to one.

mod composite;
mod perceptual;
mod ssim;

pub use composite::{composite_loss, mse_loss, CompositeLoss, LossBreakdown, LossWeights};
pub use perceptual::{perceptual_loss, ExtractorStage, FeatureExtractor};
pub use ssim::{ssim_loss, ssim_map, ssim_value, Ssim, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
