//! Evaluation metrics: SSIM, PSNR, MSE and CIEDE-2000, plus a directory
//! evaluator producing a CSV report.

mod color;
mod metrics;
mod report;

pub use color::{ciede2000, ciede2000_image, srgb_to_lab, srgb_to_lab_image, LabColor};
pub use metrics::{mse, psnr, ssim_metric};
pub use report::{evaluate_pairs, MetricsReport, PairMetrics, SkippedPair};
