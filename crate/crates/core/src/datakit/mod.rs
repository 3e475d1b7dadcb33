//! Image I/O, deterministic dataset splitting and a synthetic paired
//! smoke/clean generator.

mod dataset;
mod image_io;
mod noise;
mod smoke;
mod split;

pub use dataset::{build_synthetic_dataset, load_pairs, ImagePair, Manifest, ManifestRow, SynthConfig};
pub use image_io::{load_image, resize_bilinear, save_image};
pub use noise::{gen_fractal_noise, sub_seed};
pub use smoke::{composite_smoke, luminance, synth_smoke, SmokeRecipe};
pub use split::{split_dataset, Split, SplitSpec};
