use super::noise::gen_fractal_noise;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Parameters of one synthetic smoke layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmokeRecipe {
    /// Overall opacity in `[0, 1]`.
    pub density: f64,
    pub noise_octaves: u32,
    /// Lattice spacing of the coarsest octave, in pixels.
    pub noise_scale: f64,
    pub smoke_tint: [f64; 3],
    pub seed: u64,
}

impl Default for SmokeRecipe {
    fn default() -> Self {
        Self { density: 0.5, noise_octaves: 4, noise_scale: 24.0, smoke_tint: [0.94, 0.94, 0.96], seed: 0 }
    }
}

/// Rec. 709 luma weights on the stored (gamma-encoded) values.
pub fn luminance(rgb: [f64; 3]) -> f64 {
    0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2]
}

/// Alpha-composites a noise-modulated tinted layer over `clean: [3, H, W]`:
/// `(1 − d·m)·clean + d·m·tint`.
pub fn synth_smoke(clean: &Tensor<f32>, recipe: &SmokeRecipe) -> Result<Tensor<f32>> {
    let (h, w) = match clean.shape() {
        &[3, h, w] => (h, w),
        s => return Err(Error::shape("synth_smoke", format!("expected [3, H, W], got {s:?}"))),
    };
    if !(0.0..=1.0).contains(&recipe.density) {
        return Err(Error::Config(format!("smoke density must lie in [0, 1], got {}", recipe.density)));
    }
    if recipe.density == 0.0 {
        return Ok(clean.clone());
    }
    let m = gen_fractal_noise(h, w, recipe.noise_octaves, recipe.noise_scale, recipe.seed);
    composite_smoke(clean, &m, recipe.density, recipe.smoke_tint)
}

/// The compositing step of [`synth_smoke`] with an explicit `H·W` mask.
pub fn composite_smoke(clean: &Tensor<f32>, mask: &[f64], density: f64, tint: [f64; 3]) -> Result<Tensor<f32>> {
    let plane = match clean.shape() {
        &[3, h, w] if mask.len() == h * w => h * w,
        s => return Err(Error::shape("composite_smoke", format!("mask of {} values for image {s:?}", mask.len()))),
    };
    let d = clean.data();
    Ok(Tensor::from_fn(clean.shape(), |i| {
        let (c, p) = (i / plane, i % plane);
        let a = density * mask[p];
        ((1.0 - a) * f64::from(d[i]) + a * tint[c]).clamp(0.0, 1.0) as f32
    }))
}
