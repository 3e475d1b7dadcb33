//! Same-padding U-Net: `depth` encoder levels of two 3×3 conv + ReLU and a
//! 2×2 max-pool, a bottleneck of two conv + ReLU, `depth` decoder levels of
//! stride-2 transposed conv, skip concatenation and two conv + ReLU, and a
//! 1×1 conv head squashed by a sigmoid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{BoundParams, ParamStore};
use crate::diffcore::{Conv2dSpec, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for UNetConfig {
    /// Desk-scale preset: bottleneck of 256 filters.
    fn default() -> Self {
        Self { depth: 4, base_channels: 16, in_channels: 3, out_channels: 3 }
    }
}

impl UNetConfig {
    /// Four levels, 64 base filters, 1024-filter bottleneck.
    pub fn full_scale() -> Self {
        Self { base_channels: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("invalid U-Net config {self:?}: every extent must be >= 1")));
        }
        Ok(())
    }

    /// Channel width at encoder level `level`; `level == depth` is the bottleneck.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.depth)
    }

    /// Spatial extents must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.divisor();
        if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "unet_forward",
                format!("H/W {h}x{w} must be divisible by {d} (2^depth, depth={})", self.depth),
            ));
        }
        Ok(())
    }
}

/// `(name, weight shape, fan_in)` for every convolution, in construction order.
fn layer_specs(cfg: &UNetConfig) -> Vec<(String, [usize; 4], usize, bool)> {
    let mut out = Vec::new();
    let mut conv = |name: String, cin: usize, cout: usize, k: usize| {
        out.push((name, [cout, cin, k, k], cin * k * k, false));
    };
    let mut prev = cfg.in_channels;
    for lvl in 0..cfg.depth {
        let c = cfg.channels(lvl);
        conv(format!("unet.enc{lvl}.conv1"), prev, c, 3);
        conv(format!("unet.enc{lvl}.conv2"), c, c, 3);
        prev = c;
    }
    let b = cfg.bottleneck_channels();
    conv("unet.bottleneck.conv1".into(), prev, b, 3);
    conv("unet.bottleneck.conv2".into(), b, b, 3);
    let mut specs = out;
    for lvl in (0..cfg.depth).rev() {
        let c = cfg.channels(lvl);
        let up_in = cfg.channels(lvl + 1);
        // transposed kernel layout [Cin, Cout, k, k]; each output pixel sees one tap per input channel
        specs.push((format!("unet.dec{lvl}.up"), [up_in, c, 2, 2], up_in, true));
        specs.push((format!("unet.dec{lvl}.conv1"), [c, 2 * c, 3, 3], 2 * c * 9, false));
        specs.push((format!("unet.dec{lvl}.conv2"), [c, c, 3, 3], c * 9, false));
    }
    specs.push(("unet.head".into(), [cfg.out_channels, cfg.base_channels, 1, 1], cfg.base_channels, false));
    specs
}

/// Adds He-uniform weights and zero biases for every U-Net layer.
pub(crate) fn init_unet<T: Scalar>(cfg: &UNetConfig, rng: &mut ChaCha8Rng, store: &mut ParamStore<T>) -> Result<()> {
    cfg.validate()?;
    for (name, shape, fan_in, transposed) in layer_specs(cfg) {
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = Tensor::from_fn(&shape, |_| T::lit(rng.gen_range(-bound..bound)));
        let bias_len = if transposed { shape[1] } else { shape[0] };
        store.insert(format!("{name}.weight"), w)?;
        store.insert(format!("{name}.bias"), Tensor::zeros(&[bias_len]))?;
    }
    Ok(())
}

fn conv_relu<T: Scalar>(g: &mut Graph<T>, x: Var, p: &BoundParams, name: &str) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    let y = g.conv2d(x, w, Some(b), Conv2dSpec::same())?;
    g.relu(y)
}

/// Runs the backbone on `x: [N, Cin, H, W]`, producing `[N, Cout, H, W]` in (0, 1).
pub fn unet_forward<T: Scalar>(g: &mut Graph<T>, x: Var, cfg: &UNetConfig, p: &BoundParams) -> Result<Var> {
    let (_, c, h, w) = g.value(x).dims4("unet_forward")?;
    if c != cfg.in_channels {
        return Err(Error::shape("unet_forward", format!("C: input has {c} channels, config expects {}", cfg.in_channels)));
    }
    cfg.check_input(h, w)?;

    let mut skips = Vec::with_capacity(cfg.depth);
    let mut cur = x;
    for lvl in 0..cfg.depth {
        cur = conv_relu(g, cur, p, &format!("unet.enc{lvl}.conv1"))?;
        cur = conv_relu(g, cur, p, &format!("unet.enc{lvl}.conv2"))?;
        skips.push(cur);
        cur = g.max_pool2d(cur)?;
    }
    cur = conv_relu(g, cur, p, "unet.bottleneck.conv1")?;
    cur = conv_relu(g, cur, p, "unet.bottleneck.conv2")?;
    for lvl in (0..cfg.depth).rev() {
        let up_w = p.get(&format!("unet.dec{lvl}.up.weight"))?;
        let up_b = p.get(&format!("unet.dec{lvl}.up.bias"))?;
        let up = g.conv_transpose2d(cur, up_w, Some(up_b), 2)?;
        let cat = g.concat_channels(skips[lvl], up)?;
        cur = conv_relu(g, cat, p, &format!("unet.dec{lvl}.conv1"))?;
        cur = conv_relu(g, cur, p, &format!("unet.dec{lvl}.conv2"))?;
    }
    let hw = p.get("unet.head.weight")?;
    let hb = p.get("unet.head.bias")?;
    let logits = g.conv2d(cur, hw, Some(hb), Conv2dSpec::same())?;
    g.sigmoid(logits)
}
