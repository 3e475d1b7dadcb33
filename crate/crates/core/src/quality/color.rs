//! sRGB (D65, 2° observer) to CIELAB and the CIEDE-2000 difference.

use std::f64::consts::PI;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// D65 reference white, `Y = 1`.
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

/// Linear sRGB → XYZ (IEC 61966-2-1).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabColor {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl LabColor {
    pub fn new(l: f64, a: f64, b: f64) -> Self {
        Self { l, a, b }
    }
}

fn srgb_decode(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

/// Converts one sRGB triple; components are clamped to `[0, 1]` first.
pub fn srgb_to_lab(rgb: [f64; 3]) -> LabColor {
    let lin = rgb.map(|c| srgb_decode(c.clamp(0.0, 1.0)));
    let xyz: [f64; 3] = std::array::from_fn(|r| (0..3).map(|c| RGB_TO_XYZ[r][c] * lin[c]).sum());
    let [fx, fy, fz]: [f64; 3] = std::array::from_fn(|i| lab_f(xyz[i] / WHITE[i]));
    LabColor { l: 116.0 * fy - 16.0, a: 500.0 * (fx - fy), b: 200.0 * (fy - fz) }
}

/// Per-pixel Lab of a `[3, H, W]` (or `[1, 3, H, W]`) image.
pub fn srgb_to_lab_image<T: Scalar>(img: &Tensor<T>) -> Result<Vec<LabColor>> {
    let plane = rgb_plane(img, "srgb_to_lab_image")?;
    let d = img.data();
    Ok((0..plane)
        .map(|i| srgb_to_lab([d[i].as_f64(), d[plane + i].as_f64(), d[2 * plane + i].as_f64()]))
        .collect())
}

fn rgb_plane<T: Scalar>(img: &Tensor<T>, op: &'static str) -> Result<usize> {
    match img.shape() {
        [3, h, w] | [1, 3, h, w] => Ok(h * w),
        s => Err(Error::shape(op, format!("expected an RGB image [3, H, W], got {s:?}"))),
    }
}

/// Hue angle in `[0, 2π)`, with `atan2(0, 0) = 0`.
fn hue(b: f64, a: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        return 0.0;
    }
    let h = b.atan2(a);
    if h < 0.0 {
        h + 2.0 * PI
    } else {
        h
    }
}

/// CIEDE-2000 colour difference with unit weighting factors `kL = kC = kH = 1`.
pub fn ciede2000(c1: LabColor, c2: LabColor) -> f64 {
    let deg = PI / 180.0;
    let pow7 = |x: f64| x.powi(7);

    let c_ab = ((c1.a.hypot(c1.b)) + (c2.a.hypot(c2.b))) / 2.0;
    let g = 0.5 * (1.0 - (pow7(c_ab) / (pow7(c_ab) + pow7(25.0))).sqrt());
    let a1 = (1.0 + g) * c1.a;
    let a2 = (1.0 + g) * c2.a;
    let cp1 = a1.hypot(c1.b);
    let cp2 = a2.hypot(c2.b);
    let hp1 = hue(c1.b, a1);
    let hp2 = hue(c2.b, a2);

    let dl = c2.l - c1.l;
    let dc = cp2 - cp1;
    let chroma_product = cp1 * cp2;
    let dh_angle = if chroma_product == 0.0 {
        0.0
    } else {
        let d = hp2 - hp1;
        if d > PI {
            d - 2.0 * PI
        } else if d < -PI {
            d + 2.0 * PI
        } else {
            d
        }
    };
    let dh = 2.0 * chroma_product.sqrt() * (dh_angle / 2.0).sin();

    let l_bar = (c1.l + c2.l) / 2.0;
    let c_bar = (cp1 + cp2) / 2.0;
    let h_bar = if chroma_product == 0.0 {
        hp1 + hp2
    } else if (hp1 - hp2).abs() <= PI {
        (hp1 + hp2) / 2.0
    } else if hp1 + hp2 < 2.0 * PI {
        (hp1 + hp2 + 2.0 * PI) / 2.0
    } else {
        (hp1 + hp2 - 2.0 * PI) / 2.0
    };

    let t = 1.0 - 0.17 * (h_bar - 30.0 * deg).cos() + 0.24 * (2.0 * h_bar).cos() + 0.32 * (3.0 * h_bar + 6.0 * deg).cos()
        - 0.20 * (4.0 * h_bar - 63.0 * deg).cos();
    let d_theta = 30.0 * deg * (-((h_bar / deg - 275.0) / 25.0).powi(2)).exp();
    let rc = 2.0 * (pow7(c_bar) / (pow7(c_bar) + pow7(25.0))).sqrt();
    let l50 = (l_bar - 50.0).powi(2);
    let sl = 1.0 + 0.015 * l50 / (20.0 + l50).sqrt();
    let sc = 1.0 + 0.045 * c_bar;
    let sh = 1.0 + 0.015 * c_bar * t;
    let rt = -(2.0 * d_theta).sin() * rc;

    let (tl, tc, th) = (dl / sl, dc / sc, dh / sh);
    (tl * tl + tc * tc + th * th + rt * tc * th).max(0.0).sqrt()
}

/// Mean per-pixel ΔE00 between two sRGB images.
pub fn ciede2000_image<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::shape("ciede2000_image", format!("shapes differ: {:?} vs {:?}", x.shape(), y.shape())));
    }
    let lx = srgb_to_lab_image(x)?;
    let ly = srgb_to_lab_image(y)?;
    if lx.is_empty() {
        return Err(Error::shape("ciede2000_image", "empty image"));
    }
    Ok(lx.iter().zip(&ly).map(|(a, b)| ciede2000(*a, *b)).sum::<f64>() / lx.len() as f64)
}
