use std::path::Path;

use image::{ColorType, ImageFormat, RgbImage};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reads an 8-bit PNG as a `[3, H, W]` tensor in `[0, 1]`. Grey and alpha
/// variants are expanded to RGB; 16-bit files are rejected.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::io(path, e))?;
    match img.color() {
        ColorType::Rgb8 | ColorType::Rgba8 | ColorType::L8 | ColorType::La8 => {}
        other => return Err(Error::io(path, format!("unsupported pixel format {other:?}, expected 8-bit RGB"))),
    }
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    let plane = h * w;
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / plane, i % plane);
        f32::from(raw[p * 3 + c]) / 255.0
    }))
}

/// Writes a `[3, H, W]` (or `[1, 3, H, W]`) tensor as an 8-bit RGB PNG,
/// clamping to `[0, 1]` and rounding to the nearest level.
pub fn save_image<T: Scalar>(img: &Tensor<T>, path: &Path) -> Result<()> {
    let (h, w) = match img.shape() {
        &[3, h, w] | &[1, 3, h, w] => (h, w),
        s => return Err(Error::shape("save_image", format!("expected [3, H, W], got {s:?}"))),
    };
    let plane = h * w;
    let d = img.data();
    let mut buf = vec![0u8; plane * 3];
    for p in 0..plane {
        for c in 0..3 {
            let v = d[c * plane + p].as_f64();
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            buf[p * 3 + c] = (v * 255.0).round() as u8;
        }
    }
    let out = RgbImage::from_raw(w as u32, h as u32, buf).ok_or_else(|| Error::io(path, "image buffer size mismatch"))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    out.save_with_format(path, ImageFormat::Png).map_err(|e| Error::io(path, e))
}

/// Bilinear resampling of a `[C, H, W]` tensor with pixel-centre alignment.
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = match img.shape() {
        &[c, h, w] if h > 0 && w > 0 => (c, h, w),
        s => return Err(Error::shape("resize_bilinear", format!("expected non-empty [C, H, W], got {s:?}"))),
    };
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let src = |o: usize, n_out: usize, n_in: usize| {
        let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = x.floor() as usize;
        (i0, (i0 + 1).min(n_in - 1), x - i0 as f64)
    };
    let d = img.data();
    Ok(Tensor::from_fn(&[c, out_h, out_w], |i| {
        let (ch, y, x) = (i / (out_h * out_w), (i / out_w) % out_h, i % out_w);
        let (y0, y1, fy) = src(y, out_h, h);
        let (x0, x1, fx) = src(x, out_w, w);
        let at = |yy: usize, xx: usize| d[(ch * h + yy) * w + xx].as_f64();
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        T::lit(top * (1.0 - fy) + bot * fy)
    }))
}
