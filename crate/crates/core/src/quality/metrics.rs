use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::objective::ssim_value;
use crate::scalar::Scalar;

fn same_shape<T: Scalar>(op: &'static str, x: &Tensor<T>, y: &Tensor<T>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::shape(op, format!("shapes differ: {:?} vs {:?}", x.shape(), y.shape())));
    }
    if x.numel() == 0 {
        return Err(Error::shape(op, "empty image"));
    }
    Ok(())
}

/// Mean squared error, accumulated in `f64`.
pub fn mse<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    same_shape("mse", x, y)?;
    let sum: f64 = x.data().iter().zip(y.data()).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
    Ok(sum / x.numel() as f64)
}

/// `10·log10(peak² / MSE)` in dB; `+∞` for identical images.
pub fn psnr<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, peak: f64) -> Result<f64> {
    let m = mse(x, y)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Mean SSIM, evaluated by the training loss's kernel without gradients.
/// Accepts `[C, H, W]` or `[N, C, H, W]`.
pub fn ssim_metric<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    same_shape("ssim_metric", x, y)?;
    let as4 = |t: &Tensor<T>| -> Result<Tensor<T>> {
        match t.shape() {
            &[c, h, w] => t.clone().reshape(&[1, c, h, w]),
            _ => Ok(t.clone()),
        }
    };
    Ok(ssim_value(&as4(x)?, &as4(y)?)?.as_f64())
}
