use crate::diffcore::{Conv2dSpec, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::netblocks::gaussian_kernel;
use crate::scalar::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// `(K1 · L)²` with `K1 = 0.01`, `L = 1`.
pub const SSIM_C1: f64 = 0.01 * 0.01;
/// `(K2 · L)²` with `K2 = 0.03`, `L = 1`.
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Graph handles produced by [`ssim_map`].
#[derive(Clone, Copy, Debug)]
pub struct Ssim {
    /// Local SSIM for every valid window position, `[N, C, H-10, W-10]`.
    pub map: Var,
    /// Mean over windows, channels and batch.
    pub mean: Var,
}

/// Windowed SSIM between two `[N, C, H, W]` images with unit dynamic range.
pub fn ssim_map<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Ssim> {
    const OP: &str = "ssim_map";
    let (n, c, h, w) = g.value(x).dims4(OP)?;
    if g.value(y).shape() != [n, c, h, w] {
        return Err(Error::shape(OP, format!("shapes differ: {:?} vs {:?}", g.value(x).shape(), g.value(y).shape())));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(OP, format!("H/W: {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let win = g.constant(Tensor::from_fn(&[c, 1, SSIM_WINDOW, SSIM_WINDOW], |i| T::lit(k[i % k.len()])));
    let spec = Conv2dSpec::valid().groups(c);
    let blur = |g: &mut Graph<T>, v: Var| g.conv2d(v, win, None, spec);

    let mu_x = blur(g, x)?;
    let mu_y = blur(g, y)?;
    let xx = g.square(x)?;
    let yy = g.square(y)?;
    let xy = g.mul(x, y)?;
    let e_xx = blur(g, xx)?;
    let e_yy = blur(g, yy)?;
    let e_xy = blur(g, xy)?;

    let mu_xx = g.square(mu_x)?;
    let mu_yy = g.square(mu_y)?;
    let mu_xy = g.mul(mu_x, mu_y)?;
    let var_x = g.sub(e_xx, mu_xx)?;
    let var_y = g.sub(e_yy, mu_yy)?;
    let cov = g.sub(e_xy, mu_xy)?;

    let c1 = T::lit(SSIM_C1);
    let c2 = T::lit(SSIM_C2);
    let two = T::lit(2.0);
    let lum_num = g.mul_scalar(mu_xy, two)?;
    let lum_num = g.add_scalar(lum_num, c1)?;
    let cs_num = g.mul_scalar(cov, two)?;
    let cs_num = g.add_scalar(cs_num, c2)?;
    let lum_den = g.add(mu_xx, mu_yy)?;
    let lum_den = g.add_scalar(lum_den, c1)?;
    let cs_den = g.add(var_x, var_y)?;
    let cs_den = g.add_scalar(cs_den, c2)?;

    let num = g.mul(lum_num, cs_num)?;
    let den = g.mul(lum_den, cs_den)?;
    let map = g.div(num, den)?;
    let mean = g.mean(map)?;
    Ok(Ssim { map, mean })
}

/// `1 − mean SSIM`, in `[0, 2]`.
pub fn ssim_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let s = ssim_map(g, pred, target)?;
    let neg = g.mul_scalar(s.mean, -T::one())?;
    g.add_scalar(neg, T::one())
}

/// Mean SSIM of two detached images; the same arithmetic as [`ssim_map`].
pub fn ssim_value<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<T> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let s = ssim_map(&mut g, xv, yv)?;
    g.value(s.mean).item()
}
