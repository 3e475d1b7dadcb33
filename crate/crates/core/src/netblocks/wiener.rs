//! Learnable Wiener gain layer.
//!
//! Each channel is smoothed by its own depthwise kernel `s = F(x)`, the local
//! signal power is estimated as `p = s²`, and the output is
//! `s · p / (p + σ² + ε)` where `σ² = softplus(θ)` is a learnable per-channel
//! noise variance.

use crate::diffcore::{Conv2dSpec, Graph, Padding, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const KERNELS: &str = "wiener.kernels";
pub const THETA: &str = "wiener.theta";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WienerConfig {
    pub channels: usize,
    pub kernel_size: usize,
    /// Standard deviation of the Gaussian the kernels start from.
    pub init_sigma: f64,
    /// Noise variance at initialization.
    pub init_noise_var: f64,
    pub epsilon: f64,
}

impl Default for WienerConfig {
    fn default() -> Self {
        Self { channels: 3, kernel_size: 5, init_sigma: 1.0, init_noise_var: 0.01, epsilon: 1e-6 }
    }
}

impl WienerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::Config(format!("wiener kernel size must be odd, got {}", self.kernel_size)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("wiener epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.channels == 0 {
            return Err(Error::Config("wiener layer needs at least one channel".into()));
        }
        Ok(())
    }
}

/// Learnable state of the layer.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerParams<T> {
    /// Depthwise filters `[C, 1, k, k]`.
    pub kernels: Tensor<T>,
    /// Raw noise parameter `[C]`; the variance is `softplus(theta)`.
    pub theta: Tensor<T>,
    pub epsilon: T,
}

/// Normalized `k×k` Gaussian, row-major.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Vec<f64> {
    let c = (k / 2) as f64;
    let g1: Vec<f64> = (0..k).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let mut g2: Vec<f64> = (0..k * k).map(|i| g1[i / k] * g1[i % k]).collect();
    let total: f64 = g2.iter().sum();
    g2.iter_mut().for_each(|v| *v /= total);
    g2
}

/// `θ` such that `softplus(θ) = var`.
pub fn inverse_softplus(var: f64) -> f64 {
    if var > 30.0 {
        var + (-(-var).exp()).ln_1p()
    } else {
        var.exp_m1().ln()
    }
}

impl<T: Scalar> WienerParams<T> {
    pub fn init(cfg: &WienerConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.kernel_size;
        let g = gaussian_kernel(k, cfg.init_sigma);
        let kernels = Tensor::from_fn(&[cfg.channels, 1, k, k], |i| T::lit(g[i % (k * k)]));
        let theta = Tensor::full(&[cfg.channels], T::lit(inverse_softplus(cfg.init_noise_var)));
        Ok(Self { kernels, theta, epsilon: T::lit(cfg.epsilon) })
    }

    pub fn noise_variance(&self) -> Vec<T> {
        self.theta.data().iter().map(|&t| crate::diffcore::softplus_scalar(t)).collect()
    }
}

/// Applies the Wiener gain to `x: [N, C, H, W]`, given graph handles to the
/// kernels and the raw noise parameter.
pub fn wiener_forward<T: Scalar>(g: &mut Graph<T>, x: Var, kernels: Var, theta: Var, epsilon: T) -> Result<Var> {
    const OP: &str = "wiener_forward";
    let (_, c, h, w) = g.value(x).dims4(OP)?;
    let (kc, _, k, _) = g.value(kernels).dims4(OP)?;
    if kc != c {
        return Err(Error::shape(OP, format!("C: input has {c} channels, layer has {kc}")));
    }
    if h < k || w < k {
        return Err(Error::shape(OP, format!("H/W: {h}x{w} smaller than kernel {k}")));
    }
    if !g.value(x).is_finite() {
        return Err(Error::NumericDomain { op: OP, detail: "input contains NaN or infinity".into() });
    }
    let s = g.conv2d(x, kernels, None, Conv2dSpec::same().groups(c).padding(Padding::Replicate))?;
    let p = g.square(s)?;
    let var = g.softplus(theta)?;
    let var_eps = g.add_scalar(var, epsilon)?;
    let denom = g.add_channel(p, var_eps)?;
    let gain = g.div(p, denom)?;
    g.mul(s, gain)
}

/// Convenience wrapper evaluating the layer without recording gradients.
pub fn wiener_apply<T: Scalar>(x: &Tensor<T>, params: &WienerParams<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let kv = g.constant(params.kernels.clone());
    let tv = g.constant(params.theta.clone());
    let out = wiener_forward(&mut g, xv, kv, tv, params.epsilon)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_normalized_rotation_symmetric_gaussian() {
        let p = WienerParams::<f32>::init(&WienerConfig::default()).unwrap();
        for c in 0..3 {
            let k = &p.kernels.data()[c * 25..(c + 1) * 25];
            let sum: f64 = k.iter().map(|&v| v as f64).sum();
            assert!((sum - 1.0).abs() <= 1e-6);
            for y in 0..5 {
                for x in 0..5 {
                    // 90° rotation maps (y, x) -> (x, 4 - y)
                    assert_eq!(k[y * 5 + x], k[x * 5 + (4 - y)]);
                }
            }
        }
        for v in p.noise_variance() {
            assert!((v as f64 - 0.01).abs() <= 1e-7, "{v}");
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let p = WienerParams::<f64>::init(&WienerConfig::default()).unwrap();
        let out = wiener_apply(&Tensor::zeros(&[1, 3, 8, 8]), &p).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_input_rejected() {
        let p = WienerParams::<f64>::init(&WienerConfig::default()).unwrap();
        let mut x = Tensor::zeros(&[1, 3, 8, 8]);
        x.data_mut()[5] = f64::NAN;
        assert!(matches!(wiener_apply(&x, &p), Err(Error::NumericDomain { .. })));
    }

    #[test]
    fn epsilon_must_be_positive() {
        let cfg = WienerConfig { epsilon: 0.0, ..WienerConfig::default() };
        assert!(WienerParams::<f32>::init(&cfg).is_err());
    }
}
