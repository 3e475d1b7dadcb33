use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{BoundParams, ParamStore};
use super::unet::{init_unet, unet_forward, UNetConfig};
use super::wiener::{self, wiener_forward, WienerConfig, WienerParams};
use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which pipeline variant to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// U-Net only, trained with pixel MSE.
    Base,
    /// Wiener layer feeding the U-Net, trained with the composite loss.
    Ulw,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Base => "base",
            Preset::Ulw => "ulw",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Preset::Base),
            "ulw" => Ok(Preset::Ulw),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected base|ulw)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub preset: Preset,
    pub unet: UNetConfig,
    pub wiener: WienerConfig,
}

impl ModelConfig {
    pub fn new(preset: Preset, unet: UNetConfig) -> Self {
        let wiener = WienerConfig { channels: unet.in_channels, ..WienerConfig::default() };
        Self { preset, unet, wiener }
    }

    pub fn uses_wiener(&self) -> bool {
        self.preset == Preset::Ulw
    }
}

/// Wiener layer (when enabled) composed with the U-Net backbone.
#[derive(Debug)]
pub struct UlwModel {
    config: ModelConfig,
    wiener_calls: AtomicUsize,
}

impl Clone for UlwModel {
    fn clone(&self) -> Self {
        Self { config: self.config, wiener_calls: AtomicUsize::new(self.wiener_calls()) }
    }
}

impl UlwModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.unet.validate()?;
        if config.uses_wiener() {
            config.wiener.validate()?;
            if config.wiener.channels != config.unet.in_channels {
                return Err(Error::Config("wiener channels must equal U-Net input channels".into()));
            }
        }
        Ok(Self { config, wiener_calls: AtomicUsize::new(0) })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Number of times the Wiener layer has been evaluated by this model.
    pub fn wiener_calls(&self) -> usize {
        self.wiener_calls.load(Ordering::Relaxed)
    }

    /// Deterministic parameters for `seed`: Gaussian Wiener kernels with
    /// `softplus(θ) = 0.01`, He-uniform U-Net weights, zero biases.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        if self.config.uses_wiener() {
            let w = WienerParams::<T>::init(&self.config.wiener)?;
            store.insert(wiener::KERNELS, w.kernels)?;
            store.insert(wiener::THETA, w.theta)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_unet(&self.config.unet, &mut rng, &mut store)?;
        Ok(store)
    }

    /// `unet(wiener(x))`, or `unet(x)` for the base preset.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var, params: &BoundParams) -> Result<Var> {
        let input = if self.config.uses_wiener() {
            self.wiener_calls.fetch_add(1, Ordering::Relaxed);
            let k = params.get(wiener::KERNELS)?;
            let t = params.get(wiener::THETA)?;
            wiener_forward(g, x, k, t, T::lit(self.config.wiener.epsilon))?
        } else {
            x
        };
        unet_forward(g, input, &self.config.unet, params)
    }

    /// Inference on a detached batch.
    pub fn predict<T: Scalar>(&self, x: &crate::diffcore::Tensor<T>, params: &ParamStore<T>) -> Result<crate::diffcore::Tensor<T>> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, xv, &bound)?;
        Ok(g.value(out).clone())
    }
}
