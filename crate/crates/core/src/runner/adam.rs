use crate::error::{Error, Result};
use crate::netblocks::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    t: u64,
    m: ParamStore<T>,
    v: ParamStore<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, t: 0, m: ParamStore::new(), v: ParamStore::new() })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update of every tensor in `params` from the matching entry of `grads`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads.get(name).ok_or_else(|| Error::Usage(format!("missing gradient for parameter `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient for `{name}` has shape {:?}, parameter {:?}", g.shape(), p.shape()),
                ));
            }
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("checked above");
            if self.m.get(name).is_none() {
                self.m.insert(name, crate::diffcore::Tensor::zeros(p.shape()))?;
                self.v.insert(name, crate::diffcore::Tensor::zeros(p.shape()))?;
            }
            let m = self.m.get_mut(name).expect("just inserted").data_mut();
            let v = self.v.get_mut(name).expect("just inserted").data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
