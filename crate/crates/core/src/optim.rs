use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!("betas must be in [0, 1), got {} {}", self.beta1, self.beta2)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Bias-corrected Adam without weight decay. Moments are kept in f64.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(config: AdamConfig, params: &[Tensor<T>]) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Ok(Adam { config, step: 0, m: zeros(), v: zeros() })
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update; `grads[i]` pairs with `params[i]`.
    pub fn step<'a, T: Scalar>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<T>>,
        grads: &[Tensor<T>],
    ) -> Result<()> {
        self.step += 1;
        let AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, eps } = self.config;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let mut count = 0;
        for (i, p) in params.into_iter().enumerate() {
            let g = grads.get(i).ok_or_else(|| Error::shape("fewer gradients than parameters"))?;
            if g.shape() != p.shape() || i >= self.m.len() {
                return Err(Error::shape(format!("gradient {:?} does not match parameter {:?}", g.shape(), p.shape())));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (x, g)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let g = g.to_f64().unwrap_or(f64::NAN);
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                let update = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                *x = T::lit(x.to_f64().unwrap_or(f64::NAN) - update);
            }
            count += 1;
        }
        if count != self.m.len() || grads.len() != count {
            return Err(Error::shape(format!("{count} parameters for {} slots", self.m.len())));
        }
        Ok(())
    }
}
