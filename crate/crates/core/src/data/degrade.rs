use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Two-term water model: per-channel transmission `t = exp(-beta * d)` and
/// veiling light `B * (1 - t)`, plus Gaussian sensor noise.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationParams {
    pub beta: [f64; 3],
    pub depth_range: (f64, f64),
    pub backscatter: [f64; 3],
    pub noise_sigma: f64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        DegradationParams {
            beta: [1.2, 0.6, 0.3],
            depth_range: (0.5, 2.5),
            backscatter: [0.05, 0.35, 0.45],
            noise_sigma: 0.01,
        }
    }
}

impl DegradationParams {
    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::Config(format!("beta must be >= 0, got {:?}", self.beta)));
        }
        if self.backscatter.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config(format!("backscatter must be in [0, 1], got {:?}", self.backscatter)));
        }
        let (lo, hi) = self.depth_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("bad depth range {:?}", self.depth_range)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Degrades at a depth drawn uniformly from `params.depth_range`.
pub fn degrade<T: Scalar>(clean: &Tensor<T>, params: &DegradationParams, seed: u64) -> Result<Tensor<T>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = params.depth_range;
    let depth = lo + (hi - lo) * rng.random::<f64>();
    apply(clean, params, depth, &mut rng)
}

/// Degrades at a fixed `depth`; `seed` only drives the noise.
pub fn degrade_at_depth<T: Scalar>(
    clean: &Tensor<T>,
    params: &DegradationParams,
    depth: f64,
    seed: u64,
) -> Result<Tensor<T>> {
    params.validate()?;
    apply(clean, params, depth, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn apply<T: Scalar>(
    clean: &Tensor<T>,
    params: &DegradationParams,
    depth: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    let plane = match clean.shape() {
        [3, h, w] => h * w,
        s => return Err(Error::shape(format!("degrade needs [3, H, W], got {s:?}"))),
    };
    let mut out = clean.clone();
    for (c, chan) in out.data_mut().chunks_mut(plane).enumerate() {
        let t = (-params.beta[c] * depth).exp();
        let veil = params.backscatter[c] * (1.0 - t);
        for v in chan.iter_mut() {
            let noise = if params.noise_sigma > 0.0 {
                params.noise_sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            let x = v.to_f64().unwrap_or(0.0) * t + veil + noise;
            *v = T::lit(x.clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f64) -> Tensor<f64> {
        Tensor::full(vec![3, 4, 4], v).unwrap()
    }

    #[test]
    fn no_attenuation_is_identity() {
        let p = DegradationParams { beta: [0.0; 3], noise_sigma: 0.0, ..Default::default() };
        let x = Tensor::from_fn(vec![3, 4, 4], |i| (i as f64 * 0.37).sin().abs()).unwrap();
        assert_eq!(degrade(&x, &p, 3).unwrap(), x);
    }

    #[test]
    fn deep_water_tends_to_backscatter() {
        let p = DegradationParams { noise_sigma: 0.0, ..Default::default() };
        let y = degrade_at_depth(&img(0.9), &p, 200.0, 0).unwrap();
        for (c, chan) in y.data().chunks(16).enumerate() {
            assert!(chan.iter().all(|v| (v - p.backscatter[c]).abs() < 1e-9));
        }
    }

    #[test]
    fn unit_depth_on_white() {
        // 1 * exp(-beta) + B * (1 - exp(-beta)) per channel
        let p = DegradationParams { noise_sigma: 0.0, ..Default::default() };
        let y = degrade_at_depth(&img(1.0), &p, 1.0, 0).unwrap();
        let want = [0.336135, 0.706728, 0.857450];
        for (c, chan) in y.data().chunks(16).enumerate() {
            assert!((chan[0] - want[c]).abs() < 1e-3, "channel {c}: {}", chan[0]);
        }
        assert!(chan_mean(&y, 0) < chan_mean(&y, 1));
    }

    fn chan_mean(t: &Tensor<f64>, c: usize) -> f64 {
        t.data()[c * 16..(c + 1) * 16].iter().sum::<f64>() / 16.0
    }

    #[test]
    fn deeper_moves_toward_backscatter() {
        let p = DegradationParams { noise_sigma: 0.0, ..Default::default() };
        let x = Tensor::from_fn(vec![3, 4, 4], |i| (i as f64 * 0.61).cos().abs()).unwrap();
        let mut prev = x.clone();
        for d in [0.5, 1.0, 1.5, 2.0, 2.5] {
            let y = degrade_at_depth(&x, &p, d, 0).unwrap();
            for (i, (a, b)) in prev.data().iter().zip(y.data()).enumerate() {
                let target = p.backscatter[i / 16];
                assert!((b - target).abs() <= (a - target).abs() + 1e-15);
            }
            prev = y;
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let p = DegradationParams { beta: [-1.0, 0.0, 0.0], ..Default::default() };
        assert!(degrade(&img(0.5), &p, 0).is_err());
        let p = DegradationParams { backscatter: [1.5, 0.0, 0.0], ..Default::default() };
        assert!(degrade(&img(0.5), &p, 0).is_err());
    }
}
