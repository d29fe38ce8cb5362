//! Training objective: reconstruction (pixel L1 plus feature-space L1) and
//! the per-stage guidance alignment term.
//!
//! All terms are per-element means rather than raw sums so the default
//! weights do not depend on image resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::guidance::StageGuidance;
use crate::scalar::Scalar;

pub const EXTRACTOR_SEED: u64 = 0xC0FFEE;
const EXTRACTOR_CHANNELS: [usize; 3] = [8, 16, 32];
const EXTRACTOR_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_align: f64,
    pub lambda_percep: f64,
    pub eta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_align: 0.1, lambda_percep: 0.1, eta: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("lambda_align", self.lambda_align), ("lambda_percep", self.lambda_percep), ("eta", self.eta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `mean((F * (1 - m))^2) - eta * mean(F * m)` with `m` broadcast over channels.
pub fn align_loss_stage<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    guidance: &StageGuidance<T>,
    eta: T,
) -> Result<Var> {
    let shape = tape.shape(features);
    if shape.len() != 3 || shape[1..] != *guidance.values.shape() {
        return Err(Error::shape(format!(
            "stage {} guidance {:?} does not match features {shape:?}",
            guidance.stage,
            guidance.values.shape()
        )));
    }
    let inv_n = T::one() / T::lit(tape.value(features).numel() as f64);
    let background = tape.constant(guidance.values.map(|m| T::one() - m));
    let foreground = tape.constant(guidance.values.clone());

    let suppressed = tape.mul(features, background)?;
    let energy = tape.sq_frobenius(suppressed);
    let energy = tape.scale(energy, inv_n);
    let corr = tape.inner_product(features, foreground)?;
    let corr = tape.scale(corr, eta * inv_n);
    tape.sub(energy, corr)
}

/// Frozen convolutional feature stack. Each block is a 3x3 convolution,
/// leaky-relu and 2x2 average pooling; features are tapped after every block.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualExtractor<T> {
    blocks: Vec<(Tensor<T>, Tensor<T>)>,
    slope: f64,
}

impl<T: Scalar> PerceptualExtractor<T> {
    /// Three blocks with 8/16/32 channels drawn from `seed`.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut blocks = Vec::new();
        for &cout in &EXTRACTOR_CHANNELS {
            let bound = (1.0 / (cin * 9) as f64).sqrt();
            let mut draw = || T::lit((2.0 * rng.random::<f64>() - 1.0) * bound);
            let w = Tensor::from_fn(vec![cout, cin, 3, 3], |_| draw()).expect("static shape");
            let b = Tensor::from_fn(vec![cout], |_| draw()).expect("static shape");
            blocks.push((w, b));
            cin = cout;
        }
        PerceptualExtractor { blocks, slope: EXTRACTOR_SLOPE }
    }

    pub fn blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Spatial divisor inputs must satisfy.
    pub fn divisor(&self) -> usize {
        1 << self.blocks.len()
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut c = Checkpoint::new(seed);
        c.push_config("kind", "perceptual_extractor");
        c.push_config("leaky_slope", self.slope);
        for (j, (w, b)) in self.blocks.iter().enumerate() {
            c.push_tensor(&format!("block{j}.weight"), w);
            c.push_tensor(&format!("block{j}.bias"), b);
        }
        c
    }

    /// Loads an externally exported stack; any number of 3x3 blocks whose
    /// channel counts chain, starting from 3 input channels.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let slope = match ckpt.config_value("leaky_slope") {
            Some(s) => s.parse().map_err(|_| Error::format(0, "malformed leaky_slope"))?,
            None => EXTRACTOR_SLOPE,
        };
        let mut blocks = Vec::new();
        let mut cin = 3;
        for j in 0.. {
            let (Some(w), Some(b)) = (ckpt.tensor(&format!("block{j}.weight")), ckpt.tensor(&format!("block{j}.bias")))
            else {
                break;
            };
            match (w.shape(), b.shape()) {
                ([cout, k, 3, 3], [bo]) if *k == cin && cout == bo => cin = *cout,
                _ => {
                    return Err(Error::format(
                        0,
                        format!("extractor block {j} has shapes {:?} / {:?}", w.shape(), b.shape()),
                    ))
                }
            }
            blocks.push((w.cast(), b.cast()));
        }
        if blocks.is_empty() {
            return Err(Error::format(0, "checkpoint holds no extractor blocks"));
        }
        Ok(PerceptualExtractor { blocks, slope })
    }
}

impl<T: Scalar> Default for PerceptualExtractor<T> {
    fn default() -> Self {
        Self::seeded(EXTRACTOR_SEED)
    }
}

/// Feature maps after each extractor block. The extractor weights enter the
/// tape as constants; gradients flow into `x` only.
pub fn perceptual_features<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    extractor: &PerceptualExtractor<T>,
) -> Result<Vec<Var>> {
    let div = extractor.divisor();
    match tape.shape(x) {
        [3, h, w] if h % div == 0 && w % div == 0 => {}
        s => return Err(Error::shape(format!("extractor input must be [3, H, W] with H, W divisible by {div}, got {s:?}"))),
    }
    let mut out = Vec::with_capacity(extractor.blocks.len());
    let mut h = x;
    for (w, b) in &extractor.blocks {
        let (w, b) = (tape.constant(w.clone()), tape.constant(b.clone()));
        h = tape.conv2d(h, w, b)?;
        h = tape.leaky_relu(h, T::lit(extractor.slope));
        h = tape.avg_pool2(h)?;
        out.push(h);
    }
    Ok(out)
}

fn mean_abs_diff<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let n = tape.value(a).numel();
    let d = tape.l1_distance(a, b)?;
    Ok(tape.scale(d, T::one() / T::lit(n as f64)))
}

/// `mean|I_e - I_gt| + lambda_percep * sum_j mean|phi_j(I_e) - phi_j(I_gt)|`.
pub fn recon_loss<T: Scalar>(
    tape: &mut Tape<T>,
    enhanced: Var,
    reference: Var,
    extractor: &PerceptualExtractor<T>,
    lambda_percep: T,
) -> Result<Var> {
    if tape.shape(enhanced) != tape.shape(reference) {
        return Err(Error::shape(format!(
            "enhanced {:?} and reference {:?} differ",
            tape.shape(enhanced),
            tape.shape(reference)
        )));
    }
    let pixel = mean_abs_diff(tape, enhanced, reference)?;
    if lambda_percep == T::zero() {
        return Ok(pixel);
    }
    let fe = perceptual_features(tape, enhanced, extractor)?;
    let fr = perceptual_features(tape, reference, extractor)?;
    let mut percep: Option<Var> = None;
    for (a, b) in fe.into_iter().zip(fr) {
        let d = mean_abs_diff(tape, a, b)?;
        percep = Some(match percep {
            Some(p) => tape.add(p, d)?,
            None => d,
        });
    }
    let percep = percep.expect("extractor has at least one block");
    let percep = tape.scale(percep, lambda_percep);
    tape.add(pixel, percep)
}

/// `recon + lambda_align * sum(aligns)`.
pub fn total_loss<T: Scalar>(tape: &mut Tape<T>, recon: Var, aligns: &[Var], lambda_align: T) -> Result<Var> {
    let Some((first, rest)) = aligns.split_first() else {
        return Ok(recon);
    };
    let mut sum = *first;
    for a in rest {
        sum = tape.add(sum, *a)?;
    }
    let weighted = tape.scale(sum, lambda_align);
    tape.add(recon, weighted)
}
