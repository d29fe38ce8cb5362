use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::guidance::{PatchFeatureSet, TextFeature};
use crate::scalar::Scalar;

/// Shape of the synthetic embeddings that stand in for a vision-language model.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureParams {
    pub grid: (usize, usize),
    pub channels: usize,
    pub noise_sigma: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams { grid: (8, 8), channels: 32, noise_sigma: 0.05 }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Fraction of each grid cell covered by the mask, row-major.
pub fn cell_coverage<T: Scalar>(mask: &Tensor<T>, (gh, gw): (usize, usize)) -> Result<Vec<f64>> {
    let (h, w) = match mask.shape() {
        [h, w] => (*h, *w),
        s => return Err(Error::shape(format!("mask must be [H, W], got {s:?}"))),
    };
    if gh == 0 || gw == 0 || gh > h || gw > w {
        return Err(Error::shape(format!("grid {gh}x{gw} does not fit a {h}x{w} mask")));
    }
    let m = mask.data();
    let mut cov = Vec::with_capacity(gh * gw);
    for gy in 0..gh {
        let (y0, y1) = (gy * h / gh, (gy + 1) * h / gh);
        for gx in 0..gw {
            let (x0, x1) = (gx * w / gw, (gx + 1) * w / gw);
            let mut s = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    s += m[y * w + x].to_f64().unwrap_or(0.0);
                }
            }
            cov.push(s / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    Ok(cov)
}

/// Patch features that point toward a random text direction in proportion to
/// how much of each cell the mask covers:
/// `normalize(f * text + (1 - f) * distractor + noise)`, where the distractor
/// is a unit vector orthogonal to the text.
pub fn gen_fixture_embeddings<T: Scalar>(
    mask: &Tensor<T>,
    params: &FixtureParams,
    seed: u64,
) -> Result<(PatchFeatureSet<T>, TextFeature<T>)> {
    let c = params.channels;
    if c < 2 {
        return Err(Error::Config(format!("fixture needs at least 2 channels, got {c}")));
    }
    let coverage = cell_coverage(mask, params.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text = normalized(gaussian(&mut rng, c));
    let mut distractor = gaussian(&mut rng, c);
    let along: f64 = distractor.iter().zip(&text).map(|(a, b)| a * b).sum();
    distractor.iter_mut().zip(&text).for_each(|(d, t)| *d -= along * t);
    let distractor = normalized(distractor);

    let mut features = Vec::with_capacity(coverage.len() * c);
    for f in coverage {
        let noise = gaussian(&mut rng, c);
        let row: Vec<f64> = (0..c)
            .map(|k| f * text[k] + (1.0 - f) * distractor[k] + params.noise_sigma * noise[k])
            .collect();
        features.extend(normalized(row).into_iter().map(T::lit));
    }
    let (gh, gw) = params.grid;
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let patches = PatchFeatureSet::new(Tensor::new(vec![gh * gw, c], features)?, (gh, gw), (h, w))?;
    let text = TextFeature::new(Tensor::new(vec![c], text.into_iter().map(T::lit).collect())?)?;
    Ok((patches, text))
}
