#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semguide::data::{gen_fixture_embeddings, FixtureParams};
use semguide::guidance::{guidance_from_embeddings, minmax_normalize, sharpen, SharpenParams};
use semguide::Tensor64;

/// Scalar-loop min-max normalization followed by `max(0, x - delta)^gamma`.
pub fn sharpen_oracle(scores: &[f64], gamma: f64, delta: f64) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &s in scores {
        if s < lo {
            lo = s;
        }
        if s > hi {
            hi = s;
        }
    }
    let mut out = Vec::with_capacity(scores.len());
    for &s in scores {
        if hi - lo < 1e-9 {
            out.push(0.0);
            continue;
        }
        let n = (s - lo) / (hi - lo);
        let shifted = n - delta;
        out.push(if shifted > 0.0 { shifted.powf(gamma) } else { 0.0 });
    }
    out
}

/// Worst absolute gap between the library pipeline and the oracle over
/// `vectors` random score vectors for one `(gamma, delta)`.
pub fn sharpen_gap(seed: u64, vectors: usize, gamma: f64, delta: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SharpenParams::new(gamma, delta).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..vectors {
        let n = rng.random_range(1..=96);
        let scale = rng.random_range(0.01..2.0);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let t = Tensor64::new(vec![n], scores.clone()).unwrap();
        let got = sharpen(&minmax_normalize(&t), &params);
        let want = sharpen_oracle(&scores, gamma, delta);
        for (g, w) in got.data().iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    worst
}

/// A `size x size` mask with a centered `side x side` square of ones.
pub fn centered_square(size: usize, side: usize) -> Tensor64 {
    let lo = (size - side) / 2;
    Tensor64::from_fn(vec![size, size], |i| {
        let (y, x) = (i / size, i % size);
        if (lo..lo + side).contains(&y) && (lo..lo + side).contains(&x) {
            1.0
        } else {
            0.0
        }
    })
    .unwrap()
}

/// Mean map value inside and outside the mask.
pub fn region_means(map: &Tensor64, mask: &Tensor64) -> (f64, f64) {
    let (mut si, mut ni, mut so, mut no) = (0.0, 0.0, 0.0, 0.0);
    for (v, m) in map.data().iter().zip(mask.data()) {
        if *m > 0.5 {
            si += v;
            ni += 1.0;
        } else {
            so += v;
            no += 1.0;
        }
    }
    (si / ni, so / no)
}

/// In/out means of the guidance map built from fixture embeddings of `mask`.
pub fn fixture_means(mask: &Tensor64, noise_sigma: f64, gamma: f64, delta: f64, seed: u64) -> (f64, f64) {
    let params = FixtureParams { noise_sigma, ..FixtureParams::default() };
    let (patches, text) = gen_fixture_embeddings(mask, &params, seed).unwrap();
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let sharpen = SharpenParams::new(gamma, delta).unwrap();
    let g = guidance_from_embeddings(&patches, &text, &sharpen, (h, w)).unwrap();
    region_means(g.map.values(), mask)
}
