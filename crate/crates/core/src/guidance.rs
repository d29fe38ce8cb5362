//! Spatial semantic guidance from patch and text embeddings.
//!
//! Pipeline: unit-normalize both sides, cosine score per patch, min-max
//! normalize, threshold-then-power sharpening, reshape to the patch grid and
//! bilinearly resize to image resolution. The map is a fixed per-sample prior
//! and is never differentiated.

use crate::diffcore::{kernels, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Scores closer than this are treated as constant by [`minmax_normalize`].
pub const DEGENERATE_RANGE: f64 = 1e-9;
const MIN_NORM: f64 = 1e-12;

/// Patch embeddings `[N, C]` laid out row-major over a `grid_h x grid_w`
/// grid that tiles a `source_h x source_w` image.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchFeatureSet<T> {
    pub features: Tensor<T>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub source_h: usize,
    pub source_w: usize,
}

impl<T: Scalar> PatchFeatureSet<T> {
    pub fn new(
        features: Tensor<T>,
        (grid_h, grid_w): (usize, usize),
        (source_h, source_w): (usize, usize),
    ) -> Result<Self> {
        let n = match features.shape() {
            [n, _] => *n,
            s => return Err(Error::shape(format!("patch features must be [N, C], got {s:?}"))),
        };
        if grid_h == 0 || grid_w == 0 || grid_h * grid_w != n {
            return Err(Error::shape(format!("grid {grid_h}x{grid_w} does not tile {n} patches")));
        }
        if source_h == 0 || source_w == 0 {
            return Err(Error::shape(format!("empty source image {source_h}x{source_w}")));
        }
        Ok(PatchFeatureSet { features, grid_h, grid_w, source_h, source_w })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[1]
    }
}

/// Global text embedding `[C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TextFeature<T> {
    pub vec: Tensor<T>,
}

impl<T: Scalar> TextFeature<T> {
    pub fn new(vec: Tensor<T>) -> Result<Self> {
        if vec.rank() != 1 {
            return Err(Error::shape(format!("text feature must be [C], got {:?}", vec.shape())));
        }
        Ok(TextFeature { vec })
    }
}

/// Parameters of the sharpening transform `max(0, x - delta)^gamma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SharpenParams {
    gamma: f64,
    delta: f64,
}

impl SharpenParams {
    pub fn new(gamma: f64, delta: f64) -> Result<Self> {
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be > 1, got {gamma}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::Config(format!("delta must be in [0, 1), got {delta}")));
        }
        Ok(SharpenParams { gamma, delta })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl Default for SharpenParams {
    fn default() -> Self {
        SharpenParams { gamma: 2.0, delta: 0.2 }
    }
}

/// Per-pixel relevance in `[0, 1]`, shape `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceMap<T> {
    values: Tensor<T>,
}

impl<T: Scalar> GuidanceMap<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::shape(format!("guidance map must be [H, W], got {:?}", values.shape())));
        }
        if values.data().iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::Domain("guidance values must lie in [0, 1]".into()));
        }
        Ok(GuidanceMap { values })
    }

    pub fn uniform(h: usize, w: usize, v: T) -> Result<Self> {
        GuidanceMap::new(Tensor::full(vec![h, w], v)?)
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }

    pub fn cast<U: Scalar>(&self) -> GuidanceMap<U> {
        GuidanceMap { values: self.values.cast::<U>().map(|v| v.max(U::zero()).min(U::one())) }
    }
}

/// A guidance map resampled to the spatial size of network stage `stage`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageGuidance<T> {
    pub stage: usize,
    pub values: Tensor<T>,
}

/// Divides every row (or the single vector) by its L2 norm.
pub fn l2_normalize<T: Scalar>(features: &Tensor<T>) -> Result<Tensor<T>> {
    let cols = match features.shape() {
        [c] | [_, c] => *c,
        s => return Err(Error::shape(format!("l2_normalize needs rank 1 or 2, got {s:?}"))),
    };
    let mut out = features.clone();
    for (i, row) in out.data_mut().chunks_mut(cols).enumerate() {
        let norm = row.iter().map(|x| *x * *x).sum::<T>().sqrt();
        if !(norm.to_f64().unwrap_or(0.0) >= MIN_NORM) {
            return Err(Error::DegenerateFeature(format!("row {i} has norm {norm}")));
        }
        row.iter_mut().for_each(|x| *x = *x / norm);
    }
    Ok(out)
}

/// Cosine score of each normalized patch row against the normalized text.
pub fn similarity_scores<T: Scalar>(patches: &Tensor<T>, text: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = match patches.shape() {
        [n, c] => (*n, *c),
        s => return Err(Error::shape(format!("patches must be [N, C], got {s:?}"))),
    };
    if text.shape() != [c] {
        return Err(Error::shape(format!(
            "text feature {:?} does not match patch width {c}",
            text.shape()
        )));
    }
    let t = text.data();
    let scores = patches
        .data()
        .chunks(c)
        .map(|row| row.iter().zip(t).map(|(a, b)| *a * *b).sum::<T>())
        .collect();
    Tensor::new(vec![n], scores)
}

/// Rescales to `[0, 1]`; a range below [`DEGENERATE_RANGE`] yields zeros.
pub fn minmax_normalize<T: Scalar>(scores: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = (scores.min(), scores.max());
    let range = hi - lo;
    if !(range.to_f64().unwrap_or(0.0) >= DEGENERATE_RANGE) {
        return scores.map(|_| T::zero());
    }
    scores.map(|s| ((s - lo) / range).max(T::zero()).min(T::one()))
}

/// `max(0, x - delta)^gamma` for a single score.
#[inline]
pub fn sharpen_value<T: Scalar>(x: T, gamma: T, delta: T) -> T {
    (x - delta).max(T::zero()).powf(gamma)
}

pub fn sharpen<T: Scalar>(normalized: &Tensor<T>, params: &SharpenParams) -> Tensor<T> {
    let (gamma, delta) = (T::lit(params.gamma), T::lit(params.delta));
    normalized.map(|x| sharpen_value(x, gamma, delta))
}

/// Reshapes `N = grid_h * grid_w` scores row-major and resizes to the output.
pub fn to_guidance_map<T: Scalar>(
    sharpened: &Tensor<T>,
    (grid_h, grid_w): (usize, usize),
    (out_h, out_w): (usize, usize),
) -> Result<GuidanceMap<T>> {
    if sharpened.rank() != 1 || grid_h * grid_w != sharpened.numel() {
        return Err(Error::shape(format!(
            "{:?} scores do not fill a {grid_h}x{grid_w} grid",
            sharpened.shape()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("empty guidance map size"));
    }
    let data = kernels::resize_forward(sharpened.data(), 1, (grid_h, grid_w), (out_h, out_w))
        .into_iter()
        .map(|v| v.max(T::zero()).min(T::one()))
        .collect();
    GuidanceMap::new(Tensor::new(vec![out_h, out_w], data)?)
}

pub fn downsample_guidance<T: Scalar>(
    map: &GuidanceMap<T>,
    stage: usize,
    (h, w): (usize, usize),
) -> Result<StageGuidance<T>> {
    let (mh, mw) = map.dims();
    if h == 0 || w == 0 || h > mh || w > mw {
        return Err(Error::shape(format!("cannot downsample a {mh}x{mw} map to {h}x{w}")));
    }
    let data = kernels::resize_forward(map.values.data(), 1, (mh, mw), (h, w))
        .into_iter()
        .map(|v| v.max(T::zero()).min(T::one()))
        .collect();
    Ok(StageGuidance { stage, values: Tensor::new(vec![h, w], data)? })
}

/// A computed map plus whether the similarity field was constant.
#[derive(Clone, Debug)]
pub struct GuidanceOutcome<T> {
    pub map: GuidanceMap<T>,
    pub degenerate: bool,
}

/// Full pipeline from raw (unnormalized) embeddings to an `out_h x out_w` map.
pub fn guidance_from_embeddings<T: Scalar>(
    patches: &PatchFeatureSet<T>,
    text: &TextFeature<T>,
    params: &SharpenParams,
    (out_h, out_w): (usize, usize),
) -> Result<GuidanceOutcome<T>> {
    let v = l2_normalize(&patches.features)?;
    let t = l2_normalize(&text.vec)?;
    let scores = similarity_scores(&v, &t)?;
    let range = (scores.max() - scores.min()).to_f64().unwrap_or(0.0);
    let sharpened = sharpen(&minmax_normalize(&scores), params);
    let map = to_guidance_map(&sharpened, (patches.grid_h, patches.grid_w), (out_h, out_w))?;
    Ok(GuidanceOutcome { map, degenerate: !(range >= DEGENERATE_RANGE) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t1(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let n = l2_normalize(&t1(&[3.0, 4.0])).unwrap();
        assert!((n.data()[0] - 0.6).abs() < 1e-15 && (n.data()[1] - 0.8).abs() < 1e-15);
        let again = l2_normalize(&n).unwrap();
        assert!(again.max_abs_diff(&n).unwrap() < 1e-7);
    }

    #[test]
    fn normalize_rejects_zero_rows() {
        let m = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(l2_normalize(&m), Err(Error::DegenerateFeature(_))));
    }

    #[test]
    fn random_rows_become_unit() {
        let m = Tensor::from_fn(vec![16, 8], |i| ((i * 7919) as f64 * 0.013).sin() + 0.1).unwrap();
        let n = l2_normalize(&m).unwrap();
        for row in n.data().chunks(8) {
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn similarity_extremes() {
        let text = t1(&[0.0, 1.0]);
        let p = Tensor::new(vec![3, 2], vec![0.0, 1.0, 1.0, 0.0, 0.0, -1.0]).unwrap();
        assert_eq!(similarity_scores(&p, &text).unwrap().data(), &[1.0, 0.0, -1.0]);
        assert!(similarity_scores(&p, &t1(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn minmax_cases() {
        let n = minmax_normalize(&t1(&[0.2, 0.5, 0.8]));
        for (a, b) in n.data().iter().zip([0.0, 0.5, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(minmax_normalize(&t1(&[0.3, 0.3, 0.3])).data(), &[0.0, 0.0, 0.0]);
        assert_eq!(minmax_normalize(&t1(&[0.7])).data(), &[0.0]);
    }

    #[test]
    fn sharpen_worked_example() {
        let n = minmax_normalize(&t1(&[0.2, 0.5, 0.8]));
        let s = sharpen(&n, &SharpenParams::new(2.0, 0.25).unwrap());
        for (a, b) in s.data().iter().zip([0.0, 0.0625, 0.5625]) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn neutral_parameters_are_identity_but_not_valid_config() {
        // gamma = 1 is outside the accepted range, the kernel itself is still the identity there
        assert!(SharpenParams::new(1.0, 0.0).is_err());
        for x in [0.0, 0.3, 0.77, 1.0] {
            assert_eq!(sharpen_value(x, 1.0, 0.0), x);
        }
        assert!(SharpenParams::new(2.0, 1.0).is_err());
        assert!(SharpenParams::new(2.0, -0.1).is_err());
    }

    #[test]
    fn map_from_single_patch_is_constant() {
        let m = to_guidance_map(&t1(&[0.4]), (1, 1), (5, 3)).unwrap();
        assert!(m.values().data().iter().all(|v| (*v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn map_identity_and_hand_evaluated_upsample() {
        let s = t1(&[0.1, 0.2, 0.3, 0.4]);
        let m = to_guidance_map(&s, (2, 2), (2, 2)).unwrap();
        assert_eq!(m.values().data(), s.data());

        let m = to_guidance_map(&t1(&[0.0, 1.0, 0.0, 1.0]), (2, 2), (2, 4)).unwrap();
        for row in m.values().data().chunks(4) {
            for (a, b) in row.iter().zip([0.0, 0.25, 0.75, 1.0]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        assert!(to_guidance_map(&s, (3, 2), (4, 4)).is_err());
    }

    #[test]
    fn checkerboard_downsamples_to_half() {
        let board = Tensor::from_fn(vec![4, 4], |i| ((i / 4 + i % 4) % 2) as f64).unwrap();
        let g = downsample_guidance(&GuidanceMap::new(board).unwrap(), 0, (2, 2)).unwrap();
        assert!(g.values.data().iter().all(|v| (*v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn degenerate_similarity_gives_zero_map() {
        let p = PatchFeatureSet::new(Tensor::ones(vec![4, 3]).unwrap(), (2, 2), (8, 8)).unwrap();
        let t = TextFeature::new(t1(&[1.0, 2.0, 3.0])).unwrap();
        let out = guidance_from_embeddings(&p, &t, &SharpenParams::default(), (8, 8)).unwrap();
        assert!(out.degenerate);
        assert!(out.map.values().data().iter().all(|v| *v == 0.0));
    }

    fn features(seed: u64, n: usize, c: usize) -> Vec<f64> {
        (0..n * c)
            .map(|i| (((i as u64 + 1) * 2654435761 ^ seed) % 10007) as f64 / 5003.5 - 1.0)
            .collect()
    }

    proptest! {
        #[test]
        fn sharpen_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, g in 1.0001f64..6.0, d in 0.0f64..0.999) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(sharpen_value(lo, g, d) <= sharpen_value(hi, g, d));
            let y = sharpen_value(hi, g, d);
            prop_assert!((0.0..=(1.0 - d).powf(g) + 1e-15).contains(&y));
            if hi <= d {
                prop_assert_eq!(y, 0.0);
            }
        }

        #[test]
        fn larger_delta_or_gamma_never_raises(x in 0.0f64..=1.0, g in 1.0001f64..6.0, d in 0.0f64..0.9, dd in 0.0f64..0.09, dg in 0.0f64..3.0) {
            prop_assert!(sharpen_value(x, g, d + dd) <= sharpen_value(x, g, d));
            prop_assert!(sharpen_value(x, g + dg, d) <= sharpen_value(x, g, d));
        }

        #[test]
        fn pipeline_stays_in_unit_range(seed in any::<u64>(), g in 1.01f64..4.0, d in 0.0f64..0.9) {
            let p = PatchFeatureSet::new(Tensor::new(vec![16, 5], features(seed, 16, 5)).unwrap(), (4, 4), (12, 20)).unwrap();
            let t = TextFeature::new(Tensor::new(vec![5], features(seed ^ 0xabcdef, 1, 5)).unwrap()).unwrap();
            let params = SharpenParams::new(g, d).unwrap();
            if let Ok(out) = guidance_from_embeddings(&p, &t, &params, (12, 20)) {
                prop_assert_eq!(out.map.dims(), (12, 20));
                prop_assert!(out.map.values().data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn positive_power_of_two_rescaling_is_bitwise_invariant(seed in any::<u64>(), e in -20i32..20) {
            let raw = Tensor::new(vec![16, 6], features(seed, 16, 6)).unwrap();
            let t = TextFeature::new(Tensor::new(vec![6], features(seed ^ 99, 1, 6)).unwrap()).unwrap();
            let c = 2f64.powi(e);
            let scaled = raw.map(|x| x * c);
            let a = guidance_from_embeddings(&PatchFeatureSet::new(raw, (4, 4), (16, 16)).unwrap(), &t, &SharpenParams::default(), (16, 16));
            let b = guidance_from_embeddings(&PatchFeatureSet::new(scaled, (4, 4), (16, 16)).unwrap(), &t, &SharpenParams::default(), (16, 16));
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert_eq!(a.map, b.map);
            }
        }

        #[test]
        fn arbitrary_positive_rescaling_matches_to_rounding(seed in any::<u64>(), c in 1e-3f64..1e3) {
            let raw = Tensor::new(vec![16, 6], features(seed, 16, 6)).unwrap();
            let t = TextFeature::new(Tensor::new(vec![6], features(seed ^ 7, 1, 6)).unwrap()).unwrap();
            let scaled = raw.map(|x| x * c);
            let a = guidance_from_embeddings(&PatchFeatureSet::new(raw, (4, 4), (16, 16)).unwrap(), &t, &SharpenParams::default(), (16, 16));
            let b = guidance_from_embeddings(&PatchFeatureSet::new(scaled, (4, 4), (16, 16)).unwrap(), &t, &SharpenParams::default(), (16, 16));
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert!(a.map.values().max_abs_diff(b.map.values()).unwrap() < 1e-12);
            }
        }
    }
}
