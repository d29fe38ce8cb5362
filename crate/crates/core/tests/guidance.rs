mod common;

use common::{centered_square, fixture_means, sharpen_gap};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semguide::data::{gen_fixture_embeddings, gen_scene, FixtureParams, SceneSpec};
use semguide::guidance::{downsample_guidance, guidance_from_embeddings, l2_normalize, similarity_scores, SharpenParams};
use semguide::Tensor64;

#[test]
fn vectorized_sharpen_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for k in 0..10 {
        // gamma in (1, 4], delta in [0, 0.5)
        let gamma = 4.0 - 3.0 * rng.random::<f64>();
        let delta = 0.5 * rng.random::<f64>();
        let gap = sharpen_gap(k, 1000, gamma, delta);
        assert!(gap <= 1e-12, "gamma {gamma} delta {delta}: {gap}");
    }
}

#[test]
fn oracle_agrees_on_the_worked_example() {
    let got = common::sharpen_oracle(&[0.2, 0.5, 0.8], 2.0, 0.25);
    let want = [0.0, 0.0625, 0.5625];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-15);
    }
}

#[test]
fn centered_fixture_separates_object_from_background() {
    // squares aligned to the 8x8 patch grid, 4x4 and 6x6 cells
    for side in [32, 48] {
        for seed in 0..20 {
            let mask = centered_square(64, side);
            let (inside, outside) = fixture_means(&mask, 0.05, 2.0, 0.2, seed);
            assert!(inside >= 0.5, "side {side} seed {seed}: inside {inside}");
            assert!(outside <= 0.1, "side {side} seed {seed}: outside {outside}");
        }
    }
}

#[test]
fn in_mask_mean_is_capped_by_the_sharpening_ceiling() {
    // (1 - delta)^gamma bounds every map value; bilinear edges pull the mean lower
    let mask = centered_square(64, 32);
    for seed in 0..5 {
        let (inside, _) = fixture_means(&mask, 0.0, 2.0, 0.2, seed);
        assert!(inside <= 0.64 + 1e-12);
    }
}

#[test]
fn heavier_fixture_noise_keeps_background_dark() {
    let mask = centered_square(64, 32);
    for seed in 0..20 {
        let (inside, outside) = fixture_means(&mask, 0.1, 2.0, 0.2, seed);
        assert!(outside <= 0.1, "seed {seed}: {outside}");
        assert!(inside >= 10.0 * outside, "seed {seed}: {inside} vs {outside}");
    }
}

#[test]
fn scene_fixture_guidance_favours_objects() {
    for seed in 0..30u64 {
        let scene = gen_scene::<f64>(&SceneSpec::new(seed, (64, 64), 1 + (seed % 3) as usize).unwrap()).unwrap();
        let (inside, outside) = fixture_means(&scene.mask, 0.05, 2.0, 0.2, seed);
        assert!(inside > outside, "seed {seed}: {inside} vs {outside}");
    }
}

fn random_embeddings(seed: u64, scale: f64) -> (Tensor64, Tensor64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Tensor64::from_fn(vec![16, 6], |_| scale * rng.random_range(-1.0..1.0)).unwrap();
    let t = Tensor64::from_fn(vec![6], |_| rng.random_range(-1.0..1.0)).unwrap();
    (p, t)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_are_cosines(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let (p, t) = random_embeddings(seed, scale);
        let s = similarity_scores(&l2_normalize(&p).unwrap(), &l2_normalize(&t).unwrap()).unwrap();
        prop_assert!(s.data().iter().all(|x| (-1.0 - 1e-12..=1.0 + 1e-12).contains(x)));
    }

    #[test]
    fn stage_maps_stay_within_source_range(seed in any::<u64>(), g in 1.01f64..4.0, d in 0.0f64..0.5, stage in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = Tensor64::from_fn(vec![32, 32], |_| f64::from(rng.random::<f64>() < 0.3)).unwrap();
        let (patches, text) = gen_fixture_embeddings(&mask, &FixtureParams::default(), seed).unwrap();
        let map = guidance_from_embeddings(&patches, &text, &SharpenParams::new(g, d).unwrap(), (32, 32)).unwrap().map;
        let (lo, hi) = (map.values().min(), map.values().max());
        let side = 32 >> stage;
        let s = downsample_guidance(&map, stage, (side, side)).unwrap();
        prop_assert_eq!(s.values.shape(), &[side, side]);
        prop_assert!(s.values.data().iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
    }
}
