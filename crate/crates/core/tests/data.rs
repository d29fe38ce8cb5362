use proptest::prelude::*;
use semguide::data::dataset::gen_sample;
use semguide::data::scene::MIN_OBJECT_FRACTION;
use semguide::data::{degrade, degrade_at_depth, gen_scene, DatasetSpec, DegradationParams, SceneSpec, Split};
use semguide::Tensor64;

fn in_unit_range(t: &Tensor64) -> bool {
    t.data().iter().all(|v| (0.0..=1.0).contains(v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scenes_hold_their_invariants(seed in any::<u64>(), count in 1usize..=3, h in 16usize..80, w in 16usize..80) {
        let scene = gen_scene::<f64>(&SceneSpec::new(seed, (h, w), count).unwrap()).unwrap();
        prop_assert_eq!(scene.objects.len(), count);
        prop_assert!(in_unit_range(&scene.clean));
        prop_assert!(scene.mask.data().iter().all(|v| *v == 0.0 || *v == 1.0));
        let area: f64 = scene.mask.data().iter().sum();
        prop_assert!(area >= MIN_OBJECT_FRACTION * (h * w) as f64);
        for o in &scene.objects {
            prop_assert!(o.center.0 - o.size.0 / 2.0 >= -1e-9 && o.center.0 + o.size.0 / 2.0 <= h as f64 + 1e-9);
            prop_assert!(o.center.1 - o.size.1 / 2.0 >= -1e-9 && o.center.1 + o.size.1 / 2.0 <= w as f64 + 1e-9);
        }
        // every masked pixel carries the colour of one of the objects
        let plane = h * w;
        for i in (0..plane).filter(|i| scene.mask.data()[*i] == 1.0) {
            let rgb = [0, 1, 2].map(|c| scene.clean.data()[c * plane + i]);
            prop_assert!(scene.objects.iter().any(|o| (0..3).all(|c| (o.color[c] - rgb[c]).abs() < 1e-12)));
        }
    }

    #[test]
    fn degradation_stays_in_range(seed in any::<u64>()) {
        let scene = gen_scene::<f64>(&SceneSpec::new(seed, (24, 24), 1).unwrap()).unwrap();
        let out = degrade(&scene.clean, &DegradationParams::default(), seed ^ 1).unwrap();
        prop_assert_eq!(out.shape(), scene.clean.shape());
        prop_assert!(in_unit_range(&out));
        prop_assert_eq!(out, degrade(&scene.clean, &DegradationParams::default(), seed ^ 1).unwrap());
    }

    #[test]
    fn deeper_water_approaches_backscatter(v in 0.0f64..=1.0, d in 0.0f64..3.0, step in 0.01f64..2.0) {
        let p = DegradationParams { noise_sigma: 0.0, ..Default::default() };
        let img = Tensor64::full(vec![3, 2, 2], v).unwrap();
        let near = degrade_at_depth(&img, &p, d, 0).unwrap();
        let far = degrade_at_depth(&img, &p, d + step, 0).unwrap();
        for c in 0..3 {
            let b = p.backscatter[c];
            prop_assert!((far.data()[c * 4] - b).abs() <= (near.data()[c * 4] - b).abs() + 1e-15);
        }
    }
}

#[test]
fn red_fades_first_on_white() {
    let p = DegradationParams { noise_sigma: 0.0, ..Default::default() };
    let white = Tensor64::ones(vec![3, 1, 1]).unwrap();
    for d in [0.5, 1.0, 2.5] {
        let out = degrade_at_depth(&white, &p, d, 0).unwrap();
        let [r, g, b] = [0, 1, 2].map(|c| out.data()[c]);
        assert!(r < g && r < b, "depth {d}: {r} {g} {b}");
    }
}

#[test]
fn samples_are_deterministic_and_consistent() {
    let spec = DatasetSpec { image_size: 32, ..Default::default() };
    let a = gen_sample::<f64>(&spec, "s".into(), 42, Split::Train).unwrap();
    let b = gen_sample::<f64>(&spec, "s".into(), 42, Split::Train).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, gen_sample::<f64>(&spec, "s".into(), 43, Split::Train).unwrap());
    assert_eq!(a.mask.shape(), &[32, 32]);
    assert_eq!(a.degraded.shape(), a.clean.shape());
    assert_eq!((a.patches.source_h, a.patches.source_w), (32, 32));
    assert_eq!(a.patches.features.shape()[0], a.patches.grid_h * a.patches.grid_w);
    assert!(!a.record.caption.is_empty());
}
