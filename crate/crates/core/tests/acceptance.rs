//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines reach stdout directly; a FAIL is reported, not
//! raised. Criteria 5 to 7 train fifteen models and take a while.

#[path = "common/mod.rs"]
mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use semguide::checkpoint::Checkpoint;
use semguide::cli::RunConfig;
use semguide::data::image_io::{decode_pgm, decode_ppm, encode_pgm, encode_ppm};
use semguide::data::{generate_dataset, load_dataset, sgef};
use semguide::diffcore::sgtr;
use semguide::gradsuite::{run_grad_suite, TOLERANCE};
use semguide::guidance::{PatchFeatureSet, StageGuidance, TextFeature};
use semguide::losses::align_loss_stage;
use semguide::metrics::{psnr, ssim};
use semguide::network::{cross_attention_weights, inject_cross_attention, InjectMode, UieNet};
use semguide::train::{ablate, feature_focus_ratio, prepare, split, train_from, AblationRow};
use semguide::{Error, Result, Tape64, Tensor32, Tensor64};

const SEEDS: [u64; 3] = [0, 1, 2];
/// Skips the training criteria when set.
const QUICK_ENV: &str = "SEMGUIDE_ACCEPTANCE_QUICK";

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn report(n: usize, v: Result<Verdict>) -> bool {
    let v = v.unwrap_or_else(|e| verdict(false, format!("error: {e}")));
    println!("{} criterion {n}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    v.pass
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor64 {
    Tensor64::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi)).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn c1_gradients() -> Result<Verdict> {
    let start = Instant::now();
    let items = run_grad_suite()?;
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<_> = items.iter().filter(|i| !i.passed()).collect();
    let worst = items.iter().max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error)).unwrap();
    let worst_norm = items.iter().map(|i| i.norm_relative_error).fold(0.0, f64::max);
    let mut detail = format!(
        "{} items, {} above {TOLERANCE:e}; worst per-coordinate {:.3e} ({}); worst whole-vector {:.3e}; {secs:.1}s",
        items.len(),
        failed.len(),
        worst.max_relative_error,
        worst.name,
        worst_norm
    );
    if !failed.is_empty() {
        let names: Vec<&str> = failed.iter().map(|i| i.name.as_str()).collect();
        detail.push_str(&format!("; failing: {}", names.join(", ")));
    }
    Ok(verdict(failed.is_empty() && secs <= 120.0, detail))
}

fn c2_sharpen_oracle() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5348_4152);
    let mut worst = 0.0f64;
    for k in 0..10 {
        let gamma = 4.0 - rng.random_range(0.0..3.0);
        let delta = rng.random_range(0.0..0.5);
        worst = worst.max(common::sharpen_gap(1000 + k, 1000, gamma, delta));
    }
    Ok(verdict(worst <= 1e-12, format!("10 settings x 1000 vectors, max gap {worst:.3e}")))
}

fn attend(d: &Tensor64, e: &Tensor64, m: Option<&Tensor64>, w: &[Tensor64; 3]) -> Result<Tensor64> {
    let mut tape = Tape64::new();
    let (d, e) = (tape.constant(d.clone()), tape.constant(e.clone()));
    let m = m.map(|m| tape.constant(m.clone()));
    let [q, k, v] = w.clone().map(|w| tape.constant(w));
    let out = inject_cross_attention(&mut tape, d, e, m, (q, k, v))?;
    Ok(tape.value(out).clone())
}

fn c3_attention_identities() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4154_544e);
    let (mut ones_gap, mut zero_max, mut row_gap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let (c, h, w) = (rng.random_range(1..7), rng.random_range(1..7), rng.random_range(1..7));
        let gain = rng.random_range(0.1..20.0);
        let d = random(&mut rng, &[c, h, w], -gain, gain);
        let e = random(&mut rng, &[c, h, w], -gain, gain);
        let ws = [(); 3].map(|_| random(&mut rng, &[c, c], -1.0, 1.0));
        let plain = attend(&d, &e, None, &ws)?;
        let ones = attend(&d, &e, Some(&Tensor64::ones(vec![h, w])?), &ws)?;
        ones_gap = ones_gap.max(plain.max_abs_diff(&ones)?);
        let zero = attend(&d, &e, Some(&Tensor64::zeros(vec![h, w])?), &ws)?;
        zero_max = zero_max.max(zero.data().iter().fold(0.0, |m, v| m.max(v.abs())));
        let m = random(&mut rng, &[h, w], 0.0, 1.0);
        let p = cross_attention_weights(&d, &e, Some(&m), (&ws[0], &ws[1], &ws[2]))?;
        let n = h * w;
        for r in 0..n {
            let s: f64 = p.data()[r * n..(r + 1) * n].iter().sum();
            row_gap = row_gap.max((s - 1.0).abs());
        }
    }
    Ok(verdict(
        ones_gap <= 1e-6 && zero_max == 0.0 && row_gap <= 1e-6,
        format!("200 cases: m=1 gap {ones_gap:.3e}, m=0 max |out| {zero_max:e}, row-sum gap {row_gap:.3e}"),
    ))
}

fn c4_align_identities() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0041_4c4e);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (c, h, w) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..9));
        let eta = rng.random_range(0.0..3.0);
        let f = random(&mut rng, &[c, h, w], -2.0, 2.0);
        let n = f.numel() as f64;
        let mean_f = f.data().iter().sum::<f64>() / n;
        let mean_f2 = f.data().iter().map(|x| x * x).sum::<f64>() / n;
        for (m, want) in [(Tensor64::ones(vec![h, w])?, -eta * mean_f), (Tensor64::zeros(vec![h, w])?, mean_f2)] {
            let mut tape = Tape64::new();
            let fv = tape.constant(f.clone());
            let l = align_loss_stage(&mut tape, fv, &StageGuidance { stage: 0, values: m }, eta)?;
            worst = worst.max((tape.value(l).item()? - want).abs());
        }
    }
    Ok(verdict(worst <= 1e-12, format!("200 cases, max gap {worst:.3e}")))
}

struct SeedRun {
    rows: Vec<AblationRow<f32>>,
    focus_aligned: f64,
    focus_plain: f64,
    data_secs: f64,
}

fn train_seed(seed: u64) -> Result<SeedRun> {
    let cfg = RunConfig { seed, ..RunConfig::default() };
    let dir = tempfile::tempdir().map_err(|source| Error::Io { path: "<tempdir>".into(), source })?;
    let start = Instant::now();
    generate_dataset(&cfg.dataset_spec(), dir.path())?;
    let samples = load_dataset::<f32>(dir.path())?;
    let (train_set, val) = split(prepare(&samples, &cfg.sharpen()?)?);
    let data_secs = start.elapsed().as_secs_f64();
    let tc = cfg.train_config();
    let rows = ablate(&tc, &train_set, &val, |mode, e| eprintln!("seed {seed} {mode}\t{e}"))?;

    let mut plain = tc.clone();
    plain.net.inject_mode = InjectMode::DecoderOnly;
    plain.weights.lambda_align = 0.0;
    let init = UieNet::<f32>::init(tc.net.clone())?.with_mode(InjectMode::DecoderOnly);
    let no_align = train_from(init, &plain, &train_set, &val, |e| eprintln!("seed {seed} decoder_only lambda_align=0\t{e}"))?;
    let stages = tc.stages();
    let aligned = &rows.iter().find(|r| r.mode == InjectMode::DecoderOnly).expect("four modes").net;
    Ok(SeedRun {
        focus_aligned: feature_focus_ratio(aligned, &val, &stages)?,
        focus_plain: feature_focus_ratio(&no_align.net, &val, &stages)?,
        rows,
        data_secs,
    })
}

fn row(run: &SeedRun, mode: InjectMode) -> &AblationRow<f32> {
    run.rows.iter().find(|r| r.mode == mode).expect("four modes")
}

fn c5_directional(runs: &[SeedRun]) -> Result<Verdict> {
    let region = |m| median(runs.iter().map(|r| row(r, m).report.region_psnr_db.unwrap_or(f64::NAN)).collect());
    let whole = |m| median(runs.iter().map(|r| row(r, m).report.psnr_db).collect());
    let (rd, rn) = (region(InjectMode::DecoderOnly), region(InjectMode::None));
    let (wd, wn) = (whole(InjectMode::DecoderOnly), whole(InjectMode::None));
    let spent: Duration = runs
        .iter()
        .map(|r| row(r, InjectMode::DecoderOnly).elapsed + row(r, InjectMode::None).elapsed + Duration::from_secs_f64(r.data_secs))
        .sum();
    let mins = spent.as_secs_f64() / 60.0;
    Ok(verdict(
        rd >= rn + 0.3 && wd >= wn - 0.5 && mins <= 20.0,
        format!(
            "median region psnr decoder_only {rd:.3} vs none {rn:.3} (delta {:+.3} dB); median psnr {wd:.3} vs {wn:.3} (delta {:+.3} dB); {mins:.1} min",
            rd - rn,
            wd - wn
        ),
    ))
}

fn c6_focus(runs: &[SeedRun]) -> Result<Verdict> {
    let wins = runs.iter().filter(|r| r.focus_aligned > r.focus_plain).count();
    let pairs: Vec<String> = runs.iter().map(|r| format!("{:.4}/{:.4}", r.focus_aligned, r.focus_plain)).collect();
    Ok(verdict(wins >= 2, format!("ratio with/without alignment per seed {}; {wins} of 3 larger", pairs.join(" "))))
}

fn c7_ablation(runs: &[SeedRun]) -> Result<Verdict> {
    let structural = runs.iter().all(|r| {
        let modes: Vec<InjectMode> = r.rows.iter().map(|x| x.mode).collect();
        modes == InjectMode::ALL_MODES && r.rows.iter().all(|x| x.init_checksum == r.rows[0].init_checksum)
    });
    let region = |m| median(runs.iter().map(|r| row(r, m).report.region_psnr_db.unwrap_or(f64::NAN)).collect());
    let medians: Vec<String> = InjectMode::ALL_MODES.iter().map(|m| format!("{m} {:.3}", region(*m))).collect();
    let (d, n) = (region(InjectMode::DecoderOnly), region(InjectMode::None));
    Ok(verdict(
        structural && d >= n,
        format!("four modes from one init per seed: {structural}; median region psnr {}", medians.join(", ")),
    ))
}

fn c8_fixture() -> Result<Verdict> {
    let mask = common::centered_square(64, 32);
    let means: Vec<(f64, f64)> = (0..20).map(|s| common::fixture_means(&mask, 0.05, 2.0, 0.2, s)).collect();
    let min_in = means.iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
    let max_out = means.iter().map(|m| m.1).fold(0.0, f64::max);
    Ok(verdict(
        min_in >= 0.5 && max_out <= 0.1,
        format!("32x32 object on 64x64, 20 seeds: min in-mask mean {min_in:.4}, max out-of-mask mean {max_out:.4}"),
    ))
}

fn raw_floats(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| f32::from_bits(rng.random())).collect()
}

fn bits(t: &Tensor32) -> Vec<u32> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

fn scramble(rng: &mut ChaCha8Rng, buf: &mut Vec<u8>) {
    match rng.random_range(0..3) {
        0 => buf.truncate(rng.random_range(0..buf.len())),
        1 => buf.extend((0..rng.random_range(1..9)).map(|_| rng.random::<u8>())),
        _ => {
            for _ in 0..rng.random_range(1..6) {
                let i = rng.random_range(0..buf.len());
                buf[i] = rng.random();
            }
        }
    }
}

fn c9_formats() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0046_4d54);
    let mut round_trip_ok = true;
    let mut cases = Vec::new();
    for _ in 0..1000 {
        let (gh, gw, c) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..9));
        let feats = Tensor32::new(vec![gh * gw, c], raw_floats(&mut rng, gh * gw * c))?;
        let p = PatchFeatureSet::new(feats, (gh, gw), (rng.random_range(1..99), rng.random_range(1..99)))?;
        let t = TextFeature::new(Tensor32::new(vec![c], raw_floats(&mut rng, c))?)?;
        let buf = sgef::encode(&p, &t, "two fish")?;
        let back = sgef::decode(&buf)?;
        round_trip_ok &= bits(&back.patches.features) == bits(&p.features) && bits(&back.text.vec) == bits(&t.vec);

        let shape: Vec<usize> = (0..rng.random_range(0..4)).map(|_| rng.random_range(1..5)).collect();
        let n = shape.iter().product();
        let map = Tensor32::new(shape, raw_floats(&mut rng, n))?;
        let enc = sgtr::encode(&map);
        let back = sgtr::decode(&enc)?;
        round_trip_ok &= back.shape() == map.shape() && bits(&back) == bits(&map);
        cases.push((buf, enc));
    }

    let mut ckpt = Checkpoint::new(3);
    ckpt.push_config("levels", 2);
    ckpt.push_tensor("w", &Tensor32::ones(vec![2, 3])?);
    let ckpt_buf = ckpt.encode();
    let (mut crashes, mut unstructured) = (0, 0);
    for (a, b) in &mut cases {
        let mut c = ckpt_buf.clone();
        scramble(&mut rng, a);
        scramble(&mut rng, b);
        scramble(&mut rng, &mut c);
        let outcome = std::panic::catch_unwind(|| [sgef::decode(a).err(), sgtr::decode(b).err(), Checkpoint::decode(&c).err()]);
        match outcome {
            Err(_) => crashes += 1,
            Ok(errs) => unstructured += errs.iter().flatten().filter(|e| !matches!(e, Error::Format { .. })).count(),
        }
    }

    let mut worst_q = 0.0f64;
    for _ in 0..200 {
        let (h, w) = (rng.random_range(1..16), rng.random_range(1..16));
        let img = random(&mut rng, &[3, h, w], 0.0, 1.0);
        let back: Tensor64 = decode_ppm(&encode_ppm(&img)?)?;
        worst_q = worst_q.max(back.max_abs_diff(&img)?);
        let gray = random(&mut rng, &[h, w], 0.0, 1.0);
        let back: Tensor64 = decode_pgm(&encode_pgm(&gray)?)?;
        worst_q = worst_q.max(back.max_abs_diff(&gray)?);
    }
    Ok(verdict(
        round_trip_ok && crashes == 0 && unstructured == 0 && worst_q <= 1.0 / 510.0 + 1e-12,
        format!(
            "bitwise round trips {round_trip_ok}; 1000 corrupted triples: {crashes} crashes, {unstructured} non-format errors; max quantization error {worst_q:.6} (limit {:.6})",
            1.0 / 510.0
        ),
    ))
}

fn c10_metrics() -> Result<Verdict> {
    let mut self_gap = 0.0f64;
    let mut cap = true;
    let mut monotone = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[3, 32, 32], 0.0, 1.0);
        self_gap = self_gap.max((ssim(&x, &x)? - 1.0).abs());
        cap &= psnr(&x, &x)? == 100.0;
        let levels: Vec<f64> = [0.01, 0.05, 0.1]
            .iter()
            .map(|s| {
                let noise = Normal::new(0.0, *s).unwrap();
                let mut y = x.clone();
                for v in y.data_mut() {
                    *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
                }
                psnr(&x, &y)
            })
            .collect::<Result<_>>()?;
        monotone += usize::from(levels[0] > levels[1] && levels[1] > levels[2]);
    }
    Ok(verdict(
        self_gap <= 1e-9 && cap && monotone == 20,
        format!("ssim(x,x) gap {self_gap:.3e}; psnr(x,x) = 100: {cap}; monotone in noise for {monotone}/20 seeds"),
    ))
}

fn main() {
    let mut passed = 0;
    passed += usize::from(report(1, c1_gradients()));
    passed += usize::from(report(2, c2_sharpen_oracle()));
    passed += usize::from(report(3, c3_attention_identities()));
    passed += usize::from(report(4, c4_align_identities()));

    if std::env::var_os(QUICK_ENV).is_some() {
        for n in 5..=7 {
            println!("SKIP criterion {n}: {QUICK_ENV} is set");
        }
    } else {
        match SEEDS.iter().map(|s| train_seed(*s)).collect::<Result<Vec<SeedRun>>>() {
        Ok(runs) => {
            passed += usize::from(report(5, c5_directional(&runs)));
            passed += usize::from(report(6, c6_focus(&runs)));
            passed += usize::from(report(7, c7_ablation(&runs)));
        }
        Err(e) => {
            for n in 5..=7 {
                passed += usize::from(report(n, Ok(verdict(false, format!("training failed: {e}")))));
            }
        }
        }
    }

    passed += usize::from(report(8, c8_fixture()));
    passed += usize::from(report(9, c9_formats()));
    passed += usize::from(report(10, c10_metrics()));
    println!("{passed}/10 criteria passed");
}
