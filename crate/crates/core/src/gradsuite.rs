//! Double-precision gradient suite behind `semguide grad-check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{grad_check_report, Tape, Tensor, Var, DEFAULT_EPS};
use crate::error::Result;
use crate::guidance::{GuidanceMap, StageGuidance};
use crate::losses::{align_loss_stage, recon_loss, total_loss, PerceptualExtractor};
use crate::network::{inject_cross_attention, InjectMode, UieNet, UieNetConfig};

pub const TOLERANCE: f64 = 1e-5;
const SUITE_SEED: u64 = 0x6752_4144;

#[derive(Clone, Debug, PartialEq)]
pub struct GradItem {
    pub name: String,
    pub max_relative_error: f64,
    pub norm_relative_error: f64,
    pub coordinates: usize,
}

impl GradItem {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= TOLERANCE
    }
}

struct Inputs {
    rng: ChaCha8Rng,
}

impl Inputs {
    fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| self.rng.random_range(lo..hi)).expect("suite shapes are valid")
    }

    /// Values with magnitude in `[0.1, 0.4]` so kinks at 0 and +-0.5 stay out of reach.
    fn away_from_kinks(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| {
            let m = self.rng.random_range(0.1..0.4);
            if self.rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .expect("suite shapes are valid")
    }
}

/// Reduces `v` to a scalar through a fixed random weighting so every
/// coordinate of the upstream gradient differs.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_fn(tape.shape(v).to_vec(), |_| rng.random_range(-1.0..1.0))?;
    let w = tape.constant(w);
    tape.inner_product(v, w)
}

fn check(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradItem> {
    let r = grad_check_report(f, &inputs, DEFAULT_EPS)?;
    Ok(GradItem { name: name.to_string(), max_relative_error: r.max_relative_error, norm_relative_error: r.norm_relative_error, coordinates: r.coordinates })
}

fn model_item(name: &str, config: UieNetConfig, gen: &mut Inputs) -> Result<GradItem> {
    let net = UieNet::<f64>::init(config)?;
    let guidance = GuidanceMap::new(gen.uniform(&[8, 8], 0.0, 1.0))?;
    let extractor = PerceptualExtractor::<f64>::default();
    let stages = net.config().decoder_stages();
    let mut inputs: Vec<Tensor<f64>> = net.params().iter().map(|p| p.value.clone()).collect();
    let clean = gen.uniform(&[3, 8, 8], 0.0, 1.0);
    inputs.push(gen.uniform(&[3, 8, 8], 0.0, 1.0));
    let n = net.params().len();
    check(name, inputs, |t, v| {
        let trace = net.forward(t, &v[..n], v[n], &guidance, &stages)?;
        let gt = t.constant(clean.clone());
        let recon = recon_loss(t, trace.enhanced, gt, &extractor, 0.1)?;
        let aligns = trace
            .stage_features
            .iter()
            .zip(&trace.stage_guidance)
            .map(|((_, f), g)| align_loss_stage(t, *f, g, 1.0))
            .collect::<Result<Vec<_>>>()?;
        total_loss(t, recon, &aligns, 0.1)
    })
}

/// Runs every item. Deterministic: inputs come from a fixed internal seed.
pub fn run_grad_suite() -> Result<Vec<GradItem>> {
    let mut g = Inputs { rng: ChaCha8Rng::seed_from_u64(SUITE_SEED) };
    let mut items = Vec::new();

    items.push(check(
        "add sub mul",
        vec![g.uniform(&[2, 3, 4], -1.0, 1.0), g.uniform(&[2, 3, 4], -1.0, 1.0), g.uniform(&[3, 4], -1.0, 1.0), g.uniform(&[1], -1.0, 1.0)],
        |t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(v[0], v[1])?;
            let p = t.mul(s, d)?;
            let p = t.mul(p, v[2])?;
            let p = t.mul(p, v[3])?;
            project(t, p, 1)
        },
    )?);
    items.push(check("scale add_scalar exp sigmoid", vec![g.uniform(&[5, 4], -2.0, 2.0)], |t, v| {
        let a = t.scale(v[0], 0.7);
        let a = t.add_scalar(a, -0.3);
        let e = t.exp(a);
        let s = t.sigmoid(e);
        project(t, s, 2)
    })?);
    items.push(check("pow", vec![g.uniform(&[4, 4], 0.2, 2.0)], |t, v| {
        let p = t.pow(v[0], 2.5)?;
        project(t, p, 3)
    })?);
    items.push(check("relu leaky_relu clamp", vec![g.away_from_kinks(&[6, 5])], |t, v| {
        let a = t.relu(v[0]);
        let b = t.leaky_relu(v[0], 0.2);
        let c = t.clamp(v[0], -0.5, 0.5);
        let s = t.add(a, b)?;
        let s = t.add(s, c)?;
        project(t, s, 4)
    })?);
    items.push(check("matmul transpose", vec![g.uniform(&[3, 5], -1.0, 1.0), g.uniform(&[4, 5], -1.0, 1.0)], |t, v| {
        let bt = t.transpose(v[1])?;
        let m = t.matmul(v[0], bt)?;
        project(t, m, 5)
    })?);
    items.push(check("reshape concat", vec![g.uniform(&[2, 3, 4], -1.0, 1.0), g.uniform(&[3, 12], -1.0, 1.0)], |t, v| {
        let b = t.reshape(v[1], &[3, 3, 4])?;
        let c = t.concat(v[0], b)?;
        project(t, c, 6)
    })?);
    items.push(check(
        "conv2d",
        vec![g.uniform(&[3, 6, 5], -1.0, 1.0), g.uniform(&[4, 3, 3, 3], -0.5, 0.5), g.uniform(&[4], -0.5, 0.5)],
        |t, v| {
            let y = t.conv2d(v[0], v[1], v[2])?;
            project(t, y, 7)
        },
    )?);
    items.push(check("avg_pool2", vec![g.uniform(&[2, 6, 8], -1.0, 1.0)], |t, v| {
        let y = t.avg_pool2(v[0])?;
        project(t, y, 8)
    })?);
    items.push(check("resize_bilinear", vec![g.uniform(&[2, 3, 5], -1.0, 1.0)], |t, v| {
        let up = t.resize_bilinear(v[0], 7, 8)?;
        let down = t.resize_bilinear(up, 2, 3)?;
        let a = project(t, up, 9)?;
        let b = project(t, down, 10)?;
        t.add(a, b)
    })?);
    items.push(check(
        "attention",
        vec![g.uniform(&[70, 3], -1.5, 1.5), g.uniform(&[9, 3], -1.5, 1.5), g.uniform(&[9, 2], -1.0, 1.0)],
        |t, v| {
            let a = t.attention(v[0], v[1], v[2])?;
            project(t, a, 13)
        },
    )?);
    items.push(check("softmax_rows", vec![g.uniform(&[4, 6], -2.0, 2.0)], |t, v| {
        let s = t.softmax_rows(v[0])?;
        project(t, s, 11)
    })?);
    items.push(check(
        "sum mean l1_distance sq_frobenius inner_product",
        vec![g.uniform(&[3, 4], -1.0, 1.0), g.uniform(&[3, 4], -1.0, 1.0)],
        |t, v| {
            // inputs are independent draws, so |a - b| stays clear of its kink
            let terms = [t.sum(v[0]), t.mean(v[1]), t.l1_distance(v[0], v[1])?, t.sq_frobenius(v[0]), t.inner_product(v[0], v[1])?];
            let mut acc = terms[0];
            for (k, x) in terms[1..].iter().enumerate() {
                let x = t.scale(*x, 1.0 + k as f64 * 0.25);
                acc = t.add(acc, x)?;
            }
            Ok(acc)
        },
    )?);

    let (c, h, w) = (4, 3, 3);
    let guide = g.uniform(&[h, w], 0.0, 1.0);
    items.push(check(
        "inject_cross_attention",
        vec![
            g.uniform(&[c, h, w], -1.0, 1.0),
            g.uniform(&[c, h, w], -1.0, 1.0),
            g.uniform(&[c, c], -1.0, 1.0),
            g.uniform(&[c, c], -1.0, 1.0),
            g.uniform(&[c, c], -1.0, 1.0),
        ],
        |t, v| {
            let m = t.constant(guide.clone());
            let att = inject_cross_attention(t, v[0], v[1], Some(m), (v[2], v[3], v[4]))?;
            project(t, att, 12)
        },
    )?);

    let stage = StageGuidance { stage: 0, values: g.uniform(&[4, 5], 0.0, 1.0) };
    items.push(check("align_loss_stage", vec![g.uniform(&[3, 4, 5], -1.0, 1.0)], |t, v| {
        align_loss_stage(t, v[0], &stage, 1.0)
    })?);

    let extractor = PerceptualExtractor::<f64>::default();
    let reference = g.uniform(&[3, 8, 8], 0.0, 1.0);
    items.push(check("recon_loss", vec![g.uniform(&[3, 8, 8], 0.0, 1.0)], |t, v| {
        let r = t.constant(reference.clone());
        recon_loss(t, v[0], r, &extractor, 0.1)
    })?);
    items.push(check(
        "total_loss",
        vec![g.uniform(&[1], 0.0, 1.0), g.uniform(&[1], -1.0, 1.0), g.uniform(&[1], -1.0, 1.0)],
        |t, v| {
            let r = t.reshape(v[0], &[])?;
            let a = t.reshape(v[1], &[])?;
            let b = t.reshape(v[2], &[])?;
            total_loss(t, r, &[a, b], 0.1)
        },
    )?);

    for (mode, levels) in [(InjectMode::DecoderOnly, 2), (InjectMode::All, 3), (InjectMode::EncoderOnly, 2), (InjectMode::None, 2)] {
        let cfg = UieNetConfig { levels, base_channels: 4, inject_mode: mode, seed: 3, ..Default::default() };
        items.push(model_item(&format!("full model {mode} levels={levels} 8x8"), cfg, &mut g)?);
    }
    Ok(items)
}
