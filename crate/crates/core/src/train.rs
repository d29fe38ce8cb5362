//! Training, evaluation and the injection-mode ablation.

use std::fmt;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Sample, Split};
use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::guidance::{downsample_guidance, guidance_from_embeddings, GuidanceMap, SharpenParams};
use crate::losses::{align_loss_stage, recon_loss, total_loss, LossWeights, PerceptualExtractor};
use crate::metrics::{MetricReport, MetricRow};
use crate::network::{InjectMode, UieNet, UieNetConfig};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;

pub const THREADS_ENV: &str = "SEMGUIDE_THREADS";
const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4521;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub net: UieNetConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// Decoder stages that receive the alignment loss. `None` means all.
    pub loss_stages: Option<Vec<usize>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: UieNetConfig::default(),
            epochs: 5,
            batch_size: 4,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            loss_stages: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.adam.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if let Some(bad) = self.stages().iter().find(|s| **s + 1 >= self.net.levels) {
            return Err(Error::Config(format!("loss stage {bad} is not a decoder stage for {} levels", self.net.levels)));
        }
        Ok(())
    }

    pub fn stages(&self) -> Vec<usize> {
        self.loss_stages.clone().unwrap_or_else(|| self.net.decoder_stages())
    }
}

/// A sample with its guidance map computed once up front.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub id: String,
    pub split: Split,
    pub degraded: Tensor<T>,
    pub clean: Tensor<T>,
    pub mask: Tensor<T>,
    pub guidance: GuidanceMap<T>,
    pub degenerate: bool,
}

pub fn prepare<T: Scalar>(samples: &[Sample<T>], sharpen: &SharpenParams) -> Result<Vec<Prepared<T>>> {
    samples
        .iter()
        .map(|s| {
            let (h, w) = s.clean.hw()?;
            let g = guidance_from_embeddings(&s.patches, &s.text, sharpen, (h, w))?;
            Ok(Prepared {
                id: s.record.id.clone(),
                split: s.record.split,
                degraded: s.degraded.clone(),
                clean: s.clean.clone(),
                mask: s.mask.clone(),
                guidance: g.map,
                degenerate: g.degenerate,
            })
        })
        .collect()
}

/// Splits prepared samples into `(train, val)`.
pub fn split<T: Clone>(samples: Vec<Prepared<T>>) -> (Vec<Prepared<T>>, Vec<Prepared<T>>) {
    samples.into_iter().partition(|s| s.split == Split::Train)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub align: f64,
    /// `NaN` when there is no validation split.
    pub val_psnr: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:.6}\t{:.6}\t{:.6}\t{:.4}", self.epoch, self.total, self.recon, self.align, self.val_psnr)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub net: UieNet<T>,
    pub log: Vec<EpochLog>,
}

struct StepLoss {
    total: f64,
    recon: f64,
    align: f64,
}

fn sample_gradients<T: Scalar>(
    net: &UieNet<T>,
    cfg: &TrainConfig,
    stages: &[usize],
    extractor: &PerceptualExtractor<T>,
    sample: &Prepared<T>,
) -> Result<(Vec<Tensor<T>>, StepLoss)> {
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, true);
    let x = tape.constant(sample.degraded.clone());
    let gt = tape.constant(sample.clean.clone());
    let trace = net.forward(&mut tape, &params, x, &sample.guidance, stages)?;
    let recon = recon_loss(&mut tape, trace.enhanced, gt, extractor, T::lit(cfg.weights.lambda_percep))?;
    let mut aligns = Vec::new();
    for sg in &trace.stage_guidance {
        let (_, f) = trace
            .stage_features
            .iter()
            .find(|(l, _)| *l == sg.stage)
            .expect("stage guidance pairs with a stage feature");
        aligns.push(align_loss_stage(&mut tape, *f, sg, T::lit(cfg.weights.eta))?);
    }
    let total = total_loss(&mut tape, recon, &aligns, T::lit(cfg.weights.lambda_align))?;
    let mut grads = tape.backward(total)?;
    let value = |v| tape.value(v).item().ok().and_then(|x| x.to_f64()).unwrap_or(f64::NAN);
    let loss = StepLoss {
        total: value(total),
        recon: value(recon),
        align: aligns.iter().map(|a| value(*a)).sum(),
    };
    let g = params
        .iter()
        .zip(net.params())
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| p.value.map(|_| T::zero())))
        .collect();
    Ok((g, loss))
}

/// Trains from `net`'s current weights. `on_epoch` sees each log line as it
/// is produced.
pub fn train_from<T: Scalar>(
    mut net: UieNet<T>,
    cfg: &TrainConfig,
    train: &[Prepared<T>],
    val: &[Prepared<T>],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Usage("training split is empty".into()));
    }
    let stages = cfg.stages();
    let extractor = PerceptualExtractor::<T>::default();
    let values: Vec<Tensor<T>> = net.params().iter().map(|p| p.value.clone()).collect();
    let mut adam = Adam::new(cfg.adam, &values)?;
    let mut rng = ChaCha8Rng::seed_from_u64(net.config().seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut recon, mut align) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Tensor<T>>> = None;
            for &i in batch {
                let (g, loss) = sample_gradients(&net, cfg, &stages, &extractor, &train[i])?;
                total += loss.total;
                recon += loss.recon;
                align += loss.align;
                acc = Some(match acc {
                    None => g,
                    Some(mut a) => {
                        for (a, g) in a.iter_mut().zip(&g) {
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += *y);
                        }
                        a
                    }
                });
            }
            let inv = T::one() / T::lit(batch.len() as f64);
            let mut grads = acc.expect("non-empty batch");
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= inv));
            adam.step(net.params_mut().iter_mut().map(|p| &mut p.value), &grads)?;
        }
        let n = train.len() as f64;
        let val_psnr = if val.is_empty() {
            f64::NAN
        } else {
            MetricReport::from_rows(&evaluate(&net, val)?)?.psnr_db
        };
        let entry = EpochLog { epoch, total: total / n, recon: recon / n, align: align / n, val_psnr };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { net, log })
}

pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    train_set: &[Prepared<T>],
    val: &[Prepared<T>],
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    train_from(UieNet::init(cfg.net.clone())?, cfg, train_set, val, on_epoch)
}

/// Worker count: `SEMGUIDE_THREADS` if set, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f` over `items` on up to [`worker_count`] threads; results keep
/// item order.
pub fn par_map<I: Sync, R: Send>(items: &[I], f: impl Fn(&I) -> R + Sync) -> Vec<R> {
    let workers = worker_count().min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Per-sample metrics of `net`'s output against the clean references.
pub fn evaluate<T: Scalar>(net: &UieNet<T>, samples: &[Prepared<T>]) -> Result<Vec<MetricRow>> {
    par_map(samples, |s| {
        let out = net.enhance(&s.degraded, &s.guidance)?;
        MetricRow::measure(s.id.clone(), &out, &s.clean, Some(&s.mask))
    })
    .into_iter()
    .collect()
}

/// Ratio of guidance-weighted to background-weighted mean absolute decoder
/// activation, pooled over samples and the given stages:
/// `(sum |F| m / sum m) / (sum |F| (1 - m) / sum (1 - m))`.
pub fn feature_focus_ratio<T: Scalar>(net: &UieNet<T>, samples: &[Prepared<T>], stages: &[usize]) -> Result<f64> {
    let parts = par_map(samples, |s| -> Result<[f64; 4]> {
        let mut tape = Tape::new();
        let params = net.bind(&mut tape, false);
        let x = tape.constant(s.degraded.clone());
        let trace = net.forward(&mut tape, &params, x, &s.guidance, stages)?;
        let mut acc = [0.0; 4];
        for (l, f) in &trace.stage_features {
            let f = tape.value(*f);
            let (h, w) = f.hw()?;
            let g = downsample_guidance(&s.guidance, *l, (h, w))?;
            let plane = g.values.numel();
            for (k, v) in f.data().iter().enumerate() {
                let a = v.to_f64().unwrap_or(f64::NAN).abs();
                let m = g.values.data()[k % plane].to_f64().unwrap_or(0.0);
                acc[0] += a * m;
                acc[1] += m;
                acc[2] += a * (1.0 - m);
                acc[3] += 1.0 - m;
            }
        }
        Ok(acc)
    });
    let mut t = [0.0; 4];
    for p in parts {
        let p = p?;
        t.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    if t[1] <= 0.0 || t[3] <= 0.0 || t[2] <= 0.0 {
        return Err(Error::DegenerateMask("guidance covers everything or nothing".into()));
    }
    Ok((t[0] / t[1]) / (t[2] / t[3]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow<T> {
    pub mode: InjectMode,
    pub init_checksum: u64,
    pub report: MetricReport,
    pub net: UieNet<T>,
    /// Wall time spent training and scoring this mode.
    pub elapsed: Duration,
}

impl<T> fmt::Display for AblationRow<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let region = self.report.region_psnr_db.map_or_else(|| "NA".into(), |r| format!("{r:.4}"));
        write!(f, "{}\t{:.4}\t{:.6}\t{}", self.mode, self.report.psnr_db, self.report.ssim, region)
    }
}

/// Trains one model per inject mode from the same initialization and scores
/// each on `val`.
pub fn ablate<T: Scalar>(
    cfg: &TrainConfig,
    train_set: &[Prepared<T>],
    val: &[Prepared<T>],
    mut on_epoch: impl FnMut(InjectMode, &EpochLog),
) -> Result<Vec<AblationRow<T>>> {
    if val.is_empty() {
        return Err(Error::Usage("ablation needs a validation split".into()));
    }
    let base = UieNet::<T>::init(cfg.net.clone())?;
    InjectMode::ALL_MODES
        .into_iter()
        .map(|mode| {
            let start = Instant::now();
            let net = base.with_mode(mode);
            let init_checksum = net.checksum();
            let mut c = cfg.clone();
            c.net.inject_mode = mode;
            let out = train_from(net, &c, train_set, val, |e| on_epoch(mode, e))?;
            let report = MetricReport::from_rows(&evaluate(&out.net, val)?)?;
            Ok(AblationRow { mode, init_checksum, report, net: out.net, elapsed: start.elapsed() })
        })
        .collect()
}
