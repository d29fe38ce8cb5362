use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::config::RunConfig;
use crate::checkpoint::Checkpoint;
use crate::data::{self, generate_dataset, image_io, sgef_read};
use crate::diffcore::sgtr;
use crate::error::{Error, Result};
use crate::gradsuite::{run_grad_suite, TOLERANCE};
use crate::guidance::{guidance_from_embeddings, PatchFeatureSet, SharpenParams, TextFeature};
use crate::metrics::{format_report, MetricRow};
use crate::network::UieNet;
use crate::train::{self, prepare};

#[derive(Debug, Parser)]
#[command(name = "semguide", version, about = "Semantic guidance for underwater image enhancement")]
pub struct Cli {
    /// Flat key=value run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output path; its meaning depends on the command.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset into --out.
    GenData,
    /// Turn an SGEF file into --out.pgm and --out.sgtr.
    GenGuidance {
        sgef: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Train on a dataset and write the checkpoint to --out.
    Train { dataset: PathBuf },
    /// Enhance one degraded image into --out.
    Enhance { checkpoint: PathBuf, degraded: PathBuf, sgef: PathBuf },
    /// Score a checkpoint on every sample of a dataset.
    Eval { checkpoint: PathBuf, dataset: PathBuf },
    /// Train one model per inject mode from the same seed and compare them.
    AblateInject { dataset: PathBuf },
    /// Run the double-precision gradient suite.
    GradCheck,
}

const RUN_PREFIX: &str = "run.";

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| Error::Usage("this command needs --out PATH".into()))
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn with_extension(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// The run configuration echoed into a checkpoint by `train`, if any.
fn checkpoint_run_config(ckpt: &Checkpoint) -> Result<Option<RunConfig>> {
    let echoed: Vec<String> = ckpt
        .config
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(RUN_PREFIX).map(|k| format!("{k}={v}")))
        .collect();
    if echoed.is_empty() {
        return Ok(None);
    }
    RunConfig::parse(&echoed.join("\n")).map(Some)
}

fn load_embeddings(path: &Path) -> Result<(PatchFeatureSet<f32>, TextFeature<f32>)> {
    let f = sgef_read(path)?;
    Ok((f.patches, f.text))
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenData => {
            let dir = require_out(cli)?;
            let records = generate_dataset(&cfg.dataset_spec(), dir)?;
            writeln!(out, "wrote {} samples to {}", records.len(), dir.display()).map_err(io_err)?;
        }
        Command::GenGuidance { sgef, gamma, delta } => {
            let prefix = require_out(cli)?;
            let params = SharpenParams::new(gamma.unwrap_or(cfg.gamma), delta.unwrap_or(cfg.delta))?;
            let (patches, text) = load_embeddings(sgef)?;
            let size = (patches.source_h, patches.source_w);
            let g = guidance_from_embeddings(&patches, &text, &params, size)?;
            let v = g.map.values();
            image_io::pgm_write(with_extension(prefix, "pgm"), v)?;
            sgtr::write(with_extension(prefix, "sgtr"), v)?;
            let (min, max, mean) = (v.min(), v.max(), v.mean());
            writeln!(out, "min\t{min}\nmax\t{max}\nmean\t{mean}").map_err(io_err)?;
            if g.degenerate {
                eprintln!("warning: similarity scores are constant; the guidance map is all zeros");
            } else if mean < 0.01 {
                eprintln!(
                    "warning: delta={} is an aggressive threshold; {:.2}% of the map is non-zero",
                    params.delta(),
                    100.0 * v.data().iter().filter(|x| **x > 0.0).count() as f64 / v.numel() as f64
                );
            }
        }
        Command::Train { dataset } => {
            let path = require_out(cli)?;
            let samples = data::load_dataset::<f32>(dataset)?;
            if samples.is_empty() {
                return Err(Error::Usage(format!("dataset {} is empty", dataset.display())));
            }
            let (train_set, val) = train::split(prepare(&samples, &cfg.sharpen()?)?);
            let mut write_err = None;
            let outcome = train::train(&cfg.train_config(), &train_set, &val, |e| {
                if let Err(err) = writeln!(out, "{e}") {
                    write_err.get_or_insert(err);
                }
            })?;
            if let Some(e) = write_err {
                return Err(io_err(e));
            }
            let mut ckpt = outcome.net.to_checkpoint();
            for line in cfg.to_text().lines() {
                let (k, v) = line.split_once('=').expect("rendered as key=value");
                ckpt.push_config(&format!("{RUN_PREFIX}{k}"), v);
            }
            ckpt.write(path)?;
        }
        Command::Enhance { checkpoint, degraded, sgef } => {
            let path = require_out(cli)?;
            let ckpt = Checkpoint::read(checkpoint)?;
            let run_cfg = checkpoint_run_config(&ckpt)?.unwrap_or(cfg);
            let net = UieNet::<f32>::from_checkpoint(&ckpt)?;
            let img: crate::Tensor<f32> = image_io::ppm_read(degraded)?;
            let (h, w) = img.hw()?;
            if (h, w) != (run_cfg.image_size, run_cfg.image_size) {
                return Err(Error::shape(format!(
                    "image is {:?} but the checkpoint was trained on [3, {s}, {s}]",
                    img.shape(),
                    s = run_cfg.image_size
                )));
            }
            let (patches, text) = load_embeddings(sgef)?;
            let g = guidance_from_embeddings(&patches, &text, &run_cfg.sharpen()?, (h, w))?;
            let enhanced = net.enhance(&img, &g.map)?;
            image_io::ppm_write(path, &enhanced)?;
        }
        Command::Eval { checkpoint, dataset } => {
            let ckpt = Checkpoint::read(checkpoint)?;
            let run_cfg = checkpoint_run_config(&ckpt)?.unwrap_or(cfg);
            let net = UieNet::<f32>::from_checkpoint(&ckpt)?;
            let samples = match data::load_dataset::<f32>(dataset) {
                Err(Error::Io { path, source }) => {
                    return Err(Error::Usage(format!("dataset is incomplete: {}: {source}", path.display())))
                }
                r => r?,
            };
            if samples.is_empty() {
                return Err(Error::Usage(format!("dataset {} is empty", dataset.display())));
            }
            let prepared = prepare(&samples, &run_cfg.sharpen()?)?;
            let rows: Vec<MetricRow> = train::evaluate(&net, &prepared)?;
            let report = format_report(&rows)?;
            out.write_all(report.as_bytes()).map_err(io_err)?;
            if let Some(p) = &cli.out {
                std::fs::write(p, &report).map_err(|e| Error::io(p, e))?;
            }
        }
        Command::AblateInject { dataset } => {
            let samples = data::load_dataset::<f32>(dataset)?;
            if samples.is_empty() {
                return Err(Error::Usage(format!("dataset {} is empty", dataset.display())));
            }
            let (train_set, val) = train::split(prepare(&samples, &cfg.sharpen()?)?);
            let rows = train::ablate(&cfg.train_config(), &train_set, &val, |mode, e| {
                eprintln!("{mode}\t{e}");
            })?;
            let mut table = String::from("mode\tpsnr\tssim\tregion_psnr\tinit_checksum\n");
            for r in &rows {
                table.push_str(&format!("{r}\t{:016x}\n", r.init_checksum));
            }
            out.write_all(table.as_bytes()).map_err(io_err)?;
            if let Some(p) = &cli.out {
                std::fs::write(p, &table).map_err(|e| Error::io(p, e))?;
            }
        }
        Command::GradCheck => {
            let items = run_grad_suite()?;
            let mut failed = 0;
            writeln!(out, "item\tmax_rel_error\tnorm_rel_error\tcoordinates\tverdict").map_err(io_err)?;
            for it in &items {
                let verdict = if it.passed() { "ok" } else { "FAIL" };
                writeln!(
                    out,
                    "{}\t{:.3e}\t{:.3e}\t{}\t{verdict}",
                    it.name, it.max_relative_error, it.norm_relative_error, it.coordinates
                )
                .map_err(io_err)?;
                failed += usize::from(!it.passed());
            }
            if failed > 0 {
                return Err(Error::Verification(format!(
                    "{failed} of {} gradient checks exceed {TOLERANCE:e}",
                    items.len()
                )));
            }
        }
    }
    Ok(())
}
