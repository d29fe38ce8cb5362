use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::guidance::SharpenParams;
use crate::losses::LossWeights;
use crate::network::{InjectMode, UieNetConfig};
use crate::optim::AdamConfig;
use crate::train::TrainConfig;

/// Flat `key=value` run configuration. Blank lines and `#` comments are
/// ignored; unknown or repeated keys are errors.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub image_size: usize,
    pub dataset_size: usize,
    pub val_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
    pub lambda_align: f64,
    pub lambda_percep: f64,
    pub inject_mode: InjectMode,
    /// `None` selects every decoder stage.
    pub loss_stages: Option<Vec<usize>>,
    pub base_channels: usize,
    pub levels: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DatasetSpec::default();
        let train = TrainConfig::default();
        let sharpen = SharpenParams::default();
        RunConfig {
            seed: 0,
            image_size: data.image_size,
            dataset_size: data.dataset_size,
            val_size: data.val_size,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.adam.learning_rate,
            gamma: sharpen.gamma(),
            delta: sharpen.delta(),
            eta: train.weights.eta,
            lambda_align: train.weights.lambda_align,
            lambda_percep: train.weights.lambda_percep,
            inject_mode: train.net.inject_mode,
            loss_stages: None,
            base_channels: train.net.base_channels,
            levels: train.net.levels,
        }
    }
}

pub const KEYS: [&str; 16] = [
    "seed",
    "image_size",
    "dataset_size",
    "val_size",
    "epochs",
    "batch_size",
    "learning_rate",
    "gamma",
    "delta",
    "eta",
    "lambda_align",
    "lambda_percep",
    "inject_mode",
    "loss_stages",
    "base_channels",
    "levels",
];

fn parse_value<V: FromStr>(key: &str, raw: &str) -> Result<V> {
    raw.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {raw:?}")))
}

fn parse_stages(raw: &str) -> Result<Option<Vec<usize>>> {
    if raw == "all" {
        return Ok(None);
    }
    let mut stages: Vec<usize> = raw
        .split(',')
        .map(|s| parse_value("loss_stages", s.trim()))
        .collect::<Result<_>>()?;
    stages.sort_unstable();
    stages.dedup();
    Ok(Some(stages))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: {key} given twice", n + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "image_size" => self.image_size = parse_value(key, v)?,
            "dataset_size" => self.dataset_size = parse_value(key, v)?,
            "val_size" => self.val_size = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "learning_rate" => self.learning_rate = parse_value(key, v)?,
            "gamma" => self.gamma = parse_value(key, v)?,
            "delta" => self.delta = parse_value(key, v)?,
            "eta" => self.eta = parse_value(key, v)?,
            "lambda_align" => self.lambda_align = parse_value(key, v)?,
            "lambda_percep" => self.lambda_percep = parse_value(key, v)?,
            "inject_mode" => self.inject_mode = v.parse()?,
            "loss_stages" => self.loss_stages = parse_stages(v)?,
            "base_channels" => self.base_channels = parse_value(key, v)?,
            "levels" => self.levels = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.sharpen()?;
        self.dataset_spec().validate()?;
        self.train_config().validate()?;
        self.net_config().check_input(self.image_size, self.image_size)
    }

    pub fn sharpen(&self) -> Result<SharpenParams> {
        SharpenParams::new(self.gamma, self.delta)
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.seed,
            image_size: self.image_size,
            dataset_size: self.dataset_size,
            val_size: self.val_size,
            ..Default::default()
        }
    }

    pub fn net_config(&self) -> UieNetConfig {
        UieNetConfig {
            levels: self.levels,
            base_channels: self.base_channels,
            inject_mode: self.inject_mode,
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            net: self.net_config(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig { learning_rate: self.learning_rate, ..Default::default() },
            weights: LossWeights { lambda_align: self.lambda_align, lambda_percep: self.lambda_percep, eta: self.eta },
            loss_stages: self.loss_stages.clone(),
        }
    }

    /// Renders every key; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let stages = match &self.loss_stages {
            None => "all".to_string(),
            Some(s) => s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        };
        let mut out = String::new();
        let rows: [(&str, String); 16] = [
            ("seed", self.seed.to_string()),
            ("image_size", self.image_size.to_string()),
            ("dataset_size", self.dataset_size.to_string()),
            ("val_size", self.val_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("gamma", self.gamma.to_string()),
            ("delta", self.delta.to_string()),
            ("eta", self.eta.to_string()),
            ("lambda_align", self.lambda_align.to_string()),
            ("lambda_percep", self.lambda_percep.to_string()),
            ("inject_mode", self.inject_mode.to_string()),
            ("loss_stages", stages),
            ("base_channels", self.base_channels.to_string()),
            ("levels", self.levels.to_string()),
        ];
        for (k, v) in rows {
            writeln!(out, "{k}={v}").expect("string write");
        }
        out
    }
}
