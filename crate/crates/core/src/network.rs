//! Encoder-decoder enhancement network with guided cross-attention at the
//! decoder skips.
//!
//! Level `i` of the encoder has `base_channels * 2^i` channels; the deepest
//! level is the bottleneck. Decoder stage `l` (for `l = levels-2 ..= 0`)
//! upsamples, projects to `C_l` channels (`d_l`), optionally adds
//! cross-attention over the guided skip `e_l`, concatenates the skip and
//! applies two convolutions. Its output is the stage feature `F^(l)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::guidance::{downsample_guidance, GuidanceMap, StageGuidance};
use crate::scalar::Scalar;

/// Where guidance enters the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InjectMode {
    /// Plain skip connections; guidance is never read.
    None,
    /// Skip features are multiplied by the stage guidance; no attention.
    EncoderOnly,
    /// Decoder features attend over guidance-weighted skip features.
    DecoderOnly,
    /// Both of the above.
    All,
}

impl InjectMode {
    pub const ALL_MODES: [InjectMode; 4] =
        [InjectMode::None, InjectMode::EncoderOnly, InjectMode::DecoderOnly, InjectMode::All];

    pub fn uses_guidance(self) -> bool {
        self != InjectMode::None
    }

    pub fn attends(self) -> bool {
        matches!(self, InjectMode::DecoderOnly | InjectMode::All)
    }

    pub fn modulates_skip(self) -> bool {
        matches!(self, InjectMode::EncoderOnly | InjectMode::All)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InjectMode::None => "none",
            InjectMode::EncoderOnly => "encoder_only",
            InjectMode::DecoderOnly => "decoder_only",
            InjectMode::All => "all",
        }
    }
}

impl fmt::Display for InjectMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InjectMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InjectMode::ALL_MODES
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown inject_mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UieNetConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub inject_mode: InjectMode,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for UieNetConfig {
    fn default() -> Self {
        UieNetConfig {
            levels: 3,
            base_channels: 16,
            inject_mode: InjectMode::DecoderOnly,
            leaky_slope: 0.2,
            seed: 0,
        }
    }
}

impl UieNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Config(format!("levels must be >= 2, got {}", self.levels)));
        }
        if self.levels > 8 {
            return Err(Error::Config(format!("levels must be <= 8, got {}", self.levels)));
        }
        if self.base_channels < 4 {
            return Err(Error::Config(format!("base_channels must be >= 4, got {}", self.base_channels)));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config(format!("leaky slope must be in [0, 1), got {}", self.leaky_slope)));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Decoder stage indices, shallowest first.
    pub fn decoder_stages(&self) -> Vec<usize> {
        (0..self.levels - 1).collect()
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let f = 1usize << (self.levels - 1);
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::shape(format!(
                "input {h}x{w} is not divisible by {f} for {} levels",
                self.levels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvSlot {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug)]
struct EncoderSlot {
    conv_a: ConvSlot,
    conv_b: ConvSlot,
}

#[derive(Clone, Copy, Debug)]
struct DecoderSlot {
    up: ConvSlot,
    conv_a: ConvSlot,
    conv_b: ConvSlot,
    query: usize,
    key: usize,
    value: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    encoder: Vec<EncoderSlot>,
    /// Indexed by stage.
    decoder: Vec<DecoderSlot>,
    head: ConvSlot,
}

/// Name, shape and fan-in of every parameter, in storage order.
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
}

fn plan(config: &UieNetConfig) -> (Vec<ParamSpec>, Layout) {
    let mut specs = Vec::new();
    let conv = |specs: &mut Vec<ParamSpec>, name: String, cout: usize, cin: usize| {
        let weight = specs.len();
        specs.push(ParamSpec { name: format!("{name}.weight"), shape: vec![cout, cin, 3, 3], fan_in: cin * 9 });
        specs.push(ParamSpec { name: format!("{name}.bias"), shape: vec![cout], fan_in: cin * 9 });
        ConvSlot { weight, bias: weight + 1 }
    };

    let mut encoder = Vec::new();
    for i in 0..config.levels {
        let cin = if i == 0 { 3 } else { config.channels(i - 1) };
        let c = config.channels(i);
        let conv_a = conv(&mut specs, format!("enc{i}.conv_a"), c, cin);
        let conv_b = conv(&mut specs, format!("enc{i}.conv_b"), c, c);
        encoder.push(EncoderSlot { conv_a, conv_b });
    }

    let mut decoder = Vec::new();
    for l in (0..config.levels - 1).rev() {
        let c = config.channels(l);
        let up = conv(&mut specs, format!("dec{l}.up"), c, config.channels(l + 1));
        let conv_a = conv(&mut specs, format!("dec{l}.conv_a"), c, 2 * c);
        let conv_b = conv(&mut specs, format!("dec{l}.conv_b"), c, c);
        let query = specs.len();
        for p in ["query", "key", "value"] {
            specs.push(ParamSpec { name: format!("dec{l}.attn.{p}"), shape: vec![c, c], fan_in: c });
        }
        decoder.push(DecoderSlot { up, conv_a, conv_b, query, key: query + 1, value: query + 2 });
    }
    decoder.reverse();

    let head = conv(&mut specs, "head".to_string(), 3, config.channels(0));
    (specs, Layout { encoder, decoder, head })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Network parameters plus the configuration that shaped them.
///
/// Attention projections exist for every decoder stage regardless of the
/// injection mode, so every mode built from one seed starts from identical
/// weights; modes that do not attend leave them untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct UieNet<T> {
    config: UieNetConfig,
    params: Vec<Param<T>>,
}

/// Tape records of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// `[3, H, W]` in `(0, 1)`.
    pub enhanced: Var,
    /// Post-activation decoder features for each requested loss stage.
    pub stage_features: Vec<(usize, Var)>,
    /// Stage guidance for each requested loss stage (empty when guidance is unused).
    pub stage_guidance: Vec<StageGuidance<T>>,
}

/// Query, key and value tokens of one attention call.
struct Tokens {
    q: Var,
    k: Var,
    v: Var,
    dims: (usize, usize, usize),
}

/// Tokens are the `h*w` spatial positions with `C`-dim descriptors. The skip
/// is weighted by `guidance` before the key and value projections and the
/// queries are pre-scaled by `1/sqrt(C)`.
fn attention_tokens<T: Scalar>(
    tape: &mut Tape<T>,
    decoder: Var,
    skip: Var,
    guidance: Option<Var>,
    (w_query, w_key, w_value): (Var, Var, Var),
) -> Result<Tokens> {
    let shape = tape.shape(decoder).to_vec();
    let (c, h, w) = match shape.as_slice() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::shape(format!("attention needs [C, h, w] features, got {s:?}"))),
    };
    if tape.shape(skip) != shape.as_slice() {
        return Err(Error::shape(format!(
            "decoder feature {shape:?} and skip feature {:?} differ",
            tape.shape(skip)
        )));
    }
    for p in [w_query, w_key, w_value] {
        if tape.shape(p) != [c, c] {
            return Err(Error::shape(format!("projection {:?} does not match {c} channels", tape.shape(p))));
        }
    }
    let weighted = match guidance {
        Some(m) => {
            if tape.shape(m) != [h, w] {
                return Err(Error::shape(format!(
                    "stage guidance {:?} does not match features {h}x{w}",
                    tape.shape(m)
                )));
            }
            tape.mul(skip, m)?
        }
        None => skip,
    };
    let n = h * w;
    let tokens = |tape: &mut Tape<T>, x: Var| -> Result<Var> {
        let flat = tape.reshape(x, &[c, n])?;
        tape.transpose(flat)
    };
    let dq = tokens(tape, decoder)?;
    let ek = tokens(tape, weighted)?;
    let q = tape.matmul(dq, w_query)?;
    let q = tape.scale(q, T::one() / T::lit(c as f64).sqrt());
    let k = tape.matmul(ek, w_key)?;
    let v = tape.matmul(ek, w_value)?;
    Ok(Tokens { q, k, v, dims: (c, h, w) })
}

/// Single-head cross-attention from decoder tokens to guided skip tokens:
/// `softmax(Q K^T / sqrt(C)) V` reshaped to `[C, h, w]`, where `Q` projects
/// the decoder feature and `K`, `V` project the skip weighted by `guidance`
/// (`[h, w]`, broadcast over channels). `None` leaves the skip unweighted.
pub fn inject_cross_attention<T: Scalar>(
    tape: &mut Tape<T>,
    decoder: Var,
    skip: Var,
    guidance: Option<Var>,
    projections: (Var, Var, Var),
) -> Result<Var> {
    let t = attention_tokens(tape, decoder, skip, guidance, projections)?;
    let (c, h, w) = t.dims;
    let out = tape.attention(t.q, t.k, t.v)?;
    let out = tape.transpose(out)?;
    tape.reshape(out, &[c, h, w])
}

/// The `[h*w, h*w]` row-stochastic weights behind [`inject_cross_attention`],
/// evaluated on plain tensors.
pub fn cross_attention_weights<T: Scalar>(
    decoder: &Tensor<T>,
    skip: &Tensor<T>,
    guidance: Option<&Tensor<T>>,
    (w_query, w_key, w_value): (&Tensor<T>, &Tensor<T>, &Tensor<T>),
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let mut put = |t: &Tensor<T>| tape.constant(t.clone());
    let (d, e, m) = (put(decoder), put(skip), guidance.map(&mut put));
    let proj = (put(w_query), put(w_key), put(w_value));
    let t = attention_tokens(&mut tape, d, e, m, proj)?;
    let kt = tape.transpose(t.k)?;
    let scores = tape.matmul(t.q, kt)?;
    let weights = tape.softmax_rows(scores)?;
    Ok(tape.value(weights).clone())
}

/// Per-call switches of [`UieNet::forward_with`].
#[derive(Clone, Debug)]
pub struct ForwardOptions {
    /// Decoder stages whose features (and guidance) are returned.
    pub loss_stages: Vec<usize>,
    /// Weight the attention keys/values by guidance. Disabling it is only
    /// useful for checking the uniform-guidance identity.
    pub modulate_attention: bool,
}

impl<T: Scalar> UieNet<T> {
    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(config: UieNetConfig) -> Result<Self> {
        config.validate()?;
        let (specs, _) = plan(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = specs
            .into_iter()
            .map(|s| {
                let bound = (1.0 / s.fan_in as f64).sqrt();
                let value = Tensor::from_fn(s.shape, |_| T::lit((2.0 * rng.random::<f64>() - 1.0) * bound))?;
                Ok(Param { name: s.name, value })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(UieNet { config, params })
    }

    pub fn config(&self) -> &UieNetConfig {
        &self.config
    }

    /// Returns a copy that runs with a different injection mode.
    pub fn with_mode(&self, mode: InjectMode) -> Self {
        let mut net = self.clone();
        net.config.inject_mode = mode;
        net
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// FNV-1a over names, shapes and values widened to f64.
    pub fn checksum(&self) -> u64 {
        const PRIME: u64 = 0x100000001b3;
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            for d in p.value.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                eat(&v.to_f64().unwrap_or(f64::NAN).to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn cast<U: Scalar>(&self) -> UieNet<U> {
        UieNet {
            config: self.config.clone(),
            params: self.params.iter().map(|p| Param { name: p.name.clone(), value: p.value.cast() }).collect(),
        }
    }

    /// Records every parameter on the tape, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { tape.leaf(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect()
    }

    fn conv_block(&self, tape: &mut Tape<T>, params: &[Var], x: Var, slot: ConvSlot) -> Result<Var> {
        let y = tape.conv2d(x, params[slot.weight], params[slot.bias])?;
        Ok(tape.leaky_relu(y, T::lit(self.config.leaky_slope)))
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        degraded: Var,
        guidance: &GuidanceMap<T>,
        loss_stages: &[usize],
    ) -> Result<ForwardTrace<T>> {
        let options = ForwardOptions { loss_stages: loss_stages.to_vec(), modulate_attention: true };
        self.forward_with(tape, params, degraded, guidance, &options)
    }

    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        degraded: Var,
        guidance: &GuidanceMap<T>,
        options: &ForwardOptions,
    ) -> Result<ForwardTrace<T>> {
        let cfg = &self.config;
        let (_, layout) = plan(cfg);
        if params.len() != self.params.len() {
            return Err(Error::shape(format!(
                "expected {} bound parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let (h, w) = match tape.shape(degraded) {
            [3, h, w] => (*h, *w),
            s => return Err(Error::shape(format!("input must be [3, H, W], got {s:?}"))),
        };
        cfg.check_input(h, w)?;
        let mode = cfg.inject_mode;
        if mode.uses_guidance() && guidance.dims() != (h, w) {
            return Err(Error::shape(format!(
                "guidance {:?} does not match input {h}x{w}",
                guidance.dims()
            )));
        }
        if let Some(bad) = options.loss_stages.iter().find(|s| **s >= cfg.levels - 1) {
            return Err(Error::Config(format!("loss stage {bad} is not a decoder stage")));
        }

        let mut skips = Vec::with_capacity(cfg.levels - 1);
        let mut x = degraded;
        for (i, slot) in layout.encoder.iter().enumerate() {
            if i > 0 {
                x = tape.avg_pool2(x)?;
            }
            x = self.conv_block(tape, params, x, slot.conv_a)?;
            x = self.conv_block(tape, params, x, slot.conv_b)?;
            if i + 1 < cfg.levels {
                skips.push(x);
            }
        }

        let mut trace = ForwardTrace {
            enhanced: x,
            stage_features: Vec::new(),
            stage_guidance: Vec::new(),
        };
        for l in (0..cfg.levels - 1).rev() {
            let slot = layout.decoder[l];
            let skip = skips[l];
            let (sh, sw) = (tape.shape(skip)[1], tape.shape(skip)[2]);
            let up = tape.resize_bilinear(x, sh, sw)?;
            let mut d = self.conv_block(tape, params, up, slot.up)?;

            let stage_map = if mode.uses_guidance() {
                Some(downsample_guidance(guidance, l, (sh, sw))?)
            } else {
                None
            };
            let map_var = stage_map.as_ref().map(|m| tape.constant(m.values.clone()));

            if mode.attends() {
                let m = if options.modulate_attention { map_var } else { None };
                let projections = (params[slot.query], params[slot.key], params[slot.value]);
                let att = inject_cross_attention(tape, d, skip, m, projections)?;
                d = tape.add(d, att)?;
            }
            let skip = match map_var {
                Some(m) if mode.modulates_skip() => tape.mul(skip, m)?,
                _ => skip,
            };
            let merged = tape.concat(d, skip)?;
            x = self.conv_block(tape, params, merged, slot.conv_a)?;
            x = self.conv_block(tape, params, x, slot.conv_b)?;

            if options.loss_stages.contains(&l) {
                trace.stage_features.push((l, x));
                if let Some(m) = stage_map {
                    trace.stage_guidance.push(m);
                }
            }
        }

        let y = tape.conv2d(x, params[layout.head.weight], params[layout.head.bias])?;
        trace.enhanced = tape.sigmoid(y);
        Ok(trace)
    }

    /// Inference helper: returns the enhanced image only.
    pub fn enhance(&self, degraded: &Tensor<T>, guidance: &GuidanceMap<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(degraded.clone());
        let trace = self.forward(&mut tape, &params, x, guidance, &[])?;
        Ok(tape.value(trace.enhanced).clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.config.seed);
        c.push_config("levels", self.config.levels);
        c.push_config("base_channels", self.config.base_channels);
        c.push_config("inject_mode", self.config.inject_mode);
        c.push_config("leaky_slope", self.config.leaky_slope);
        for p in &self.params {
            c.push_tensor(&p.name, &p.value);
        }
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let get = |k: &str| {
            ckpt.config_value(k)
                .ok_or_else(|| Error::format(0, format!("checkpoint lacks config.{k}")))
        };
        let parse_err = |k: &str| Error::format(0, format!("checkpoint has malformed config.{k}"));
        let config = UieNetConfig {
            levels: get("levels")?.parse().map_err(|_| parse_err("levels"))?,
            base_channels: get("base_channels")?.parse().map_err(|_| parse_err("base_channels"))?,
            inject_mode: get("inject_mode")?.parse()?,
            leaky_slope: get("leaky_slope")?.parse().map_err(|_| parse_err("leaky_slope"))?,
            seed: ckpt.seed,
        };
        let mut net = UieNet::<T>::init(config)?;
        if ckpt.tensors.len() != net.params.len() {
            return Err(Error::format(
                0,
                format!("checkpoint holds {} tensors, network needs {}", ckpt.tensors.len(), net.params.len()),
            ));
        }
        for (p, (name, t)) in net.params.iter_mut().zip(&ckpt.tensors) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(Error::format(
                    0,
                    format!("checkpoint tensor {name} {:?} does not match {} {:?}", t.shape(), p.name, p.value.shape()),
                ));
            }
            p.value = t.cast();
        }
        Ok(net)
    }
}
