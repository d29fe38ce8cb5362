//! Parameter container: a u32 little-endian header length, a UTF-8 manifest,
//! then one SGTR record per tensor in manifest order.
//!
//! Manifest lines are `key=value`: `seed=<u64>`, any number of
//! `config.<key>=<value>` echo lines, and one `tensor=<name>:<d0>,<d1>,...`
//! line per stored tensor.

use std::path::Path;

use crate::diffcore::sgtr::{self, Reader};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_HEADER: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub config: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(seed: u64) -> Self {
        Checkpoint { seed, config: Vec::new(), tensors: Vec::new() }
    }

    pub fn push_config(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        self.tensors.push((name.to_string(), t.cast::<f32>()));
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut header = format!("seed={}\n", self.seed);
        for (k, v) in &self.config {
            header.push_str(&format!("config.{k}={v}\n"));
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
            header.push_str(&format!("tensor={name}:{}\n", dims.join(",")));
        }
        let mut out = Vec::new();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, t) in &self.tensors {
            sgtr::encode_into(t, &mut out);
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        let len = r.u32("header length")? as usize;
        if len > MAX_HEADER {
            return Err(Error::format(0, format!("header length {len} too large")));
        }
        let raw = r.bytes(len, "header")?;
        let header = std::str::from_utf8(raw).map_err(|e| Error::format(4 + e.valid_up_to(), "header is not UTF-8"))?;

        let mut seed = None;
        let mut config = Vec::new();
        let mut manifest: Vec<(String, Vec<usize>)> = Vec::new();
        for line in header.lines().filter(|l| !l.is_empty()) {
            let bad = || Error::format(4, format!("malformed manifest line {line:?}"));
            let (key, value) = line.split_once('=').ok_or_else(bad)?;
            if key == "seed" {
                seed = Some(value.parse::<u64>().map_err(|_| bad())?);
            } else if let Some(k) = key.strip_prefix("config.") {
                config.push((k.to_string(), value.to_string()));
            } else if key == "tensor" {
                let (name, dims) = value.rsplit_once(':').ok_or_else(bad)?;
                let dims = if dims.is_empty() {
                    Vec::new()
                } else {
                    dims.split(',').map(|d| d.parse::<usize>().map_err(|_| bad())).collect::<Result<_>>()?
                };
                manifest.push((name.to_string(), dims));
            } else {
                return Err(bad());
            }
        }
        let seed = seed.ok_or_else(|| Error::format(4, "manifest has no seed"))?;

        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, dims) in manifest {
            let at = r.position();
            let t = sgtr::decode_from(&mut r)?;
            if t.shape() != dims.as_slice() {
                return Err(Error::format(
                    at,
                    format!("tensor {name} has shape {:?}, manifest says {dims:?}", t.shape()),
                ));
            }
            tensors.push((name, t));
        }
        r.finish()?;
        Ok(Checkpoint { seed, config, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&buf)
    }
}
