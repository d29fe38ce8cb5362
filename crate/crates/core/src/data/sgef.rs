//! Portable embedding container shared with external feature exporters.
//!
//! Layout (little-endian): `"SGEF"` | u32 version | u32 N | u32 C |
//! u32 grid_h | u32 grid_w | u32 source_h | u32 source_w |
//! N*C f32 patch features (patch-major) | C f32 text feature |
//! u32 caption length | caption UTF-8.

use std::path::Path;

use crate::diffcore::sgtr::{put_f32s, Reader};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::guidance::{PatchFeatureSet, TextFeature};
use crate::scalar::Scalar;

pub const SGEF_MAGIC: &[u8; 4] = b"SGEF";
pub const SGEF_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SgefFile {
    pub patches: PatchFeatureSet<f32>,
    pub text: TextFeature<f32>,
    pub caption: String,
}

pub fn encode<T: Scalar>(patches: &PatchFeatureSet<T>, text: &TextFeature<T>, caption: &str) -> Result<Vec<u8>> {
    let (n, c) = (patches.len(), patches.channels());
    if text.vec.shape() != [c] {
        return Err(Error::shape(format!(
            "text feature {:?} does not match patch width {c}",
            text.vec.shape()
        )));
    }
    let mut out = Vec::with_capacity(32 + 4 * (n * c + c) + 4 + caption.len());
    out.extend_from_slice(SGEF_MAGIC);
    for v in [SGEF_VERSION as usize, n, c, patches.grid_h, patches.grid_w, patches.source_h, patches.source_w] {
        let v = u32::try_from(v).map_err(|_| Error::shape(format!("{v} does not fit in u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_f32s(&mut out, patches.features.data());
    put_f32s(&mut out, text.vec.data());
    out.extend_from_slice(&(caption.len() as u32).to_le_bytes());
    out.extend_from_slice(caption.as_bytes());
    Ok(out)
}

pub fn decode(buf: &[u8]) -> Result<SgefFile> {
    let mut r = Reader::new(buf);
    r.expect_magic(SGEF_MAGIC)?;
    r.expect_version(SGEF_VERSION)?;
    let mut field = |name: &str| -> Result<(usize, usize)> {
        let at = r.position();
        let v = r.u32(name)? as usize;
        if v == 0 {
            return Err(Error::format(at, format!("{name} must be positive")));
        }
        Ok((at, v))
    };
    let (n_at, n) = field("N")?;
    let (c_at, c) = field("C")?;
    let (grid_at, grid_h) = field("grid_h")?;
    let (_, grid_w) = field("grid_w")?;
    let (_, source_h) = field("source_h")?;
    let (_, source_w) = field("source_w")?;
    if grid_h.checked_mul(grid_w) != Some(n) {
        return Err(Error::format(grid_at, format!("grid {grid_h}x{grid_w} does not hold N={n} patches")));
    }
    let floats = n
        .checked_mul(c)
        .and_then(|nc| nc.checked_add(c))
        .ok_or_else(|| Error::format(n_at, "feature count overflows"))?;
    // payload plus the caption length field must fit in what is left
    if floats.checked_mul(4).and_then(|b| b.checked_add(4)).is_none_or(|b| b > r.remaining()) {
        return Err(Error::format(
            c_at,
            format!("N={n}, C={c} needs more bytes than the {} remaining", r.remaining()),
        ));
    }
    let feats = r.f32s(n * c, "patch features")?;
    let text = r.f32s(c, "text feature")?;
    let cap_at = r.position();
    let cap_len = r.u32("caption length")? as usize;
    if cap_len != r.remaining() {
        return Err(Error::format(
            cap_at,
            format!("caption length {cap_len} does not match {} remaining bytes", r.remaining()),
        ));
    }
    let cap_start = r.position();
    let raw = r.bytes(cap_len, "caption")?;
    let caption = std::str::from_utf8(raw)
        .map_err(|e| Error::format(cap_start + e.valid_up_to(), "caption is not UTF-8"))?
        .to_string();
    r.finish()?;

    let patches = PatchFeatureSet::new(Tensor::new(vec![n, c], feats)?, (grid_h, grid_w), (source_h, source_w))?;
    let text = TextFeature::new(Tensor::new(vec![c], text)?)?;
    Ok(SgefFile { patches, text, caption })
}

pub fn sgef_write<T: Scalar>(
    path: impl AsRef<Path>,
    patches: &PatchFeatureSet<T>,
    text: &TextFeature<T>,
    caption: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(patches, text, caption.unwrap_or(""))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn sgef_read(path: impl AsRef<Path>) -> Result<SgefFile> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
