//! Binary PPM (P6) and PGM (P5) with maxval 255.
//!
//! Writing quantizes with `round(255 * v)` after clamping to `[0, 1]`;
//! reading maps each byte back to `byte / 255`.

use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn quantize<T: Scalar>(v: T) -> u8 {
    let v = v.to_f64().unwrap_or(0.0);
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (255.0 * v).round() as u8
}

fn header(magic: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n255\n").into_bytes()
}

pub fn encode_ppm<T: Scalar>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w) = match img.shape() {
        [3, h, w] => (*h, *w),
        s => return Err(Error::shape(format!("PPM needs a [3, H, W] image, got {s:?}"))),
    };
    let plane = h * w;
    let d = img.data();
    let mut out = header("P6", w, h);
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize(d[c * plane + i]));
        }
    }
    Ok(out)
}

pub fn encode_pgm<T: Scalar>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w) = match img.shape() {
        [h, w] => (*h, *w),
        [1, h, w] => (*h, *w),
        s => return Err(Error::shape(format!("PGM needs an [H, W] image, got {s:?}"))),
    };
    let mut out = header("P5", w, h);
    out.extend(img.data().iter().map(|v| quantize(*v)));
    Ok(out)
}

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(buf: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if buf.len() < 2 || &buf[..2] != magic {
        return Err(Error::format(0, format!("expected {} magic", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, name) in ["width", "height", "maxval"].into_iter().enumerate() {
        // whitespace and comments before each field
        loop {
            match buf.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format(pos, format!("header ends before {name}"))),
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(start, format!("{name} is not a number")));
        }
        let text = std::str::from_utf8(&buf[start..pos]).expect("ascii digits");
        fields[k] = text
            .parse()
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| Error::format(start, format!("bad {name} {text:?}")))?;
    }
    if fields[2] != 255 {
        return Err(Error::format(pos, format!("maxval {} is not supported, only 255", fields[2])));
    }
    match buf.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(pos, "missing whitespace after maxval")),
    }
    Ok(Header { width: fields[0], height: fields[1], data_start: pos })
}

fn payload<'a>(buf: &'a [u8], hd: &Header, channels: usize) -> Result<&'a [u8]> {
    let need = hd
        .width
        .checked_mul(hd.height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::format(0, "image dimensions overflow"))?;
    let body = &buf[hd.data_start..];
    if body.len() != need {
        return Err(Error::format(
            hd.data_start,
            format!("expected {need} pixel bytes, found {}", body.len()),
        ));
    }
    Ok(body)
}

pub fn decode_ppm<T: Scalar>(buf: &[u8]) -> Result<Tensor<T>> {
    let hd = parse_header(buf, b"P6")?;
    let body = payload(buf, &hd, 3)?;
    let plane = hd.width * hd.height;
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in body.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = T::lit(px[c] as f64 / 255.0);
        }
    }
    Tensor::new(vec![3, hd.height, hd.width], data)
}

pub fn decode_pgm<T: Scalar>(buf: &[u8]) -> Result<Tensor<T>> {
    let hd = parse_header(buf, b"P5")?;
    let body = payload(buf, &hd, 1)?;
    Tensor::new(vec![hd.height, hd.width], body.iter().map(|b| T::lit(*b as f64 / 255.0)).collect())
}

fn write_bytes(path: &Path, bytes: Vec<u8>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn ppm_write<T: Scalar>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    write_bytes(path.as_ref(), encode_ppm(img)?)
}

pub fn ppm_read<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_ppm(&read_bytes(path.as_ref())?)
}

pub fn pgm_write<T: Scalar>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    write_bytes(path.as_ref(), encode_pgm(img)?)
}

pub fn pgm_read<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_pgm(&read_bytes(path.as_ref())?)
}
