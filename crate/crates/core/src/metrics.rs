//! Full-reference image quality: PSNR, SSIM and PSNR restricted to a mask.

use std::fmt::Write as _;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const PSNR_CAP_DB: f64 = 100.0;
const MIN_MSE: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn image_dims<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("images differ in shape: {:?} vs {:?}", a.shape(), b.shape())));
    }
    match a.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::shape(format!("expected a [C, H, W] image, got {s:?}"))),
    }
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MIN_MSE {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

fn masked_mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, plane: usize, keep: impl Fn(usize) -> bool) -> (f64, usize) {
    let (a, b) = (a.data(), b.data());
    let mut sum = 0.0;
    let mut n = 0;
    for (ca, cb) in a.chunks_exact(plane).zip(b.chunks_exact(plane)) {
        for i in (0..plane).filter(|i| keep(*i)) {
            let d = ca[i].to_f64().unwrap_or(f64::NAN) - cb[i].to_f64().unwrap_or(f64::NAN);
            sum += d * d;
            n += 1;
        }
    }
    (sum, n)
}

pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let (_, h, w) = image_dims(a, b)?;
    let (sum, n) = masked_mse(a, b, h * w, |_| true);
    Ok(psnr_from_mse(sum / n as f64))
}

/// PSNR over pixels where `mask > 0.5`, all channels pooled.
pub fn region_psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, mask: &Tensor<T>) -> Result<f64> {
    let (_, h, w) = image_dims(a, b)?;
    if mask.shape() != [h, w] {
        return Err(Error::shape(format!("mask {:?} does not match image {h}x{w}", mask.shape())));
    }
    let m = mask.data();
    let half = T::lit(0.5);
    let (sum, n) = masked_mse(a, b, h * w, |i| m[i] > half);
    if n == 0 {
        return Err(Error::DegenerateMask("mask selects no pixels".into()));
    }
    Ok(psnr_from_mse(sum / n as f64))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - r;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable Gaussian filter over valid positions only.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = taps.iter().enumerate().map(|(k, t)| t * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = taps.iter().enumerate().map(|(k, t)| t * rows[(y0 + k) * ow + x0]).sum();
        }
    }
    out
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), dynamic range 1,
/// averaged over valid window positions and then over channels.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let (c, h, w) = image_dims(a, b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Size(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let taps = gaussian_taps();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let plane = h * w;
    let to64 = |t: &Tensor<T>, ch: usize| -> Vec<f64> {
        t.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    };
    let mut total = 0.0;
    for ch in 0..c {
        let x = to64(a, ch);
        let y = to64(b, ch);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|v| filter_valid(v, h, w, &taps));
        let n = mx.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / n as f64;
    }
    Ok(total / c as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub sample_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub region_psnr_db: Option<f64>,
}

impl MetricRow {
    /// Scores `output` against `reference`; the region column is left empty
    /// when no mask is given or the mask selects nothing.
    pub fn measure<T: Scalar>(
        sample_id: impl Into<String>,
        output: &Tensor<T>,
        reference: &Tensor<T>,
        mask: Option<&Tensor<T>>,
    ) -> Result<Self> {
        let region_psnr_db = match mask.map(|m| region_psnr(output, reference, m)) {
            None | Some(Err(Error::DegenerateMask(_))) => None,
            Some(r) => Some(r?),
        };
        Ok(MetricRow {
            sample_id: sample_id.into(),
            psnr_db: psnr(output, reference)?,
            ssim: ssim(output, reference)?,
            region_psnr_db,
        })
    }
}

/// Dataset-level means.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub region_psnr_db: Option<f64>,
    pub sample_count: usize,
}

impl MetricReport {
    pub fn from_rows(rows: &[MetricRow]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Usage("no samples to report".into()));
        }
        let n = rows.len() as f64;
        let regions: Vec<f64> = rows.iter().filter_map(|r| r.region_psnr_db).collect();
        Ok(MetricReport {
            psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            region_psnr_db: (!regions.is_empty()).then(|| regions.iter().sum::<f64>() / regions.len() as f64),
            sample_count: rows.len(),
        })
    }
}

fn push_row(out: &mut String, id: &str, psnr: f64, ssim: f64, region: Option<f64>) {
    let region = region.map_or_else(|| "NA".to_string(), |r| r.to_string());
    writeln!(out, "{id}\t{psnr}\t{ssim}\t{region}").expect("string write");
}

/// `sample_id<TAB>psnr<TAB>ssim<TAB>region_psnr` per row plus a `MEAN` row.
/// Numbers use the shortest representation that round-trips.
pub fn format_report(rows: &[MetricRow]) -> Result<String> {
    let mean = MetricReport::from_rows(rows)?;
    let mut out = String::new();
    for r in rows {
        push_row(&mut out, &r.sample_id, r.psnr_db, r.ssim, r.region_psnr_db);
    }
    push_row(&mut out, "MEAN", mean.psnr_db, mean.ssim, mean.region_psnr_db);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_are_normalized_and_symmetric() {
        let t = gaussian_taps();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(t[i], t[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn constant_images_differ_by_luminance_only() {
        let a = Tensor::<f64>::full(vec![1, 11, 11], 0.2).unwrap();
        let b = Tensor::<f64>::full(vec![1, 11, 11], 0.6).unwrap();
        let c1 = 1e-4;
        let want = (2.0 * 0.2 * 0.6 + c1) / (0.04 + 0.36 + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn report_region_column_optional() {
        let rows = vec![
            MetricRow { sample_id: "a".into(), psnr_db: 20.0, ssim: 0.5, region_psnr_db: None },
            MetricRow { sample_id: "b".into(), psnr_db: 30.0, ssim: 0.7, region_psnr_db: Some(25.0) },
        ];
        let text = format_report(&rows).unwrap();
        assert_eq!(text, "a\t20\t0.5\tNA\nb\t30\t0.7\t25\nMEAN\t25\t0.6\t25\n");
    }
}
