//! Raw slice kernels shared by the tape and by non-differentiable callers.

use crate::scalar::Scalar;

/// Source taps of one output coordinate along one axis.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    w_lo: T,
    w_hi: T,
}

/// Half-pixel-centre sampling (`align_corners = false`), clamped to the edge.
fn axis_taps<T: Scalar>(n_in: usize, n_out: usize) -> Vec<Tap<T>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            let frac = if lo == hi { 0.0 } else { (src - lo as f64).min(1.0) };
            Tap { lo, hi, w_lo: T::lit(1.0 - frac), w_hi: T::lit(frac) }
        })
        .collect()
}

/// Bilinear resize of `planes` stacked `h x w` planes to `oh x ow`.
pub(crate) fn resize_forward<T: Scalar>(
    src: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let ty = axis_taps::<T>(h, oh);
    let tx = axis_taps::<T>(w, ow);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for y in &ty {
            let r0 = &plane[y.lo * w..(y.lo + 1) * w];
            let r1 = &plane[y.hi * w..(y.hi + 1) * w];
            for x in &tx {
                let top = x.w_lo * r0[x.lo] + x.w_hi * r0[x.hi];
                let bot = x.w_lo * r1[x.lo] + x.w_hi * r1[x.hi];
                out.push(y.w_lo * top + y.w_hi * bot);
            }
        }
    }
    out
}

/// Adjoint of [`resize_forward`].
pub(crate) fn resize_backward<T: Scalar>(
    grad: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    if (h, w) == (oh, ow) {
        return grad.to_vec();
    }
    let ty = axis_taps::<T>(h, oh);
    let tx = axis_taps::<T>(w, ow);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let g = &grad[p * oh * ow..(p + 1) * oh * ow];
        let plane = &mut out[p * h * w..(p + 1) * h * w];
        for (oy, y) in ty.iter().enumerate() {
            for (ox, x) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                plane[y.lo * w + x.lo] += y.w_lo * x.w_lo * v;
                plane[y.lo * w + x.hi] += y.w_lo * x.w_hi * v;
                plane[y.hi * w + x.lo] += y.w_hi * x.w_lo * v;
                plane[y.hi * w + x.hi] += y.w_hi * x.w_hi * v;
            }
        }
    }
    out
}

/// Unfolds a `[c, h, w]` input into `[c * 9, h * w]` 3x3 patches, zero padded.
pub(crate) fn im2col<T: Scalar>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * 9 * hw];
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); c * hw];
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += *s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += *s),
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_forward<T: Scalar>(src: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            let r0 = &plane[2 * y * w..(2 * y + 1) * w];
            let r1 = &plane[(2 * y + 1) * w..(2 * y + 2) * w];
            for x in 0..ow {
                out.push(quarter * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]));
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<T: Scalar>(grad: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for y in 0..oh {
            for x in 0..ow {
                let g = quarter * grad[p * oh * ow + y * ow + x];
                let base = p * h * w + 2 * y * w + 2 * x;
                out[base] = g;
                out[base + 1] = g;
                out[base + w] = g;
                out[base + w + 1] = g;
            }
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows_forward<T: Scalar>(src: &[T], cols: usize) -> Vec<T> {
    let mut out = src.to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        let inv = T::one() / total;
        row.iter_mut().for_each(|x| *x *= inv);
    }
    out
}

/// `dS = P * (dP - rowsum(dP * P))`.
pub(crate) fn softmax_rows_backward<T: Scalar>(probs: &[T], grad: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); probs.len()];
    for ((p, g), o) in probs.chunks(cols).zip(grad.chunks(cols)).zip(out.chunks_mut(cols)) {
        let dot: T = p.iter().zip(g).map(|(a, b)| *a * *b).sum();
        for ((o, p), g) in o.iter_mut().zip(p).zip(g) {
            *o = *p * (*g - dot);
        }
    }
    out
}


/// Query rows processed together by the fused attention kernels.
const ATTN_BLOCK: usize = 128;

/// Dimensions of a fused attention call: `n` queries, `m` keys, key width
/// `c`, value width `cv`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnDims {
    pub n: usize,
    pub m: usize,
    pub c: usize,
    pub cv: usize,
}

/// Row-normalized `exp(q_b k^T - lse)` for one block of query rows. When
/// `lse` is empty it is computed and appended.
fn attention_block<T: Scalar>(q_b: &[T], k: &[T], d: AttnDims, lse: &mut Vec<T>, row0: usize, p: &mut Vec<T>) {
    let rows = q_b.len() / d.c;
    p.clear();
    p.resize(rows * d.m, T::zero());
    T::gemm(rows, d.c, d.m, q_b, false, k, true, p, false);
    for (r, row) in p.chunks_mut(d.m).enumerate() {
        match lse.get(row0 + r) {
            Some(&l) => T::exp_shifted(row, l),
            None => {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                T::exp_shifted(row, max);
                let total: T = row.iter().copied().sum();
                let inv = T::one() / total;
                row.iter_mut().for_each(|x| *x *= inv);
                lse.push(max + total.ln());
            }
        }
    }
}

/// `softmax(q k^T) v` without materializing the full `n x m` matrix.
/// Returns the output `[n, cv]` and the per-row log-sum-exp.
pub(crate) fn attention_forward<T: Scalar>(q: &[T], k: &[T], v: &[T], d: AttnDims) -> (Vec<T>, Vec<T>) {
    let mut out = vec![T::zero(); d.n * d.cv];
    let mut lse = Vec::with_capacity(d.n);
    let mut p = Vec::new();
    for (b, (q_b, o_b)) in q.chunks(ATTN_BLOCK * d.c).zip(out.chunks_mut(ATTN_BLOCK * d.cv)).enumerate() {
        attention_block(q_b, k, d, &mut lse, b * ATTN_BLOCK, &mut p);
        T::gemm(q_b.len() / d.c, d.m, d.cv, &p, false, v, false, o_b, false);
    }
    (out, lse)
}

/// Adjoints `(dq, dk, dv)` of [`attention_forward`], recomputing each block
/// of probabilities from the saved log-sum-exp.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    out: &[T],
    lse: &[T],
    grad: &[T],
    d: AttnDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dq = vec![T::zero(); d.n * d.c];
    let mut dk = vec![T::zero(); d.m * d.c];
    let mut dv = vec![T::zero(); d.m * d.cv];
    let mut lse = lse.to_vec();
    let mut p = Vec::new();
    let mut dp = Vec::new();
    for b in 0..d.n.div_ceil(ATTN_BLOCK) {
        let r0 = b * ATTN_BLOCK;
        let rows = ATTN_BLOCK.min(d.n - r0);
        let q_b = &q[r0 * d.c..(r0 + rows) * d.c];
        let g_b = &grad[r0 * d.cv..(r0 + rows) * d.cv];
        let o_b = &out[r0 * d.cv..(r0 + rows) * d.cv];
        attention_block(q_b, k, d, &mut lse, r0, &mut p);
        T::gemm(d.m, rows, d.cv, &p, true, g_b, false, &mut dv, true);
        dp.clear();
        dp.resize(rows * d.m, T::zero());
        T::gemm(rows, d.cv, d.m, g_b, false, v, true, &mut dp, false);
        for r in 0..rows {
            let delta: T = g_b[r * d.cv..(r + 1) * d.cv].iter().zip(&o_b[r * d.cv..(r + 1) * d.cv]).map(|(a, b)| *a * *b).sum();
            let (prow, dprow) = (&p[r * d.m..(r + 1) * d.m], &mut dp[r * d.m..(r + 1) * d.m]);
            dprow.iter_mut().zip(prow).for_each(|(g, p)| *g = *p * (*g - delta));
        }
        T::gemm(rows, d.m, d.c, &dp, false, k, false, &mut dq[r0 * d.c..(r0 + rows) * d.c], false);
        T::gemm(d.m, rows, d.c, &dp, true, q_b, false, &mut dk, true);
    }
    (dq, dk, dv)
}
