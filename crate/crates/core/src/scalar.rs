use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Precision a computation runs in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarMode {
    /// Single precision, used for training and inference.
    Compute32,
    /// Double precision, used for gradient checks and oracle comparisons.
    Check64,
}

/// Floating-point element type of every tensor in the crate.
///
/// Implemented for `f32` (training) and `f64` (verification). The only
/// precision-specific piece is the dense matrix kernel.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    const MODE: ScalarMode;

    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn lit(v: f64) -> Self;

    /// `c = op(a) * op(b)` (or `c += ...` when `accumulate`), where `op(a)` is
    /// `m x k` and `op(b)` is `k x n`, all row-major. A transposed operand is
    /// stored in its untransposed layout (`k x m` for `a`, `n x k` for `b`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    /// `x = exp(x - shift)` in place.
    fn exp_shifted(xs: &mut [Self], shift: Self);
}

/// Cephes-style `expf`: range reduction by `ln 2` and a degree-6 polynomial,
/// within a few ulp of `f32::exp` on `[-87, 88]`. Branch-free so the slice
/// loop vectorizes.
#[inline]
fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    const ROUND: f32 = 12_582_912.0;
    let x = x.max(-87.0).min(88.0);
    let t = x * LOG2E + ROUND;
    // the low mantissa bits of `t` hold round(x * log2 e)
    let k = t.to_bits() as i32 - ROUND.to_bits() as i32;
    let n = t - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.987_569_2e-4_f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_1e-1;
    let y = p * r * r + r + 1.0;
    y * f32::from_bits(((k + 127) as u32) << 23)
}

struct GemmLayout {
    rsa: isize,
    csa: isize,
    rsb: isize,
    csb: isize,
}

fn layout(m: usize, k: usize, n: usize, a_trans: bool, b_trans: bool) -> GemmLayout {
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    GemmLayout { rsa, csa, rsb, csb }
}

fn check_gemm_lengths(m: usize, k: usize, n: usize, a: usize, b: usize, c: usize) {
    assert_eq!(a, m * k, "gemm: lhs length");
    assert_eq!(b, k * n, "gemm: rhs length");
    assert_eq!(c, m * n, "gemm: output length");
}

macro_rules! impl_scalar {
    ($t:ty, $mode:expr, $gemm:path, $exp:path) => {
        impl Scalar for $t {
            const MODE: ScalarMode = $mode;

            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }

            fn exp_shifted(xs: &mut [Self], shift: Self) {
                xs.iter_mut().for_each(|x| *x = $exp(*x - shift));
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                check_gemm_lengths(m, k, n, a.len(), b.len(), c.len());
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        c.iter_mut().for_each(|x| *x = 0.0);
                    }
                    return;
                }
                let l = layout(m, k, n, a_trans, b_trans);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the lengths are checked above and the strides describe
                // dense row-major (or transposed) storage inside those bounds.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        l.rsa,
                        l.csa,
                        b.as_ptr(),
                        l.rsb,
                        l.csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, ScalarMode::Compute32, matrixmultiply::sgemm, exp_f32);
impl_scalar!(f64, ScalarMode::Check64, matrixmultiply::dgemm, f64::exp);
