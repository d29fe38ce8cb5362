use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Outcome of comparing tape adjoints with central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |a - n| / max(1e-8, |a| + |n|)` over every coordinate.
    pub max_relative_error: f64,
    /// The same ratio on whole gradient vectors (all inputs concatenated,
    /// Euclidean norms). Unlike the per-coordinate figure it is not swamped
    /// by coordinates whose gradient sits near the central-difference
    /// roundoff floor of roughly `ulp(f) / eps`.
    pub norm_relative_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub coordinates: usize,
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_output(&tape, out)
}

fn scalar_output(tape: &Tape<f64>, out: Var) -> Result<f64> {
    tape.value(out)
        .item()
        .map_err(|_| Error::shape(format!("grad_check needs a scalar function, got {:?}", tape.shape(out))))
}

/// Checks the adjoints of the scalar function `f` at `inputs` in double
/// precision and returns the worst relative error over every coordinate.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_report(f, inputs, eps).map(|r| r.max_relative_error)
}

pub fn grad_check_report<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_output(&tape, out)?;
    let grads = tape.backward(out)?;
    drop(tape);

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        norm_relative_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        coordinates: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            probe[i].data_mut()[j] = x + eps;
            let plus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = x - eps;
            let minus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = x;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.map_or(0.0, |g| g.data()[j]);
            let d = (a - numeric).abs();
            diff2 += d * d;
            a2 += a * a;
            n2 += numeric * numeric;
            let rel = d / (a.abs() + numeric.abs()).max(1e-8);
            if rel > report.max_relative_error || rel.is_nan() {
                report.max_relative_error = rel;
                report.worst_input = i;
                report.worst_index = j;
            }
            report.coordinates += 1;
        }
    }
    report.norm_relative_error = diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-8);
    Ok(report)
}
