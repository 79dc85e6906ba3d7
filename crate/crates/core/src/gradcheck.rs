//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor of [`relative_error`]; keeps near-zero gradients from
/// amplifying rounding noise into spurious failures.
pub const RELATIVE_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckFailure {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub tolerance: f64,
    pub max_relative_error: f64,
    pub worst_index: Option<usize>,
    pub failures: Vec<GradCheckFailure>,
    /// Entries skipped because the function is not smooth within one step,
    /// such as a relu kink inside the difference stencil.
    pub nonsmooth: Vec<usize>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares the tape gradient of the scalar function `f` at `x` against
/// central differences for every element of `x`.
pub fn grad_check<S, F>(f: F, x: &Tensor<S>, step: f64, tol: f64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_at(f, x, &all, step, tol)
}

/// As [`grad_check`], restricted to the listed flat indices.
pub fn grad_check_at<S, F>(
    f: F,
    x: &Tensor<S>,
    indices: &[usize],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let xv = tape.param(x.clone());
        let loss = f(&mut tape, xv)?;
        tape.backward(loss)?.get(xv)
    };
    let eval = |probe: Tensor<S>| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(probe);
        let loss = f(&mut tape, xv)?;
        Ok(tape.value(loss).item()?.as_f64())
    };
    let h = S::lit(step);
    let mut report = GradCheckReport {
        checked: 0,
        tolerance: tol,
        max_relative_error: 0.0,
        worst_index: None,
        failures: Vec::new(),
        nonsmooth: Vec::new(),
    };
    let shifted = |i: usize, d: S| -> Result<(f64, f64)> {
        let mut probe = x.clone();
        probe.data_mut()[i] = probe.data()[i] + d;
        // Use the offset actually representable after rounding.
        let offset = (probe.data()[i] - x.data()[i]).as_f64();
        Ok((eval(probe)?, offset))
    };
    let f0 = eval(x.clone())?;
    for &i in indices {
        let (fp, dp) = shifted(i, h)?;
        let (fm, dm) = shifted(i, -h)?;
        let (fp2, dp2) = shifted(i, S::lit(step / 2.0))?;
        let (fm2, dm2) = shifted(i, S::lit(-step / 2.0))?;
        let numeric = (fp - fm) / (dp - dm);
        // Gap between forward and backward slopes: h f'' for smooth f, so
        // halving the step halves it. A kink inside the stencil breaks that.
        let gap = (fp - f0) / dp - (fm - f0) / dm;
        let gap2 = (fp2 - f0) / dp2 - (fm2 - f0) / dm2;
        let noise = 64.0 * f64::EPSILON * f0.abs() / step;
        if (gap - 2.0 * gap2).abs() > (tol * numeric.abs().max(RELATIVE_FLOOR)).max(noise) {
            report.nonsmooth.push(i);
            continue;
        }
        let a = analytic.data()[i].as_f64();
        let rel = relative_error(a, numeric);
        report.checked += 1;
        if rel > report.max_relative_error || report.worst_index.is_none() {
            report.max_relative_error = rel;
            report.worst_index = Some(i);
        }
        if !(rel <= tol) {
            report.failures.push(GradCheckFailure {
                index: i,
                analytic: a,
                numeric,
                relative_error: rel,
            });
        }
    }
    Ok(report)
}
