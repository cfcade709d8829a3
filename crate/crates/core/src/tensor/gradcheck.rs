//! Central finite-difference gradient checker.
//!
//! Functions with kinks (relu, max-pool) are only differentiable away from
//! the kink; callers must keep inputs at least `eps` away from ties and zeros
//! before checking.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Default finite-difference step.
pub const GRAD_CHECK_EPS: f64 = 1e-5;

/// Where the worst disagreement between analytic and numeric gradients sits.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Max over all input coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    grad_check_report(f, inputs, eps).map(|r| r.max_rel_error)
}

pub fn grad_check_report<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    grad_check_scaled(f, inputs, &vec![1.0; inputs.len()], eps)
}

/// Like [`grad_check_report`], but input `i`'s analytic gradient is compared
/// with `scale[i]` times the numeric one. Inputs behind a gradient reversal
/// of strength λ use `-λ`.
pub fn grad_check_scaled<F>(f: F, inputs: &[Tensor], scale: &[f64], eps: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if scale.len() != inputs.len() {
        return Err(Error::Contract(format!("{} scales for {} inputs", scale.len(), inputs.len())));
    }
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let eval = |which: usize, index: usize, delta: f64| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let mut t = t.clone();
                if k == which {
                    t.data_mut()[index] += delta;
                }
                tape.constant(t)
            })
            .collect();
        let v = f(&tape, &vars)
            .map_err(|e| match e {
                Error::NonFinite { context } => Error::NonFinite {
                    context: format!("{context} (input {which}, coordinate {index})"),
                },
                other => other,
            })?
            .item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { context: format!("input {which}, coordinate {index}") })
        }
    };

    let mut worst = GradCheckReport { max_rel_error: 0.0, input: 0, index: 0, analytic: 0.0, numeric: 0.0 };
    for (which, input) in inputs.iter().enumerate() {
        for index in 0..input.len() {
            let numeric = scale[which] * (eval(which, index, eps)? - eval(which, index, -eps)?) / (2.0 * eps);
            let a = analytic[which].data()[index];
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if rel > worst.max_rel_error {
                worst = GradCheckReport { max_rel_error: rel, input: which, index, analytic: a, numeric };
            }
        }
    }
    Ok(worst)
}
