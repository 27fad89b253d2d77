//! Finite-difference gradient checking against the tape.
//!
//! Derivatives are estimated with the five-point stencil
//! `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`, whose truncation
//! error is O(h⁴). Entry errors are relative to
//! `max(|a|, |n|, 1e-4·max|a|, 1e-8)` so that entries far below the
//! gradient's own scale are judged against that scale rather than
//! against rounding noise.

use std::collections::HashMap;

use crate::error::{EggError, Result};
use crate::tensor::{Matrix, ParamStore, Tape, Var};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub analytic: Matrix,
    pub numeric: Matrix,
}

fn check_step(step: f64) -> Result<()> {
    if step <= 0.0 || !step.is_finite() {
        return Err(EggError::InvalidArgument(format!("finite-difference step {step} must be positive")));
    }
    Ok(())
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EggError::NonFinite("finite difference probe"))
    }
}

fn stencil(mut at: impl FnMut(f64) -> Result<f64>, step: f64) -> Result<f64> {
    let (p1, m1) = (at(step)?, at(-step)?);
    let (p2, m2) = (at(2.0 * step)?, at(-2.0 * step)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step))
}

pub(crate) fn worst_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
    let floor = (1e-4 * scale).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Compares the tape gradient of `f` at `at` with finite differences of
/// step `step`. `f` must map its input node to a `1×1` node.
pub fn finite_diff_check<F>(f: F, at: &Matrix, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    check_step(step)?;
    let mut tape = Tape::new();
    let x = tape.input(at.clone())?;
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Matrix::zeros(at.rows(), at.cols()));

    let eval = |m: Matrix| -> Result<f64> {
        let mut t = Tape::new();
        let x = t.input(m)?;
        let y = f(&mut t, x)?;
        finite(t.scalar(y))
    };
    let mut numeric = Matrix::zeros(at.rows(), at.cols());
    for idx in 0..at.len() {
        numeric.as_mut_slice()[idx] = stencil(
            |d| {
                let mut m = at.clone();
                m.as_mut_slice()[idx] += d;
                eval(m)
            },
            step,
        )?;
    }
    Ok(GradCheckReport {
        max_relative_error: worst_error(analytic.as_slice(), numeric.as_slice()),
        analytic,
        numeric,
    })
}

/// Like [`finite_diff_check`], but differentiates with respect to every
/// parameter of `store`. The reported matrices are the parameters'
/// gradients flattened into one `1×N` row in store order.
pub fn finite_diff_params<F>(store: &ParamStore, f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    check_step(step)?;
    let mut tape = Tape::new();
    let y = f(&mut tape, store)?;
    let grads = tape.backward(y)?;
    let by_id: HashMap<_, _> = tape.param_grads(&grads).into_iter().collect();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut probe = store.clone();
    for id in store.ids() {
        let (r, c) = store.value(id).shape();
        let g = by_id.get(&id).cloned().unwrap_or_else(|| Matrix::zeros(r, c));
        analytic.extend_from_slice(g.as_slice());
        for idx in 0..r * c {
            let orig = store.value(id).as_slice()[idx];
            let n = stencil(
                |d| {
                    probe.value_mut(id).as_mut_slice()[idx] = orig + d;
                    let mut t = Tape::new();
                    let y = f(&mut t, &probe)?;
                    finite(t.scalar(y))
                },
                step,
            );
            probe.value_mut(id).as_mut_slice()[idx] = orig;
            numeric.push(n?);
        }
    }
    let len = analytic.len();
    Ok(GradCheckReport {
        max_relative_error: worst_error(&analytic, &numeric),
        analytic: Matrix::new(1, len, analytic)?,
        numeric: Matrix::new(1, len, numeric)?,
    })
}
