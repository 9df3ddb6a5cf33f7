//! Central finite-difference gradient checking.
//!
//! Used by the test suites as an independent oracle for every differentiable
//! operation and for the full model stacks.

use super::{ParamStore, Tape, Var};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    /// Finite-difference step.
    pub eps: f64,
    /// A coordinate passes if its relative error is at most `rel`...
    pub rel: f64,
    /// ...or its absolute error is at most `abs`.
    pub abs: f64,
    /// Coordinates whose analytic and numeric gradients are both at most this
    /// large in magnitude are not checked.
    pub skip_below: f64,
}

impl Tolerance {
    /// Op-level checks: rel-err ≤ 1e-5 or abs-err ≤ 1e-8.
    pub const OP: Tolerance = Tolerance { eps: 1e-5, rel: 1e-5, abs: 1e-8, skip_below: 0.0 };
    /// Model-level checks: rel-err ≤ 1e-4 on coordinates with |grad| > 1e-6.
    pub const MODEL: Tolerance = Tolerance { eps: 1e-5, rel: 1e-4, abs: 0.0, skip_below: 1e-6 };
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Report {
    pub checked: usize,
    pub skipped: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares [`Tape::backward`] against central differences for every scalar
/// of every parameter in `store`. `loss` builds a scalar on a fresh tape.
pub fn check<F>(store: &ParamStore, tol: Tolerance, loss: F) -> Result<Report>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = loss(&mut tape, store)?;
    let analytic = tape.backward(out, store)?;
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = loss(&mut t, s)?;
        Ok(t.value(v).item())
    };
    let mut work = store.clone();
    let mut report = Report::default();
    for (id, grad) in analytic.iter() {
        for k in 0..grad.len() {
            let orig = work.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + tol.eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - tol.eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * tol.eps);
            let a = grad.data()[k];
            let scale = a.abs().max(numeric.abs());
            if scale <= tol.skip_below {
                report.skipped += 1;
                continue;
            }
            let abs = (a - numeric).abs();
            let rel = if scale > 0.0 { abs / scale } else { 0.0 };
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel > tol.rel && abs > tol.abs {
                report.failures += 1;
            }
        }
    }
    Ok(report)
}
