//! Central-difference gradient checking.

use super::tape::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub entries_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// `|a - n| / (|a| + |n| + 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-8)
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// differences for every entry of every parameter in `params`.
///
/// `loss_fn` must return the loss and the tape gradients at the given
/// parameters. It is evaluated twice at the starting point; differing values
/// are reported as a harness error.
pub fn grad_check<F>(params: &mut ParamStore, eps: f64, tol: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients)>,
{
    let ids: Vec<ParamId> = params.ids().collect();
    grad_check_subset(params, &ids, eps, tol, loss_fn)
}

/// As [`grad_check`], restricted to the listed parameters.
pub fn grad_check_subset<F>(
    params: &mut ParamStore,
    ids: &[ParamId],
    eps: f64,
    tol: f64,
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients)>,
{
    if !(1e-5..=1e-3).contains(&eps) {
        return Err(Error::input(format!("eps {eps} outside [1e-5, 1e-3]")));
    }
    let (base, grads) = loss_fn(params)?;
    let (again, _) = loss_fn(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Harness(format!(
            "loss function is not deterministic ({base} vs {again})"
        )));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        entries_checked: 0,
        tolerance: tol,
    };
    for &id in ids {
        let analytic = grads.param_or_zero(params, id);
        for i in 0..analytic.data().len() {
            let original = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = original + eps;
            let plus = loss_fn(params)?.0;
            params.get_mut(id).data_mut()[i] = original - eps;
            let minus = loss_fn(params)?.0;
            params.get_mut(id).data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = relative_error(a, numeric);
            report.entries_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), i));
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
