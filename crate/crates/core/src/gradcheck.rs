//! Central-difference gradient checking in 64-bit arithmetic.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::param::ParamSet;
use crate::tensor::Tensor;

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max |analytic − numeric| / max(1, |numeric|)` over every scalar checked.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares analytic gradients against central differences.
///
/// `loss` evaluates the scalar objective at the current parameter values and
/// accumulates its analytic gradient into `params`' grads. Inputs that should
/// be checked (frames, feature sequences) are registered in `params` like any
/// other weight.
pub fn grad_check<F>(params: &mut ParamSet<f64>, eps: f64, mut loss: F) -> Result<GradCheck>
where
    F: FnMut(&mut ParamSet<f64>) -> Result<f64>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(invalid("grad_check", format!("eps {eps} outside [1e-7, 1e-4]")));
    }
    params.zero_grad();
    loss(params)?;
    let analytic: Vec<Tensor<f64>> = params.iter().map(|p| p.grad.clone()).collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let ids: Vec<_> = params.iter().map(|p| p.name.clone()).collect();
    for (pi, name) in ids.iter().enumerate() {
        let id = params.id(name)?;
        for i in 0..params.value(id).len() {
            let orig = params.value(id).data()[i];
            params.value_mut(id).data_mut()[i] = orig + eps;
            let plus = loss(params)?;
            params.value_mut(id).data_mut()[i] = orig - eps;
            let minus = loss(params)?;
            params.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic[pi].data()[i] - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst_param.clone_from(name);
                report.worst_index = i;
            }
        }
    }
    params.zero_grad();
    Ok(report)
}
