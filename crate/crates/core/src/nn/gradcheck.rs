use crate::error::{Error, Result};
use crate::nn::param::Parameters;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic - numeric| / max(1, |numeric|)
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Compares the gradient accumulated by `loss_fn` against central
/// differences for every parameter entry.
///
/// `loss_fn` must return the loss and *accumulate* its gradient into the
/// parameters; grads are zeroed before each call. It must be deterministic:
/// two evaluations at the unperturbed point that disagree bitwise abort the
/// check.
pub fn finite_diff_check<M, F>(model: &mut M, epsilon: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    M: Parameters,
    F: FnMut(&mut M) -> Result<f64>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::Parameter(format!(
            "finite-difference epsilon must lie in [1e-6, 1e-3], got {epsilon}"
        )));
    }
    model.zero_grad();
    let base = loss_fn(model)?;
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad().to_vec()).collect();
    model.zero_grad();
    let again = loss_fn(model)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Verification(format!(
            "loss is not deterministic: {base} vs {again}"
        )));
    }

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let n_params = analytic.len();
    for pi in 0..n_params {
        for idx in 0..analytic[pi].len() {
            let original = model.params()[pi].values()[idx];
            model.params_mut()[pi].values_mut()[idx] = original + epsilon;
            let up = loss_fn(model)?;
            model.params_mut()[pi].values_mut()[idx] = original - epsilon;
            let down = loss_fn(model)?;
            model.params_mut()[pi].values_mut()[idx] = original;

            let numeric = (up - down) / (2.0 * epsilon);
            let err = (analytic[pi][idx] - numeric).abs() / numeric.abs().max(1.0);
            if !err.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient comparison at {}[{idx}]",
                    model.params()[pi].name()
                )));
            }
            report.checked += 1;
            if err > report.max_relative_error || report.worst_param.is_empty() {
                report.max_relative_error = err;
                report.worst_param = model.params()[pi].name().to_string();
                report.worst_index = idx;
            }
        }
    }
    model.zero_grad();
    Ok(report)
}
