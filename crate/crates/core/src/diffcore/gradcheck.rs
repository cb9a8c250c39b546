//! Central finite-difference gradient checking.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamGroup};

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    /// max over parameters of `|analytic - numeric| / (|numeric| + 1e-12)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Tensor name and flat index of the worst relative error.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Numeric gradient `(L(p + eps e_i) - L(p - eps e_i)) / (2 eps)` for every
/// trainable value. The compensation group is skipped (it is not trained).
pub fn central_difference<F>(params: &ModelParams, eps: f64, loss: F) -> Result<ModelParams>
where
    F: Fn(&ModelParams) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::config(format!("finite-difference step must be > 0, got {eps}")));
    }
    let mut numeric = params.zeros_like();
    let mut work = params.clone();
    let n_tensors = params.tensors().len();
    for ti in 0..n_tensors {
        let (group, len) = {
            let t = &params.tensors()[ti];
            (t.group, t.data.len())
        };
        if group == ParamGroup::Compensation {
            continue;
        }
        for i in 0..len {
            let orig = params.tensors()[ti].data[i];
            work.tensors_mut()[ti].data[i] = orig + eps;
            let up = loss(&work)?;
            work.tensors_mut()[ti].data[i] = orig - eps;
            let down = loss(&work)?;
            work.tensors_mut()[ti].data[i] = orig;
            numeric.tensors_mut()[ti].data[i] = (up - down) / (2.0 * eps);
        }
    }
    Ok(numeric)
}

/// Compares an analytic gradient against central differences of `loss`.
pub fn finite_difference_check<F>(
    params: &ModelParams,
    analytic: &ModelParams,
    eps: f64,
    loss: F,
) -> Result<FdReport>
where
    F: Fn(&ModelParams) -> Result<f64>,
{
    let numeric = central_difference(params, eps, loss)?;
    Ok(compare(analytic, &numeric))
}

pub fn compare(analytic: &ModelParams, numeric: &ModelParams) -> FdReport {
    let mut report = FdReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (a, n) in analytic.tensors().iter().zip(numeric.tensors()) {
        if a.group == ParamGroup::Compensation {
            continue;
        }
        for (i, (&ga, &gn)) in a.data.iter().zip(n.data).enumerate() {
            let abs = (ga - gn).abs();
            let rel = abs / (gn.abs() + 1e-12);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((a.name.clone(), i));
            }
        }
    }
    report
}
