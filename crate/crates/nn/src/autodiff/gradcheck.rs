use super::graph::{Graph, Var};
use super::params::ParameterStore;
use super::tensor::{Precision, Real};
use crate::NnError;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat entry index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `loss` against central differences
/// for every entry of every parameter. The loss closure must be
/// deterministic (build inference graphs, no dropout).
pub fn grad_check<T, F>(params: &mut ParameterStore<T>, eps: f64, loss: F) -> Result<GradCheckReport, NnError>
where
    T: Real,
    F: Fn(&mut Graph<'_, T>) -> Result<Var, NnError>,
{
    grad_check_limited(params, eps, None, loss)
}

/// As [`grad_check`], checking at most `limit` evenly spaced entries per
/// parameter when a limit is given.
pub fn grad_check_limited<T, F>(
    params: &mut ParameterStore<T>,
    eps: f64,
    limit: Option<usize>,
    loss: F,
) -> Result<GradCheckReport, NnError>
where
    T: Real,
    F: Fn(&mut Graph<'_, T>) -> Result<Var, NnError>,
{
    if T::PRECISION == Precision::Single {
        return Err(NnError::SinglePrecisionGradCheck);
    }
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(NnError::Config(format!("finite-difference step {eps} outside [1e-7, 1e-4]")));
    }
    let grads = {
        let mut g = Graph::new(params);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let eval = |params: &ParameterStore<T>| -> Result<f64, NnError> {
        let mut g = Graph::new(params);
        let l = loss(&mut g)?;
        Ok(g.value(l).item().to_f64().unwrap_or(f64::NAN))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.value(id).len();
        let analytic = grads.get(id).map(|t| t.data.clone()).unwrap_or_else(|| vec![T::zero(); n]);
        let step = match limit {
            Some(l) if l > 0 && n > l => n.div_ceil(l),
            _ => 1,
        };
        for k in (0..n).step_by(step) {
            let orig = params.value(id).data[k];
            params.value_mut(id).data[k] = orig + T::of(eps);
            let plus = eval(params)?;
            params.value_mut(id).data[k] = orig - T::of(eps);
            let minus = eval(params)?;
            params.value_mut(id).data[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[k].to_f64().unwrap_or(f64::NAN), numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = Some((params.get(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}
