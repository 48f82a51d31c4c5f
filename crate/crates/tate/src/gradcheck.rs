//! Central-difference gradient verification.
//!
//! The numeric side perturbs raw parameter tensors and re-runs the forward
//! closure; it never touches the graph's backward rules, so it stays an
//! independent oracle for them.

use crate::tensor::{Result, Tensor};

/// Named parameter tensors, the unit finite differencing works over.
pub type NamedParams = Vec<(String, Tensor)>;

/// Central-difference gradient of `f` with respect to every coordinate of
/// every parameter. `f` must be deterministic (dropout off).
pub fn numeric_gradient<F>(f: &F, params: &NamedParams, eps: f64) -> Result<NamedParams>
where
    F: Fn(&NamedParams) -> Result<f64>,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut work = params.clone();
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut grad = Tensor::zeros(params[pi].1.shape().to_vec());
        for ci in 0..params[pi].1.numel() {
            let orig = params[pi].1.data()[ci];
            work[pi].1.data_mut()[ci] = orig + eps;
            let plus = f(&work)?;
            work[pi].1.data_mut()[ci] = orig - eps;
            let minus = f(&work)?;
            work[pi].1.data_mut()[ci] = orig;
            grad.data_mut()[ci] = (plus - minus) / (2.0 * eps);
        }
        grads.push((params[pi].0.clone(), grad));
    }
    Ok(grads)
}

/// Max over all coordinates of `|analytic - numeric| / max(1, |numeric|)`.
pub fn max_relative_error(analytic: &NamedParams, numeric: &NamedParams) -> f64 {
    let mut worst = 0.0f64;
    for ((_, a), (_, n)) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let rel = (av - nv).abs() / nv.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Compares the caller's analytic gradients against central differences of
/// `f`, returning the max relative error.
pub fn finite_diff_check<F>(
    f: &F,
    params: &NamedParams,
    analytic: &NamedParams,
    eps: f64,
) -> Result<f64>
where
    F: Fn(&NamedParams) -> Result<f64>,
{
    let numeric = numeric_gradient(f, params, eps)?;
    Ok(max_relative_error(analytic, &numeric))
}

/// Per-parameter-group variant of [`finite_diff_check`]; one error per name.
pub fn finite_diff_check_per_group<F>(
    f: &F,
    params: &NamedParams,
    analytic: &NamedParams,
    eps: f64,
) -> Result<Vec<(String, f64)>>
where
    F: Fn(&NamedParams) -> Result<f64>,
{
    let numeric = numeric_gradient(f, params, eps)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|((name, a), (_, n))| {
            (
                name.clone(),
                max_relative_error(
                    &vec![(name.clone(), a.clone())],
                    &vec![(name.clone(), n.clone())],
                ),
            )
        })
        .collect())
}
