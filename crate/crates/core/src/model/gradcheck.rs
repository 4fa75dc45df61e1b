//! Finite-difference validation of the backward pass.
//!
//! The check promotes a module to f64, computes analytic gradients with one
//! forward/backward pass, then perturbs every single parameter by `+-eps` and
//! compares against the central difference of the loss. The backward pass is
//! exercised end to end: both branches, pooling routing, ReLU masks, the
//! dense head and the softmax cross-entropy gradient.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::layers::softmax_cross_entropy;
use crate::model::module::ModuleParams;

/// Result of a gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Largest relative error over all parameters.
    pub max_relative_error: f64,
    /// Number of scalar parameters checked.
    pub parameters: usize,
}

/// Compare analytic and numeric gradients of the cross-entropy loss for one
/// example. `epsilon` is the central-difference step (1e-5 is a good value in
/// f64). The relative error for a parameter is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn gradient_check(
    module: &ModuleParams<f32>,
    branch1: &[f32],
    branch2: &[f32],
    target: usize,
    epsilon: f64,
) -> Result<GradCheckReport> {
    if target >= crate::rules::ResultCode::COUNT {
        return Err(Error::Model(format!("target class {target} out of range")));
    }
    if branch1.len() != module.branch1.input_len || branch2.len() != module.branch2.input_len {
        return Err(Error::Model(format!(
            "feature lengths ({}, {}) do not match module inputs ({}, {})",
            branch1.len(),
            branch2.len(),
            module.branch1.input_len,
            module.branch2.input_len
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Model("epsilon must be positive".into()));
    }

    let mut params = module.to_f64();
    let x1 = Array2::from_shape_vec(
        (1, branch1.len()),
        branch1.iter().map(|v| *v as f64).collect(),
    )
    .expect("shape matches data length");
    let x2 = Array2::from_shape_vec(
        (1, branch2.len()),
        branch2.iter().map(|v| *v as f64).collect(),
    )
    .expect("shape matches data length");
    let targets = [target];

    let loss_at = |p: &ModuleParams<f64>| -> f64 {
        let (logits, _) = p.forward(x1.view(), x2.view());
        softmax_cross_entropy(logits.view(), &targets).0
    };

    // Analytic gradients.
    let (logits, cache) = params.forward(x1.view(), x2.view());
    let (_, grad_logits) = softmax_cross_entropy(logits.view(), &targets);
    let analytic = params.backward(&cache, grad_logits.view());
    let analytic_flat: Vec<f64> = analytic
        .flat_views()
        .iter()
        .flat_map(|v| v.iter().copied())
        .collect();

    // Numeric gradients, one parameter at a time.
    let mut max_err = 0.0f64;
    let n_params = analytic_flat.len();
    let mut flat_index = 0usize;
    let n_tensors = params.flat_views().len();
    for tensor in 0..n_tensors {
        let len = params.flat_views()[tensor].len();
        for j in 0..len {
            let orig = params.flat_views()[tensor][j];
            params.flat_views_mut()[tensor][j] = orig + epsilon;
            let up = loss_at(&params);
            params.flat_views_mut()[tensor][j] = orig - epsilon;
            let down = loss_at(&params);
            params.flat_views_mut()[tensor][j] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic_flat[flat_index];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            let err = (a - numeric).abs() / denom;
            if err > max_err {
                max_err = err;
            }
            flat_index += 1;
        }
    }
    debug_assert_eq!(flat_index, n_params);
    Ok(GradCheckReport {
        max_relative_error: max_err,
        parameters: n_params,
    })
}

/// [`gradient_check`] with a step-size ladder. Central differences sit on a
/// U-shaped error curve: a step that straddles a ReLU kink or flips a pooling
/// argmax produces a large spurious error, while a very small step drowns in
/// cancellation. A genuine backward-pass bug fails at every step size, so the
/// check passes if any step on the ladder brings the error under `tolerance`;
/// otherwise the best (smallest-error) report is returned.
pub fn gradient_check_robust(
    module: &ModuleParams<f32>,
    branch1: &[f32],
    branch2: &[f32],
    target: usize,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if !(tolerance > 0.0) {
        return Err(Error::Model("tolerance must be positive".into()));
    }
    let mut best: Option<GradCheckReport> = None;
    for epsilon in [1e-5, 2.5e-6, 6.25e-7] {
        let report = gradient_check(module, branch1, branch2, target, epsilon)?;
        if best.map_or(true, |b: GradCheckReport| {
            report.max_relative_error < b.max_relative_error
        }) {
            best = Some(report);
        }
        if report.max_relative_error < tolerance {
            break;
        }
    }
    Ok(best.expect("ladder ran at least once"))
}
