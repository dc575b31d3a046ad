use nalgebra::DVector;

use super::likelihood::Problem;
use super::optim::{minimize, BfgsOptions};
use super::{EstimationResult, FitMethod, FitOptions, ObservedData};
use crate::error::{domain, Result};
use crate::families::{check_theta, MatchingFunction};
use crate::types::ParamVector;

/// Nested maximum likelihood: BFGS on `−ℓ/N̂`, re-solving the equilibrium
/// at every trial θ from the last accepted unmatched masses.
pub fn fit_nested(
    family: &dyn MatchingFunction,
    observed: &ObservedData,
    theta_init: &ParamVector,
    opts: &FitOptions,
) -> Result<EstimationResult> {
    check_theta(family, theta_init)?;
    let problem = Problem::new(family, observed, &opts.solver)?;
    let start = problem.equilibrium(theta_init.as_slice(), &problem.m)?;
    if !problem.evaluate(theta_init.as_slice(), &start, false)?.value.is_finite() {
        return domain("log-likelihood is -inf at the initial parameters");
    }

    let mut warm = start.b;
    let objective = |t: &DVector<f64>| {
        let state = problem.equilibrium(t.as_slice(), &warm).ok()?;
        let eval = problem.evaluate(t.as_slice(), &state, true).ok()?;
        warm = state.b;
        Some((-eval.value, -eval.grad?))
    };
    let bfgs = BfgsOptions { max_iter: opts.max_iter, gtol: opts.target_grad };
    let out = minimize(objective, theta_init.values().clone(), &bfgs)
        .expect("objective is finite at the initial parameters");

    let gradient_norm = out.g.amax();
    Ok(EstimationResult {
        theta_hat: theta_init.with_values(out.x.as_slice())?,
        loglik: -out.f * problem.n_obs,
        gradient_norm,
        iterations: out.iterations,
        evaluations: out.evaluations,
        converged: gradient_norm <= opts.grad_tol,
        method: FitMethod::Nested,
        covariance: None,
        std_errors: None,
    })
}
