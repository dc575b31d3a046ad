use nalgebra::{DMatrix, DVector};

use super::ObservedData;
use crate::equilibrium::{ipfp_working, mass_scale, raw_jacobian, solve_ipfp, SolverOptions, Unmatched};
use crate::error::{config, MeqError, Result};
use crate::families::{check_theta, BoundFamily, MatchingFunction};
use crate::types::{flatten, household_dim, normalize_to_frequencies, HouseholdFrequencies, Market, ParamVector};

pub fn predicted_frequencies(
    family: &dyn MatchingFunction,
    theta: &ParamVector,
    market: &Market,
    opts: &SolverOptions,
) -> Result<HouseholdFrequencies> {
    let sol = solve_ipfp(family, theta, market, opts)?;
    if !sol.converged {
        return Err(MeqError::NotConverged { iterations: sol.outer_iterations, residual: sol.residual_sup_norm });
    }
    Ok(normalize_to_frequencies(&sol.matching)?.0)
}

/// `Σ μ̂ log Π`; zero observed cells contribute nothing, and an observed
/// cell with `Π = 0` makes the result `−∞`.
pub fn log_likelihood(observed: &ObservedData, pi: &HouseholdFrequencies) -> Result<f64> {
    if pi.nx() != observed.matching.nx() || pi.ny() != observed.matching.ny() {
        return config("frequencies and observed matching have different shapes");
    }
    Ok(weighted_log(&observed.matching.households(), &pi.flat()))
}

fn weighted_log(weights: &DVector<f64>, pi: &DVector<f64>) -> f64 {
    let mut total = 0.0;
    for (w, p) in weights.iter().zip(pi.iter()) {
        if *w > 0.0 {
            if *p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += w * p.ln();
        }
    }
    total
}

/// `∂ℓ/∂θ` on the observed masses, using the default fit solver settings.
pub fn loglik_gradient(
    family: &dyn MatchingFunction,
    theta: &ParamVector,
    observed: &ObservedData,
) -> Result<DVector<f64>> {
    loglik_gradient_with(family, theta, observed, &super::FitOptions::default().solver)
}

pub fn loglik_gradient_with(
    family: &dyn MatchingFunction,
    theta: &ParamVector,
    observed: &ObservedData,
    opts: &SolverOptions,
) -> Result<DVector<f64>> {
    check_theta(family, theta)?;
    let problem = Problem::new(family, observed, opts)?;
    let state = problem.equilibrium(theta.as_slice(), &problem.m)?;
    let eval = problem.evaluate(theta.as_slice(), &state, true)?;
    Ok(eval.grad.expect("gradient requested") * problem.n_obs)
}

/// Derivatives of the working-unit household masses.
pub(crate) struct Sensitivity {
    /// Flat households, couples row-major then singles.
    pub mu: DVector<f64>,
    /// `∂μ_h/∂θ^k`, one row per household.
    pub d_mu: DMatrix<f64>,
}

/// Implicit-function derivatives: `Δ·∂(a, b) = (c, d)` with
/// `c_x = −Σ_y ∂_θ M_xy`, `d_y = −Σ_x ∂_θ M_xy`.
pub(crate) fn sensitivity(bound: &dyn BoundFamily, a: &DVector<f64>, b: &DVector<f64>, dim: usize) -> Result<Sensitivity> {
    let (nx, ny) = (a.len(), b.len());
    let mut rhs = DMatrix::zeros(nx + ny, dim);
    let mut cells = Vec::with_capacity(nx * ny);
    for x in 0..nx {
        for y in 0..ny {
            let (v, da, db) = bound.value_grad(x, y, a[x], b[y]);
            let pg = bound.param_grad(x, y, a[x], b[y]);
            for &(k, g) in &pg {
                rhs[(x, k)] -= g;
                rhs[(nx + y, k)] -= g;
            }
            cells.push((v, da, db, pg));
        }
    }
    let sol = raw_jacobian(bound, a, b).lu().solve(&rhs).ok_or_else(|| MeqError::Singular("equilibrium Jacobian".into()))?;
    let h = household_dim(nx, ny);
    let mut mu = DVector::zeros(h);
    let mut d_mu = DMatrix::zeros(h, dim);
    for (c, (v, da, db, pg)) in cells.into_iter().enumerate() {
        let (x, y) = (c / ny, c % ny);
        mu[c] = v;
        for k in 0..dim {
            d_mu[(c, k)] = da * sol[(x, k)] + db * sol[(nx + y, k)];
        }
        for (k, g) in pg {
            d_mu[(c, k)] += g;
        }
    }
    for x in 0..nx {
        mu[nx * ny + x] = a[x];
        d_mu.row_mut(nx * ny + x).copy_from(&sol.row(x));
    }
    for y in 0..ny {
        mu[nx * ny + nx + y] = b[y];
        d_mu.row_mut(nx * ny + nx + y).copy_from(&sol.row(nx + y));
    }
    Ok(Sensitivity { mu, d_mu })
}

/// `D_θ log Π` from household mass derivatives; rows with `μ = 0` are zero.
pub(crate) fn d_log_pi(s: &Sensitivity) -> DMatrix<f64> {
    let total = s.mu.sum();
    let d_total = s.d_mu.row_sum();
    let mut out = DMatrix::zeros(s.d_mu.nrows(), s.d_mu.ncols());
    for h in 0..s.mu.len() {
        if s.mu[h] > 0.0 {
            let row = s.d_mu.row(h) / s.mu[h] - &d_total / total;
            out.row_mut(h).copy_from(&row);
        }
    }
    out
}

/// The frequency-scale estimation problem `max ℓ(θ)/N̂`.
pub(crate) struct Problem<'a> {
    pub family: &'a dyn MatchingFunction,
    /// Margins in working units.
    pub n: DVector<f64>,
    pub m: DVector<f64>,
    pub scale: f64,
    pub pi_hat: DVector<f64>,
    pub n_obs: f64,
    pub solver: SolverOptions,
}

pub(crate) struct Evaluation {
    pub value: f64,
    pub grad: Option<DVector<f64>>,
}

impl<'a> Problem<'a> {
    pub fn new(family: &'a dyn MatchingFunction, observed: &ObservedData, solver: &SolverOptions) -> Result<Self> {
        solver.validate()?;
        let (nx, ny) = (observed.matching.nx(), observed.matching.ny());
        if family.shape() != (nx, ny) {
            let (fx, fy) = family.shape();
            return config(format!("family is {fx}x{fy} but the data are {nx}x{ny}"));
        }
        let (freq, n_obs) = normalize_to_frequencies(&observed.matching)?;
        let market = observed.market()?;
        let scale = mass_scale(family, market.total());
        Ok(Self {
            family,
            n: &market.n / scale,
            m: &market.m / scale,
            scale,
            pi_hat: freq.flat(),
            n_obs,
            solver: solver.clone(),
        })
    }

    pub fn nx(&self) -> usize {
        self.n.len()
    }

    pub fn ny(&self) -> usize {
        self.m.len()
    }

    /// IPFP warm-started from `warm_b` (working units).
    pub fn equilibrium(&self, theta: &[f64], warm_b: &DVector<f64>) -> Result<Unmatched> {
        let bound = self.family.bind(theta);
        let init = warm_b.zip_map(&self.m, |w, m| if w > 0.0 && w.is_finite() { w.min(m) } else { m });
        let state = ipfp_working(bound.as_ref(), &self.n, &self.m, &init, &self.solver);
        if !state.converged {
            return Err(MeqError::NotConverged { iterations: state.iterations, residual: state.residual });
        }
        Ok(state)
    }

    pub fn households(&self, bound: &dyn BoundFamily, state: &Unmatched) -> DVector<f64> {
        let mu_xy = DMatrix::from_fn(self.nx(), self.ny(), |x, y| bound.value(x, y, state.a[x], state.b[y]));
        flatten(&mu_xy, &state.a, &state.b)
    }

    /// `ℓ/N̂` and optionally its gradient at an equilibrium state.
    pub fn evaluate(&self, theta: &[f64], state: &Unmatched, with_grad: bool) -> Result<Evaluation> {
        let bound = self.family.bind(theta);
        if !with_grad {
            let mu = self.households(bound.as_ref(), state);
            let total = mu.sum();
            return Ok(Evaluation { value: weighted_log(&self.pi_hat, &(mu / total)), grad: None });
        }
        let s = sensitivity(bound.as_ref(), &state.a, &state.b, theta.len())?;
        let total = s.mu.sum();
        let value = weighted_log(&self.pi_hat, &(&s.mu / total));
        let mut grad = DVector::zeros(theta.len());
        for h in 0..s.mu.len() {
            let w = self.pi_hat[h];
            if w > 0.0 && s.mu[h] > 0.0 {
                grad += s.d_mu.row(h).transpose() * (w / s.mu[h]);
            }
        }
        grad -= s.d_mu.row_sum().transpose() * (self.pi_hat.sum() / total);
        Ok(Evaluation { value, grad: Some(grad) })
    }
}
