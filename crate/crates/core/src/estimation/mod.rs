//! Maximum-likelihood estimation of matching-function parameters.
//!
//! The log-likelihood is `ℓ(θ) = Σ_h μ̂_h log Π_h(θ)` over household types,
//! where `Π` are the equilibrium frequencies at the observed margins.
//! Two estimators are provided: nested (BFGS on `ℓ` with the equilibrium
//! re-solved per evaluation) and MPEC (Newton on the first-order conditions
//! of the Lagrangian in `(θ, u, v, λ)`). Optimizers work on `ℓ / N̂`, so
//! tolerances are on the frequency scale.

mod covariance;
mod inversion;
mod likelihood;
mod mpec;
mod nested;
mod optim;

pub use covariance::{covariance_homogeneous, covariance_homogeneous_with, margin_covariance, sandwich_covariance};
pub use inversion::surplus_nonparametric_cs;
pub use likelihood::{log_likelihood, loglik_gradient, loglik_gradient_with, predicted_frequencies};
pub use mpec::{fit_mpec, fit_mpec_from, mpec_residual, mpec_state_at, MpecState};
pub use nested::fit_nested;

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::SolverOptions;
use crate::error::{domain, Result};
use crate::types::{Market, Matching, ParamVector, TypeSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedData {
    pub space: TypeSpace,
    pub matching: Matching,
}

impl ObservedData {
    pub fn new(space: TypeSpace, matching: Matching) -> Result<Self> {
        if space.nx() != matching.nx() || space.ny() != matching.ny() {
            return crate::error::config("matching shape does not match the type space");
        }
        Ok(Self { space, matching })
    }

    /// Observed data with numbered labels.
    pub fn from_matching(matching: Matching) -> Self {
        let space = TypeSpace::numbered(matching.nx(), matching.ny());
        Self { space, matching }
    }

    pub fn n_hat(&self) -> DVector<f64> {
        self.matching.men_margins()
    }

    pub fn m_hat(&self) -> DVector<f64> {
        self.matching.women_margins()
    }

    pub fn household_count(&self) -> f64 {
        self.matching.household_count()
    }

    /// The market `(n̂, m̂)`; every type must be observed.
    pub fn market(&self) -> Result<Market> {
        let n = self.n_hat();
        let m = self.m_hat();
        if n.iter().chain(m.iter()).any(|v| *v <= 0.0) {
            return domain("every type needs a positive observed margin");
        }
        Market::new(self.space.clone(), n, m)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { space: self.space.clone(), matching: self.matching.scaled(k) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Nested,
    Mpec,
}

impl FitMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitMethod::Nested => "nested",
            FitMethod::Mpec => "mpec",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Equilibrium solves inside the estimator.
    pub solver: SolverOptions,
    pub max_iter: usize,
    /// Convergence threshold on the sup-norm of the frequency-scale gradient.
    pub grad_tol: f64,
    /// The optimizer keeps iterating until this sup-norm or a stall.
    pub target_grad: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::with_tol(1e-12), max_iter: 500, grad_tol: 1e-6, target_grad: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub theta_hat: ParamVector,
    /// `Σ μ̂ log Π` on the observed masses.
    pub loglik: f64,
    /// Sup-norm of the gradient of `ℓ / N̂` (nested) or of the Lagrangian (MPEC).
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub method: FitMethod,
    pub covariance: Option<DMatrix<f64>>,
    pub std_errors: Option<DVector<f64>>,
}
