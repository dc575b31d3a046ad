//! Matching-function equilibria with partial assignment.
//!
//! Couples form according to an aggregate matching function
//! `μ_xy = M_xy(μ_x0, μ_0y)` closed by the margin accounting equations.
//! The crate solves these systems, estimates the parameters of `M` by
//! maximum likelihood, and computes counterfactual equilibria.

pub mod counterfactual;
pub mod equilibrium;
mod error;
pub mod estimation;
pub mod families;
pub mod types;

pub use error::{MeqError, Result};
