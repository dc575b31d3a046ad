//! Aggregate matching functions `M^θ_xy(μ_x0, μ_0y)`.
//!
//! A family is bound to a parameter vector once ([`MatchingFunction::bind`])
//! and then evaluated cell by cell; binding precomputes the per-cell
//! parameters so the solver's inner loops only see masses.

mod etu;
mod index;
mod kernel;
mod loglinear;
mod surplus;

pub use etu::{etu_distance, EtuGkw, EtuParams, HarmonicMean};
pub use index::LinearIndex;
pub use kernel::CellSecondOrder;
pub use loglinear::{ChooSiow, CobbDouglas, Menzel, SearchMatching};
pub use surplus::{
    age_education_index, age_education_names, surplus_parametric, SurplusTable, AGE_EDU_DIM,
};

use crate::error::{config, domain, MeqError, Result};
use crate::types::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyDescriptor {
    pub name: String,
    pub theta_dim: usize,
    pub homogeneous_degree_one: bool,
    pub separable_in_parameters: bool,
    pub has_theta_free_ratio: bool,
    /// Degree `k` with `M(λa, λb) = λ^k M(a, b)`, when one exists for every cell.
    pub homogeneity_degree: Option<f64>,
}

/// A family evaluated at a fixed θ.
pub trait BoundFamily: Send + Sync {
    fn value(&self, x: usize, y: usize, a: f64, b: f64) -> f64;

    /// `(M, ∂M/∂a, ∂M/∂b)`.
    fn value_grad(&self, x: usize, y: usize, a: f64, b: f64) -> (f64, f64, f64);

    /// Nonzero entries of `∂M/∂θ`.
    fn param_grad(&self, x: usize, y: usize, a: f64, b: f64) -> Vec<(usize, f64)>;

    fn second_order(&self, x: usize, y: usize, a: f64, b: f64) -> CellSecondOrder;

    fn is_prohibited(&self, x: usize, y: usize) -> bool;
}

pub trait MatchingFunction: Send + Sync {
    fn descriptor(&self) -> FamilyDescriptor;

    /// `(|X|, |Y|)`.
    fn shape(&self) -> (usize, usize);

    fn param_names(&self) -> Vec<String>;

    /// Caller guarantees `theta.len() == theta_dim`.
    fn bind<'a>(&'a self, theta: &[f64]) -> Box<dyn BoundFamily + 'a>;

    /// `g(ã, b̃)` with `M(ãa, b̃b) = g(ã, b̃) M(a, b)` for every θ.
    fn ratio_form(&self, _x: usize, _y: usize, _ra: f64, _rb: f64) -> Option<f64> {
        None
    }

    /// `(g, ∂g/∂ã, ∂g/∂b̃)`, available exactly when `ratio_form` is.
    fn ratio_form_grad(&self, _x: usize, _y: usize, _ra: f64, _rb: f64) -> Option<(f64, f64, f64)> {
        None
    }
}

/// Parameter vector with the family's names.
pub fn param_vector(family: &dyn MatchingFunction, values: &[f64]) -> Result<ParamVector> {
    ParamVector::new(values.to_vec(), family.param_names())
}

pub(crate) fn check_theta(family: &dyn MatchingFunction, theta: &ParamVector) -> Result<()> {
    let d = family.descriptor().theta_dim;
    if theta.len() != d {
        return config(format!(
            "{} expects {d} parameters, got {}",
            family.descriptor().name,
            theta.len()
        ));
    }
    if theta.as_slice().iter().any(|v| !v.is_finite()) {
        return domain("parameters must be finite");
    }
    Ok(())
}

fn check_cell(family: &dyn MatchingFunction, theta: &ParamVector, x: usize, y: usize, a: f64, b: f64) -> Result<()> {
    check_theta(family, theta)?;
    let (nx, ny) = family.shape();
    if x >= nx || y >= ny {
        return domain(format!("cell ({x}, {y}) outside {nx}x{ny}"));
    }
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return domain(format!("unmatched masses must be positive, got a={a}, b={b}"));
    }
    Ok(())
}

pub fn mf_value(family: &dyn MatchingFunction, theta: &ParamVector, x: usize, y: usize, a: f64, b: f64) -> Result<f64> {
    check_cell(family, theta, x, y, a, b)?;
    Ok(family.bind(theta.as_slice()).value(x, y, a, b))
}

pub fn mf_grad_unmatched(
    family: &dyn MatchingFunction,
    theta: &ParamVector,
    x: usize,
    y: usize,
    a: f64,
    b: f64,
) -> Result<(f64, f64)> {
    check_cell(family, theta, x, y, a, b)?;
    let (_, da, db) = family.bind(theta.as_slice()).value_grad(x, y, a, b);
    Ok((da, db))
}

pub fn mf_grad_params(
    family: &dyn MatchingFunction,
    theta: &ParamVector,
    x: usize,
    y: usize,
    a: f64,
    b: f64,
) -> Result<Vec<f64>> {
    check_cell(family, theta, x, y, a, b)?;
    let mut out = vec![0.0; theta.len()];
    for (k, g) in family.bind(theta.as_slice()).param_grad(x, y, a, b) {
        out[k] += g;
    }
    Ok(out)
}

pub fn mf_ratio_form(family: &dyn MatchingFunction, x: usize, y: usize, ra: f64, rb: f64) -> Result<f64> {
    let d = family.descriptor();
    if !d.has_theta_free_ratio {
        return Err(MeqError::Capability(format!("{} has no parameter-free ratio form", d.name)));
    }
    if !(ra > 0.0 && rb > 0.0) {
        return domain(format!("ratios must be positive, got {ra}, {rb}"));
    }
    family
        .ratio_form(x, y, ra, rb)
        .ok_or_else(|| MeqError::Capability(format!("{} has no parameter-free ratio form", d.name)))
}

pub(crate) fn cell_names(prefix: &str, cells: &[(usize, usize)]) -> Vec<String> {
    cells.iter().map(|(x, y)| format!("{prefix}_{}_{}", x + 1, y + 1)).collect()
}
