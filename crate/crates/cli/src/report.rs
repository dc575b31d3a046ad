//! JSON result documents.

use std::path::Path;

use meq_core::counterfactual::CounterfactualResult;
use meq_core::equilibrium::EquilibriumSolution;
use meq_core::estimation::EstimationResult;
use meq_core::families::SurplusTable;
use meq_core::types::{Matching, ParamVector, TypeSpace};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CliError, Result};
use crate::io::write_file;

/// A float that serializes non-finite values as `"-inf"`, `"inf"` or `"nan"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            v if v.is_finite() => s.serialize_f64(v),
            v if v.is_nan() => s.serialize_str("nan"),
            v if v > 0.0 => s.serialize_str("inf"),
            _ => s.serialize_str("-inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Real(v)),
            Raw::Str(s) => match s.as_str() {
                "-inf" => Ok(Real(f64::NEG_INFINITY)),
                "inf" => Ok(Real(f64::INFINITY)),
                "nan" => Ok(Real(f64::NAN)),
                other => Err(serde::de::Error::custom(format!("expected a number, got {other:?}"))),
            },
        }
    }
}

fn reals(v: &DVector<f64>) -> Vec<Real> {
    v.iter().copied().map(Real).collect()
}

fn table(m: &DMatrix<f64>) -> Vec<Vec<Real>> {
    m.row_iter().map(|r| r.iter().copied().map(Real).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Named {
    pub name: String,
    pub value: Real,
}

pub fn named(theta: &ParamVector) -> Vec<Named> {
    theta.names().iter().zip(theta.as_slice()).map(|(n, v)| Named { name: n.clone(), value: Real(*v) }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingDoc {
    pub x_labels: Vec<String>,
    pub y_labels: Vec<String>,
    pub mu_xy: Vec<Vec<Real>>,
    pub mu_x0: Vec<Real>,
    pub mu_0y: Vec<Real>,
}

impl MatchingDoc {
    pub fn new(space: &TypeSpace, m: &Matching) -> Self {
        Self {
            x_labels: space.x_labels().to_vec(),
            y_labels: space.y_labels().to_vec(),
            mu_xy: table(&m.mu_xy),
            mu_x0: reals(&m.mu_x0),
            mu_0y: reals(&m.mu_0y),
        }
    }

    pub fn to_matching(&self) -> Result<Matching> {
        let (nx, ny) = (self.x_labels.len(), self.y_labels.len());
        if self.mu_xy.len() != nx || self.mu_xy.iter().any(|r| r.len() != ny) {
            return Err(CliError::Config("matching table shape does not match its labels".into()));
        }
        let mu_xy = DMatrix::from_fn(nx, ny, |x, y| self.mu_xy[x][y].0);
        let v = |r: &[Real]| DVector::from_iterator(r.len(), r.iter().map(|v| v.0));
        Ok(Matching::new(mu_xy, v(&self.mu_x0), v(&self.mu_0y))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDoc {
    pub command: String,
    pub family: String,
    pub theta: Vec<Named>,
    pub method: String,
    pub matching: MatchingDoc,
    pub outer_iterations: usize,
    pub residual_sup_norm: Real,
    pub converged: bool,
}

impl SolveDoc {
    pub fn new(family: &str, theta: &ParamVector, method: &str, space: &TypeSpace, sol: &EquilibriumSolution) -> Self {
        Self {
            command: "solve".into(),
            family: family.into(),
            theta: named(theta),
            method: method.into(),
            matching: MatchingDoc::new(space, &sol.matching),
            outer_iterations: sol.outer_iterations,
            residual_sup_norm: Real(sol.residual_sup_norm),
            converged: sol.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub estimate: Real,
    pub std_error: Real,
    pub lower: Real,
    pub upper: Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDoc {
    pub command: String,
    pub family: String,
    pub method: String,
    pub theta_hat: Vec<Named>,
    pub loglik: Real,
    pub gradient_norm: Real,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<Named>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<Real>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<Interval>>,
}

/// Two-sided normal quantile at 95%.
pub const Z95: f64 = 1.959963984540054;

impl FitDoc {
    pub fn new(command: &str, family: &str, fit: &EstimationResult) -> Self {
        let theta = &fit.theta_hat;
        let std_errors = fit.std_errors.as_ref().map(|se| {
            theta.names().iter().zip(se.iter()).map(|(n, s)| Named { name: n.clone(), value: Real(*s) }).collect()
        });
        let intervals = fit.std_errors.as_ref().map(|se| {
            theta
                .names()
                .iter()
                .zip(theta.as_slice())
                .zip(se.iter())
                .map(|((n, &t), &s)| Interval {
                    name: n.clone(),
                    estimate: Real(t),
                    std_error: Real(s),
                    lower: Real(t - Z95 * s),
                    upper: Real(t + Z95 * s),
                })
                .collect()
        });
        Self {
            command: command.into(),
            family: family.into(),
            method: fit.method.as_str().into(),
            theta_hat: named(theta),
            loglik: Real(fit.loglik),
            gradient_norm: Real(fit.gradient_norm),
            iterations: fit.iterations,
            evaluations: fit.evaluations,
            converged: fit.converged,
            std_errors,
            covariance: fit.covariance.as_ref().map(table),
            intervals,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatiosDoc {
    pub mu_xy: Vec<Vec<Real>>,
    pub mu_x0: Vec<Real>,
    pub mu_0y: Vec<Real>,
    pub n: Vec<Real>,
    pub m: Vec<Real>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualDoc {
    pub command: String,
    pub method: String,
    pub ratios: RatiosDoc,
    pub baseline: MatchingDoc,
    pub new_matching: MatchingDoc,
    pub iterations: usize,
    pub converged: bool,
}

impl CounterfactualDoc {
    pub fn new(space: &TypeSpace, res: &CounterfactualResult) -> Self {
        let r = &res.ratios;
        Self {
            command: "counterfactual".into(),
            method: res.method.as_str().into(),
            ratios: RatiosDoc {
                mu_xy: table(&r.mu_xy),
                mu_x0: reals(&r.mu_x0),
                mu_0y: reals(&r.mu_0y),
                n: reals(&r.n),
                m: reals(&r.m),
            },
            baseline: MatchingDoc::new(space, &res.baseline),
            new_matching: MatchingDoc::new(space, &res.new_matching),
            iterations: res.iterations,
            converged: res.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurplusDoc {
    pub command: String,
    pub x_labels: Vec<String>,
    pub y_labels: Vec<String>,
    /// `null` on prohibited cells.
    pub phi: Vec<Vec<Option<Real>>>,
}

impl SurplusDoc {
    pub fn new(space: &TypeSpace, t: &SurplusTable) -> Self {
        let (nx, ny) = t.shape();
        Self {
            command: "surplus".into(),
            x_labels: space.x_labels().to_vec(),
            y_labels: space.y_labels().to_vec(),
            phi: (0..nx).map(|x| (0..ny).map(|y| t.get(x, y).map(Real)).collect()).collect(),
        }
    }
}

pub fn to_json<T: Serialize>(doc: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}

pub fn save_result_json<T: Serialize>(doc: &T, path: &Path) -> Result<()> {
    write_file(path, &to_json(doc)?)
}

pub fn load_result_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    Ok(serde_json::from_str(&text)?)
}
