//! Run configuration: one JSON document, overridden field by field by flags.

use std::path::{Path, PathBuf};

use meq_core::equilibrium::{Method, SolverOptions};
use meq_core::families::MatchingFunction;
use meq_core::types::ParamVector;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, CliError, Result};
use crate::family::FamilySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Fit,
    Ci,
    Counterfactual,
    Surplus,
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_outer_iter: usize,
    pub inner_tol: Option<f64>,
    /// `ipfp` or `newton`.
    pub method: String,
    pub parallel: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-12, max_outer_iter: 10_000, inner_tol: None, method: "ipfp".into(), parallel: false }
    }
}

impl SolverConfig {
    pub fn options(&self) -> Result<SolverOptions> {
        let mut o = SolverOptions::with_tol(self.tol);
        o.max_outer_iter = self.max_outer_iter;
        if let Some(t) = self.inner_tol {
            o.inner_tol = t;
        }
        o.method = match self.method.as_str() {
            "ipfp" => Method::Ipfp,
            "newton" => Method::Newton,
            other => return config_err(format!("solver method must be ipfp or newton, got {other:?}")),
        };
        o.parallel = self.parallel;
        o.validate()?;
        Ok(o)
    }
}

/// θ as a list in parameter order or as `{name: value}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSpec {
    List(Vec<f64>),
    Named(std::collections::BTreeMap<String, f64>),
}

impl ThetaSpec {
    /// `1,2,3` or `a=1,b=2`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
        let bad = |p: &str| CliError::Config(format!("invalid theta entry {p:?}"));
        if parts.iter().any(|p| p.contains('=')) {
            parts
                .iter()
                .map(|p| {
                    let (k, v) = p.split_once('=').ok_or_else(|| bad(p))?;
                    Ok((k.trim().to_string(), v.trim().parse().map_err(|_| bad(p))?))
                })
                .collect::<Result<_>>()
                .map(ThetaSpec::Named)
        } else {
            parts.iter().map(|p| p.parse().map_err(|_| bad(p))).collect::<Result<_>>().map(ThetaSpec::List)
        }
    }

    pub fn resolve(&self, family: &dyn MatchingFunction) -> Result<ParamVector> {
        let names = family.param_names();
        let values = match self {
            ThetaSpec::List(v) => {
                if v.len() != names.len() {
                    return config_err(format!("theta needs {} values, got {}", names.len(), v.len()));
                }
                v.clone()
            }
            ThetaSpec::Named(map) => {
                if let Some(k) = map.keys().find(|k| !names.contains(k)) {
                    return config_err(format!("unknown parameter {k:?}"));
                }
                names
                    .iter()
                    .map(|n| map.get(n).copied().ok_or_else(|| CliError::Config(format!("missing parameter {n:?}"))))
                    .collect::<Result<_>>()?
            }
        };
        Ok(ParamVector::new(values, names)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub family: FamilySpec,
    pub solver: SolverConfig,
    /// Fit method (`nested`, `mpec`) or counterfactual method (`parametric`, `parameter-free`).
    pub method: Option<String>,
    pub theta: Option<ThetaSpec>,
    pub theta_init: Option<ThetaSpec>,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub seed: u64,
    pub matching: Option<PathBuf>,
    pub margins: Option<PathBuf>,
    pub new_margins: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// `system` or `estimation`.
    pub bench: String,
    pub sizes: Vec<usize>,
    pub replications: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            family: FamilySpec::default(),
            solver: SolverConfig::default(),
            method: None,
            theta: None,
            theta_init: None,
            max_iter: 500,
            grad_tol: 1e-6,
            seed: 0,
            matching: None,
            margins: None,
            new_margins: None,
            output: None,
            bench: "system".into(),
            sizes: vec![10, 50],
            replications: 50,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks the paths `command` needs.
    pub fn validate(&self, command: Command) -> Result<()> {
        let need = |p: &Option<PathBuf>, flag: &str| match p {
            Some(_) => Ok(()),
            None => config_err(format!("{} needs --{flag}", command_name(command))),
        };
        match command {
            Command::Simulate => {
                if !matches!(self.bench.as_str(), "system" | "estimation") {
                    return config_err(format!("bench must be system or estimation, got {:?}", self.bench));
                }
                if self.replications == 0 || self.sizes.is_empty() || self.sizes.contains(&0) {
                    return config_err("simulate needs positive sizes and replications");
                }
                Ok(())
            }
            Command::Counterfactual => {
                need(&self.matching, "matching")?;
                need(&self.new_margins, "new-margins")
            }
            _ => need(&self.matching, "matching"),
        }
    }
}

pub fn command_name(c: Command) -> &'static str {
    match c {
        Command::Solve => "solve",
        Command::Fit => "fit",
        Command::Ci => "ci",
        Command::Counterfactual => "counterfactual",
        Command::Surplus => "surplus",
        Command::Simulate => "simulate",
    }
}
