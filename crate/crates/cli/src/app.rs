//! `meq` command dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use meq_core::counterfactual::{counterfactual_parameter_free, counterfactual_parametric};
use meq_core::equilibrium::{solve, SolverOptions};
use meq_core::estimation::{
    covariance_homogeneous_with, fit_mpec, fit_nested, surplus_nonparametric_cs, EstimationResult, FitOptions,
    ObservedData,
};
use meq_core::families::param_vector;
use meq_core::types::ParamVector;

use crate::bench::{run_benchmark_estimation, run_benchmark_system};
use crate::config::{command_name, Command, RunConfig, ThetaSpec};
use crate::error::{config_err, CliError, Result};
use crate::family::{build_family, BuiltFamily, FamilySpec};
use crate::io::{load_margins_csv, load_matching_csv, write_file};
use crate::report::{to_json, CounterfactualDoc, FitDoc, SolveDoc, SurplusDoc};

#[derive(Debug, Parser)]
#[command(name = "meq", version, about = "Matching-function equilibria: solve, estimate, counterfactuals")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Equilibrium matching at θ (fitted when not given)
    Solve(Flags),
    /// Maximum likelihood estimation
    Fit(Flags),
    /// Estimation with standard errors and 95% intervals
    Ci(Flags),
    /// Equilibrium under new margins
    Counterfactual(Flags),
    /// Nonparametric surplus inversion
    Surplus(Flags),
    /// Benchmark harness
    Simulate(Flags),
}

#[derive(Debug, Args, Default)]
struct Flags {
    /// JSON run configuration; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Family name (choo-siow, menzel, search, cobb-douglas, etu, harmonic)
    #[arg(long)]
    family: Option<String>,
    /// Observed matching CSV
    #[arg(long)]
    matching: Option<PathBuf>,
    /// Market margins CSV (defaults to the observed margins)
    #[arg(long)]
    margins: Option<PathBuf>,
    /// Counterfactual margins CSV
    #[arg(long)]
    new_margins: Option<PathBuf>,
    /// Write the JSON result here instead of stdout
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// nested|mpec for fit and ci; parametric|parameter-free for counterfactual
    #[arg(long)]
    method: Option<String>,
    /// Parameters as `v1,v2,...` or `name=v,...`
    #[arg(long)]
    theta: Option<String>,
    /// Starting parameters for estimation, same syntax as --theta
    #[arg(long)]
    theta_init: Option<String>,
    /// Equilibrium tolerance
    #[arg(long)]
    tol: Option<f64>,
    /// ipfp|newton
    #[arg(long)]
    solver: Option<String>,
    /// Parallel IPFP half-steps
    #[arg(long)]
    parallel: bool,
    /// Optimizer iteration cap
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// system|estimation
    #[arg(long)]
    bench: Option<String>,
    /// Market sizes |X|
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    replications: Option<usize>,
}

impl Flags {
    fn into_config(self, command: Command) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(cmd) = c.command {
            if cmd != command {
                return config_err(format!(
                    "config is for {} but the command is {}",
                    command_name(cmd),
                    command_name(command)
                ));
            }
        }
        c.command = Some(command);
        if let Some(f) = self.family {
            if f != c.family.name {
                c.family = FamilySpec::named(&f);
            }
        }
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { c.$field = Some(v); } )* };
        }
        set!(matching, margins, new_margins, output, method);
        if let Some(t) = self.theta {
            c.theta = Some(ThetaSpec::parse(&t)?);
        }
        if let Some(t) = self.theta_init {
            c.theta_init = Some(ThetaSpec::parse(&t)?);
        }
        if let Some(t) = self.tol {
            c.solver.tol = t;
        }
        if let Some(s) = self.solver {
            c.solver.method = s;
        }
        c.solver.parallel |= self.parallel;
        if let Some(v) = self.max_iter {
            c.max_iter = v;
        }
        if let Some(v) = self.grad_tol {
            c.grad_tol = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.bench {
            c.bench = v;
        }
        if let Some(v) = self.sizes {
            c.sizes = v;
        }
        if let Some(v) = self.replications {
            c.replications = v;
        }
        c.validate(command)?;
        Ok(c)
    }
}

/// Caps rayon's pool at `MEQ_THREADS` when set.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("MEQ_THREADS") else { return Ok(()) };
    let n: usize = match v.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return config_err(format!("MEQ_THREADS must be a positive integer, got {v:?}")),
    };
    // A pool built earlier in the process wins; that only happens in tests.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

struct Session {
    cfg: RunConfig,
    solver: SolverOptions,
}

impl Session {
    fn observed(&self) -> Result<ObservedData> {
        load_matching_csv(self.cfg.matching.as_deref().expect("validated"))
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            solver: self.solver.clone(),
            max_iter: self.cfg.max_iter,
            grad_tol: self.cfg.grad_tol,
            target_grad: FitOptions::default().target_grad.min(self.cfg.grad_tol),
        }
    }

    fn fit(&self, built: &BuiltFamily, observed: &ObservedData) -> Result<EstimationResult> {
        let fam = built.family.as_ref();
        let init = match (&self.cfg.theta_init, &built.theta_init) {
            (Some(t), _) => t.resolve(fam)?,
            (None, Some(t)) => t.clone(),
            (None, None) => param_vector(fam, &vec![0.0; fam.descriptor().theta_dim])?,
        };
        let opts = self.fit_options();
        let fit = match self.cfg.method.as_deref().unwrap_or("nested") {
            "nested" => fit_nested(fam, observed, &init, &opts)?,
            "mpec" => fit_mpec(fam, observed, &init, &opts)?,
            other => return config_err(format!("fit method must be nested or mpec, got {other:?}")),
        };
        if !fit.converged {
            return Err(CliError::NotConverged(format!(
                "{} fit stopped after {} iterations with gradient {:e}",
                fit.method.as_str(),
                fit.iterations,
                fit.gradient_norm
            )));
        }
        Ok(fit)
    }

    /// θ from the config, or estimated when absent.
    fn theta(&self, built: &BuiltFamily, observed: &ObservedData) -> Result<ParamVector> {
        match &self.cfg.theta {
            Some(t) => t.resolve(built.family.as_ref()),
            None => Ok(self.fit(built, observed)?.theta_hat),
        }
    }

    fn run(&self, command: Command) -> Result<String> {
        let family_name = || self.cfg.family.canonical();
        match command {
            Command::Solve => {
                let observed = self.observed()?;
                let built = build_family(&self.cfg.family, &observed.space, Some(&observed))?;
                let market = match &self.cfg.margins {
                    Some(p) => load_margins_csv(p, &observed.space)?,
                    None => observed.market()?,
                };
                let theta = self.theta(&built, &observed)?;
                let sol = solve(built.family.as_ref(), &theta, &market, &self.solver)?;
                let method = self.cfg.solver.method.as_str();
                to_json(&SolveDoc::new(family_name()?, &theta, method, &observed.space, &sol))
            }
            Command::Fit => {
                let observed = self.observed()?;
                let built = build_family(&self.cfg.family, &observed.space, Some(&observed))?;
                to_json(&FitDoc::new("fit", family_name()?, &self.fit(&built, &observed)?))
            }
            Command::Ci => {
                let observed = self.observed()?;
                let built = build_family(&self.cfg.family, &observed.space, Some(&observed))?;
                let mut fit = self.fit(&built, &observed)?;
                let (v, se) = covariance_homogeneous_with(built.family.as_ref(), &fit.theta_hat, &observed, &self.solver)?;
                fit.covariance = Some(v);
                fit.std_errors = Some(se);
                to_json(&FitDoc::new("ci", family_name()?, &fit))
            }
            Command::Counterfactual => {
                let observed = self.observed()?;
                let new = load_margins_csv(self.cfg.new_margins.as_deref().expect("validated"), &observed.space)?;
                let built = build_family(&self.cfg.family, &observed.space, Some(&observed))?;
                let fam = built.family.as_ref();
                let method = self.cfg.method.as_deref().unwrap_or("parameter-free").replace('_', "-");
                let res = match method.as_str() {
                    "parameter-free" => counterfactual_parameter_free(&observed.matching, &new, fam, &self.solver)?,
                    "parametric" => {
                        let theta = self.theta(&built, &observed)?;
                        counterfactual_parametric(fam, &theta, &observed.market()?, &new, &self.solver)?
                    }
                    other => {
                        return config_err(format!(
                            "counterfactual method must be parametric or parameter-free, got {other:?}"
                        ))
                    }
                };
                if !res.converged {
                    return Err(CliError::NotConverged(format!(
                        "{} counterfactual after {} iterations",
                        res.method.as_str(),
                        res.iterations
                    )));
                }
                to_json(&CounterfactualDoc::new(&observed.space, &res))
            }
            Command::Surplus => {
                let observed = self.observed()?;
                to_json(&SurplusDoc::new(&observed.space, &surplus_nonparametric_cs(&observed)?))
            }
            Command::Simulate => {
                let c = &self.cfg;
                let report = match c.bench.as_str() {
                    "system" => run_benchmark_system(&c.sizes, c.replications, c.seed)?,
                    _ => run_benchmark_estimation(&c.sizes, c.replications, c.seed)?,
                };
                to_json(&report)
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let (command, flags) = match cli.command {
        Sub::Solve(f) => (Command::Solve, f),
        Sub::Fit(f) => (Command::Fit, f),
        Sub::Ci(f) => (Command::Ci, f),
        Sub::Counterfactual(f) => (Command::Counterfactual, f),
        Sub::Surplus(f) => (Command::Surplus, f),
        Sub::Simulate(f) => (Command::Simulate, f),
    };
    configure_threads()?;
    let cfg = flags.into_config(command)?;
    let solver = cfg.solver.options()?;
    let session = Session { cfg, solver };
    let text = session.run(command)?;
    match &session.cfg.output {
        Some(p) => write_file(p, &text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| CliError::Io { path: "<stdout>".into(), source })
        }
    }
}

/// Runs the CLI on `argv` (program name first) and returns the exit code:
/// 0 on success, 1 on parse or configuration errors, 2 on non-convergence.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("meq: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"family":{"name":"etu","params":{"tau":2}},"seed":3,"matching":"a.csv"}"#).unwrap();
        let flags = Flags { config: Some(path.clone()), seed: Some(5), tol: Some(1e-9), ..Default::default() };
        let c = flags.into_config(Command::Fit).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.solver.tol, 1e-9);
        assert_eq!(c.family.params["tau"], 2);
        let flags = Flags { config: Some(path), family: Some("menzel".into()), ..Default::default() };
        let c = flags.into_config(Command::Fit).unwrap();
        assert_eq!(c.family, FamilySpec::named("menzel"));
        assert!(c.family.params.is_empty());
    }

    #[test]
    fn config_command_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"command":"fit","matching":"a.csv"}"#).unwrap();
        let flags = Flags { config: Some(path), ..Default::default() };
        assert!(flags.into_config(Command::Solve).is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(cli_main(["meq", "frobnicate"]), 1);
        assert_eq!(cli_main(["meq", "solve"]), 1);
        assert_eq!(cli_main(["meq", "--help"]), 0);
    }
}
