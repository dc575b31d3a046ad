//! Benchmark harness on ETU markets with `α_xy = α·x·y`, `γ_xy = γ·x·y`,
//! τ = 1, type values drawn from `U(0, 1)`, `|Y| = ⌈1.5|X|⌉` and unit margins.
//!
//! Replication `r` of size `s` draws from ChaCha8 seeded with `seed ^ s` on
//! stream `r`, so every row is reproducible on its own.

use std::time::Instant;

use meq_core::equilibrium::{solve_ipfp, solve_newton, EquilibriumSolution, SolverOptions};
use meq_core::estimation::{fit_mpec, fit_nested, FitOptions, ObservedData};
use meq_core::families::{param_vector, EtuGkw};
use meq_core::types::{Market, ParamVector};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// True parameters of the estimation experiment.
pub const THETA0: [f64; 2] = [0.5, 0.3];
/// Recovery threshold on `‖θ̂ − θ₀‖∞`.
pub const RECOVERY_TOL: f64 = 1e-3;
/// Cross-solver agreement threshold on the matching sup-norm.
pub const AGREEMENT_TOL: f64 = 1e-8;

pub fn replication_rng(seed: u64, size: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ size as u64);
    rng.set_stream(rep as u64);
    rng
}

pub fn women_count(nx: usize) -> usize {
    (3 * nx).div_ceil(2)
}

/// An ETU family with `base_xy = x·y` for uniform type values, and the unit market.
pub fn etu_instance(nx: usize, rng: &mut ChaCha8Rng) -> (EtuGkw, Market) {
    let ny = women_count(nx);
    let xs: Vec<f64> = (0..nx).map(|_| rng.random::<f64>()).collect();
    let ys: Vec<f64> = (0..ny).map(|_| rng.random::<f64>()).collect();
    let base = DMatrix::from_fn(nx, ny, |x, y| xs[x] * ys[y]);
    let fam = EtuGkw::scaled(&base, &DMatrix::from_element(nx, ny, 1.0)).expect("positive tau");
    let market = Market::from_margins(&vec![1.0; nx], &vec![1.0; ny]).expect("unit margins");
    (fam, market)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub size: usize,
    pub method: String,
    pub replications: usize,
    pub iterations_mean: f64,
    pub iterations_sd: f64,
    pub time_mean_s: f64,
    pub time_sd_s: f64,
    /// Percentage in `[0, 100]`.
    pub failure_rate: f64,
    /// Cross-method agreement (system) or recovery (estimation) on every replication.
    pub check_pass: bool,
    /// Sum of the computed quantities over replications; deterministic for a seed.
    pub checksum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub experiment: String,
    pub seed: u64,
    pub replications: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchmarkReport {
    /// The report with timing columns zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.time_mean_s = 0.0;
            row.time_sd_s = 0.0;
        }
        r
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

#[derive(Clone)]
struct Trial {
    iterations: f64,
    seconds: f64,
    failed: bool,
    check: bool,
    checksum: f64,
}

fn row(size: usize, method: &str, trials: &[Trial]) -> BenchRow {
    let ok: Vec<&Trial> = trials.iter().filter(|t| !t.failed).collect();
    let (iterations_mean, iterations_sd) = mean_sd(&ok.iter().map(|t| t.iterations).collect::<Vec<_>>());
    let (time_mean_s, time_sd_s) = mean_sd(&trials.iter().map(|t| t.seconds).collect::<Vec<_>>());
    BenchRow {
        size,
        method: method.into(),
        replications: trials.len(),
        iterations_mean,
        iterations_sd,
        time_mean_s,
        time_sd_s,
        failure_rate: 100.0 * (trials.len() - ok.len()) as f64 / trials.len().max(1) as f64,
        check_pass: trials.iter().all(|t| t.check),
        checksum: trials.iter().map(|t| t.checksum).sum(),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed().as_secs_f64())
}

fn solution_trial(res: &(meq_core::Result<EquilibriumSolution>, f64)) -> (bool, f64, f64) {
    match &res.0 {
        Ok(s) if s.converged => (false, s.outer_iterations as f64, s.matching.mu_xy.sum()),
        _ => (true, f64::NAN, 0.0),
    }
}

/// Times serial IPFP, parallel IPFP and Newton on each replication.
/// `check_pass` requires all three to agree within [`AGREEMENT_TOL`] and the
/// two IPFP runs to match bit for bit.
pub fn run_benchmark_system(sizes: &[usize], replications: usize, seed: u64) -> Result<BenchmarkReport> {
    let serial = SolverOptions::with_tol(1e-10);
    let parallel = SolverOptions { parallel: true, ..serial.clone() };
    let mut rows = Vec::new();
    for &size in sizes {
        let per_rep: Vec<[Trial; 3]> = (0..replications)
            .into_par_iter()
            .map(|rep| {
                let (fam, market) = etu_instance(size, &mut replication_rng(seed, size, rep));
                let theta = param_vector(&fam, &[1.0, 1.0]).expect("two parameters");
                let runs = [
                    timed(|| solve_ipfp(&fam, &theta, &market, &serial)),
                    timed(|| solve_ipfp(&fam, &theta, &market, &parallel)),
                    timed(|| solve_newton(&fam, &theta, &market, &serial)),
                ];
                let agree = match (&runs[0].0, &runs[1].0, &runs[2].0) {
                    (Ok(a), Ok(b), Ok(c)) => a == b && a.matching.sup_distance(&c.matching) <= AGREEMENT_TOL,
                    _ => false,
                };
                runs.map(|r| {
                    let (failed, iterations, checksum) = solution_trial(&r);
                    Trial { iterations, seconds: r.1, failed, check: agree, checksum }
                })
            })
            .collect();
        for (k, method) in ["ipfp", "ipfp_parallel", "newton"].iter().enumerate() {
            let trials: Vec<Trial> = per_rep.iter().map(|t| t[k].clone()).collect();
            rows.push(row(size, method, &trials));
        }
    }
    Ok(BenchmarkReport { experiment: "system".into(), seed, replications, rows })
}

/// Where the estimation benchmark starts the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Zero,
    Truth,
}

/// Simulated data `μ̂ = μ^{θ₀}` for one replication.
pub fn estimation_instance(size: usize, seed: u64, rep: usize) -> Result<(EtuGkw, ParamVector, ObservedData)> {
    let (fam, market) = etu_instance(size, &mut replication_rng(seed, size, rep));
    let theta0 = param_vector(&fam, &THETA0)?;
    let sol = solve_ipfp(&fam, &theta0, &market, &SolverOptions::with_tol(1e-13))?;
    Ok((fam, theta0, ObservedData::from_matching(sol.matching)))
}

pub fn run_benchmark_estimation(sizes: &[usize], replications: usize, seed: u64) -> Result<BenchmarkReport> {
    run_benchmark_estimation_with(sizes, replications, seed, Start::Zero)
}

/// Fits nested and MPEC on each replication. A replication fails when the
/// fit does not converge or misses θ₀ by more than [`RECOVERY_TOL`].
pub fn run_benchmark_estimation_with(
    sizes: &[usize],
    replications: usize,
    seed: u64,
    start: Start,
) -> Result<BenchmarkReport> {
    let opts = FitOptions::default();
    let mut rows = Vec::new();
    for &size in sizes {
        let per_rep: Vec<Result<[Trial; 2]>> = (0..replications)
            .into_par_iter()
            .map(|rep| {
                let (fam, theta0, obs) = estimation_instance(size, seed, rep)?;
                let init = match start {
                    Start::Zero => param_vector(&fam, &[0.0, 0.0])?,
                    Start::Truth => theta0.clone(),
                };
                let nested = timed(|| fit_nested(&fam, &obs, &init, &opts));
                let mpec = timed(|| fit_mpec(&fam, &obs, &init, &opts));
                Ok([nested, mpec].map(|(res, seconds)| match res {
                    Ok(fit) => {
                        let miss = (fit.theta_hat.values() - theta0.values()).amax();
                        let failed = !fit.converged || miss > RECOVERY_TOL;
                        Trial {
                            iterations: fit.iterations as f64,
                            seconds,
                            failed,
                            check: !failed,
                            checksum: fit.theta_hat.as_slice().iter().sum(),
                        }
                    }
                    Err(_) => Trial { iterations: f64::NAN, seconds, failed: true, check: false, checksum: 0.0 },
                }))
            })
            .collect();
        let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;
        for (k, method) in ["nested", "mpec"].iter().enumerate() {
            let trials: Vec<Trial> = per_rep.iter().map(|t| t[k].clone()).collect();
            rows.push(row(size, method, &trials));
        }
    }
    Ok(BenchmarkReport { experiment: "estimation".into(), seed, replications, rows })
}
