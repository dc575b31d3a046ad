//! Equilibrium of the accounting system
//!
//! ```text
//! n_x = μ_x0 + Σ_y M_xy(μ_x0, μ_0y)
//! m_y = μ_0y + Σ_x M_xy(μ_x0, μ_0y)
//! ```
//!
//! by IPFP (alternating scalar solves) or damped Newton on the unmatched masses.
//!
//! Degree-one homogeneous families are solved on masses divided by
//! `Σn + Σm`; tolerances and the reported residual are in those units and
//! [`EquilibriumSolution::mass_scale`] records the divisor. Other families
//! are solved in raw masses (`mass_scale = 1`).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{config, domain, MeqError, Result};
use crate::families::{check_theta, BoundFamily, MatchingFunction};
use crate::types::{Market, Matching, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ipfp,
    Newton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_outer_iter: usize,
    pub inner_tol: f64,
    pub method: Method,
    pub parallel: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self::with_tol(1e-9)
    }
}

impl SolverOptions {
    /// Options at `tol` with `inner_tol = min(tol·1e-2, 1e-12)`.
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            max_outer_iter: 10_000,
            inner_tol: (tol * 1e-2).min(1e-12),
            method: Method::Ipfp,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.inner_tol > 0.0 && self.inner_tol <= self.tol) {
            return config(format!(
                "need tol > 0 and 0 < inner_tol <= tol (tol={}, inner_tol={})",
                self.tol, self.inner_tol
            ));
        }
        if self.max_outer_iter == 0 {
            return config("max_outer_iter must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    /// Masses in the caller's units.
    pub matching: Matching,
    pub outer_iterations: usize,
    /// Sup-norm of the accounting residual, in solver units.
    pub residual_sup_norm: f64,
    pub converged: bool,
    pub mass_scale: f64,
}

/// Working-unit divisor for a market.
pub(crate) fn mass_scale(family: &dyn MatchingFunction, market_total: f64) -> f64 {
    if family.descriptor().homogeneous_degree_one {
        market_total
    } else {
        1.0
    }
}

fn check_shapes(family: &dyn MatchingFunction, nx: usize, ny: usize) -> Result<()> {
    if family.shape() != (nx, ny) {
        let (fx, fy) = family.shape();
        return config(format!("family is {fx}x{fy} but the market is {nx}x{ny}"));
    }
    Ok(())
}

fn check_positive(v: &DVector<f64>, what: &str) -> Result<()> {
    if let Some(t) = v.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return domain(format!("{what} must be strictly positive, got {t}"));
    }
    Ok(())
}

/// `n_x − μ_x0 − Σ_y M` followed by `m_y − μ_0y − Σ_x M`.
pub(crate) fn raw_residuals(
    bound: &dyn BoundFamily,
    n: &DVector<f64>,
    m: &DVector<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> DVector<f64> {
    let (nx, ny) = (n.len(), m.len());
    let mut r = DVector::zeros(nx + ny);
    let mut col = vec![0.0; ny];
    for x in 0..nx {
        let mut row = 0.0;
        for y in 0..ny {
            let v = bound.value(x, y, a[x], b[y]);
            row += v;
            col[y] += v;
        }
        r[x] = n[x] - a[x] - row;
    }
    for y in 0..ny {
        r[nx + y] = m[y] - b[y] - col[y];
    }
    r
}

pub(crate) fn raw_jacobian(bound: &dyn BoundFamily, a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let (nx, ny) = (a.len(), b.len());
    let mut j = DMatrix::identity(nx + ny, nx + ny);
    for x in 0..nx {
        for y in 0..ny {
            let (_, da, db) = bound.value_grad(x, y, a[x], b[y]);
            j[(x, x)] += da;
            j[(nx + y, nx + y)] += db;
            j[(x, nx + y)] = db;
            j[(nx + y, x)] = da;
        }
    }
    j
}

pub fn residuals(
    family: &dyn MatchingFunction,
    theta: &ParamVector,
    market: &Market,
    mu_x0: &DVector<f64>,
    mu_0y: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_theta(family, theta)?;
    check_shapes(family, market.nx(), market.ny())?;
    if mu_x0.len() != market.nx() || mu_0y.len() != market.ny() {
        return config("unmatched mass vectors do not match the market");
    }
    check_positive(mu_x0, "mu_x0")?;
    check_positive(mu_0y, "mu_0y")?;
    let bound = family.bind(theta.as_slice());
    Ok(raw_residuals(bound.as_ref(), &market.n, &market.m, mu_x0, mu_0y))
}

/// Δ, the Jacobian of `(μ_x0 + Σ_y M, μ_0y + Σ_x M)` in `(μ_x0, μ_0y)`.
pub fn system_jacobian(
    family: &dyn MatchingFunction,
    theta: &ParamVector,
    mu_x0: &DVector<f64>,
    mu_0y: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_theta(family, theta)?;
    check_shapes(family, mu_x0.len(), mu_0y.len())?;
    check_positive(mu_x0, "mu_x0")?;
    check_positive(mu_0y, "mu_0y")?;
    let bound = family.bind(theta.as_slice());
    Ok(raw_jacobian(bound.as_ref(), mu_x0, mu_0y))
}

/// Couple masses implied by the unmatched masses.
pub fn implied_matching(bound: &dyn BoundFamily, mu_x0: &DVector<f64>, mu_0y: &DVector<f64>) -> Matching {
    let mu_xy = DMatrix::from_fn(mu_x0.len(), mu_0y.len(), |x, y| bound.value(x, y, mu_x0[x], mu_0y[y]));
    Matching { mu_xy, mu_x0: mu_x0.clone(), mu_0y: mu_0y.clone() }
}

/// Root of `t + s(t) = target` on `(0, target]`, where `row(t) = (s, s')`
/// and `s` is nondecreasing with `s(0+) = 0`.
///
/// Newton steps in `log t`, replaced by bisection whenever they leave the
/// current bracket.
pub(crate) fn scalar_root(target: f64, warm: f64, inner_tol: f64, row: impl Fn(f64) -> (f64, f64)) -> f64 {
    let mut lo = 0.0_f64;
    let mut hi = target;
    let mut t = if warm > 0.0 && warm <= target { warm } else { target };
    for _ in 0..300 {
        let (s, ds) = row(t);
        let h = t + s - target;
        if h == 0.0 {
            return t;
        }
        if h > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        if h.abs() <= inner_tol {
            return t;
        }
        let step = (-h / (t * (1.0 + ds))).clamp(-30.0, 30.0);
        let mut next = t * step.exp();
        if !(next > lo && next < hi) {
            next = if lo > 0.0 { 0.5 * (lo + hi) } else { 0.5 * hi };
        }
        if (next - t).abs() <= 4.0 * f64::EPSILON * t || hi - lo <= 4.0 * f64::EPSILON * hi {
            return next;
        }
        t = next;
    }
    t
}

fn half_step_x(
    bound: &dyn BoundFamily,
    n: &DVector<f64>,
    b: &DVector<f64>,
    warm: &DVector<f64>,
    inner_tol: f64,
    parallel: bool,
) -> DVector<f64> {
    let ny = b.len();
    let solve = |x: usize| {
        scalar_root(n[x], warm[x], inner_tol, |t| {
            let (mut s, mut ds) = (0.0, 0.0);
            for y in 0..ny {
                let (v, da, _) = bound.value_grad(x, y, t, b[y]);
                s += v;
                ds += da;
            }
            (s, ds)
        })
    };
    collect(n.len(), parallel, solve)
}

fn half_step_y(
    bound: &dyn BoundFamily,
    m: &DVector<f64>,
    a: &DVector<f64>,
    warm: &DVector<f64>,
    inner_tol: f64,
    parallel: bool,
) -> DVector<f64> {
    let nx = a.len();
    let solve = |y: usize| {
        scalar_root(m[y], warm[y], inner_tol, |t| {
            let (mut s, mut ds) = (0.0, 0.0);
            for x in 0..nx {
                let (v, _, db) = bound.value_grad(x, y, a[x], t);
                s += v;
                ds += db;
            }
            (s, ds)
        })
    };
    collect(m.len(), parallel, solve)
}

pub(crate) fn collect(len: usize, parallel: bool, f: impl Fn(usize) -> f64 + Sync + Send) -> DVector<f64> {
    let v: Vec<f64> = if parallel {
        (0..len).into_par_iter().map(f).collect()
    } else {
        (0..len).map(f).collect()
    };
    DVector::from_vec(v)
}

/// Solver state in working units.
pub(crate) struct Unmatched {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

pub(crate) fn ipfp_working(
    bound: &dyn BoundFamily,
    n: &DVector<f64>,
    m: &DVector<f64>,
    init_b: &DVector<f64>,
    opts: &SolverOptions,
) -> Unmatched {
    let mut a = n.clone();
    let mut b = init_b.clone();
    let mut residual = f64::INFINITY;
    for t in 1..=opts.max_outer_iter {
        a = half_step_x(bound, n, &b, &a, opts.inner_tol, opts.parallel);
        let next = half_step_y(bound, m, &a, &b, opts.inner_tol, opts.parallel);
        let moved = (&next - &b).amax();
        b = next;
        if moved < opts.tol {
            residual = raw_residuals(bound, n, m, &a, &b).amax();
            if residual <= opts.tol {
                return Unmatched { a, b, iterations: t, residual, converged: true };
            }
        }
    }
    if residual.is_infinite() {
        residual = raw_residuals(bound, n, m, &a, &b).amax();
    }
    Unmatched { a, b, iterations: opts.max_outer_iter, residual, converged: false }
}

pub(crate) fn newton_working(
    bound: &dyn BoundFamily,
    n: &DVector<f64>,
    m: &DVector<f64>,
    init: (&DVector<f64>, &DVector<f64>),
    opts: &SolverOptions,
) -> Result<Unmatched> {
    let nx = n.len();
    let mut a = init.0.clone();
    let mut b = init.1.clone();
    let mut r = raw_residuals(bound, n, m, &a, &b);
    let mut last_step = f64::INFINITY;
    for t in 1..=opts.max_outer_iter {
        let sup = r.amax();
        if sup <= opts.tol && last_step < opts.tol {
            return Ok(Unmatched { a, b, iterations: t - 1, residual: sup, converged: true });
        }
        // Residuals are −σ, so the Newton direction solves Δ·δ = r.
        let jac = raw_jacobian(bound, &a, &b);
        let delta = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| MeqError::Singular("equilibrium Jacobian".into()))?;
        let norm = r.norm();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=50 {
            let na = &a + delta.rows(0, nx) * step;
            let nb = &b + delta.rows(nx, m.len()) * step;
            if na.iter().chain(nb.iter()).all(|v| *v > 0.0) {
                let nr = raw_residuals(bound, n, m, &na, &nb);
                if nr.norm() <= norm {
                    accepted = Some((na, nb, nr));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((na, nb, nr)) => {
                last_step = (&delta * step).amax();
                a = na;
                b = nb;
                r = nr;
            }
            None => {
                return Ok(Unmatched { a, b, iterations: t, residual: sup, converged: false });
            }
        }
    }
    let residual = r.amax();
    let converged = residual <= opts.tol && last_step < opts.tol;
    Ok(Unmatched { a, b, iterations: opts.max_outer_iter, residual, converged })
}

fn finish(bound: &dyn BoundFamily, state: Unmatched, scale: f64) -> EquilibriumSolution {
    let working = implied_matching(bound, &state.a, &state.b);
    EquilibriumSolution {
        matching: working.scaled(scale),
        outer_iterations: state.iterations,
        residual_sup_norm: state.residual,
        converged: state.converged,
        mass_scale: scale,
    }
}

fn prepare(family: &dyn MatchingFunction, theta: &ParamVector, market: &Market, opts: &SolverOptions) -> Result<f64> {
    opts.validate()?;
    check_theta(family, theta)?;
    check_shapes(family, market.nx(), market.ny())?;
    Ok(mass_scale(family, market.total()))
}

pub fn solve_ipfp(
    family: &dyn MatchingFunction,
    theta: &ParamVector,
    market: &Market,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution> {
    solve_ipfp_from(family, theta, market, opts, &market.m)
}

/// IPFP started from `init_mu_0y` (raw units) instead of `m`.
pub fn solve_ipfp_from(
    family: &dyn MatchingFunction,
    theta: &ParamVector,
    market: &Market,
    opts: &SolverOptions,
    init_mu_0y: &DVector<f64>,
) -> Result<EquilibriumSolution> {
    let scale = prepare(family, theta, market, opts)?;
    if init_mu_0y.len() != market.ny() {
        return config("initial mu_0y has the wrong length");
    }
    check_positive(init_mu_0y, "initial mu_0y")?;
    let bound = family.bind(theta.as_slice());
    let n = &market.n / scale;
    let m = &market.m / scale;
    let init = (init_mu_0y / scale).zip_map(&m, f64::min);
    let state = ipfp_working(bound.as_ref(), &n, &m, &init, opts);
    Ok(finish(bound.as_ref(), state, scale))
}

pub fn solve_newton(
    family: &dyn MatchingFunction,
    theta: &ParamVector,
    market: &Market,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution> {
    solve_newton_from(family, theta, market, opts, (&market.n, &market.m))
}

/// Newton started from `(μ_x0, μ_0y)` in raw units.
pub fn solve_newton_from(
    family: &dyn MatchingFunction,
    theta: &ParamVector,
    market: &Market,
    opts: &SolverOptions,
    init: (&DVector<f64>, &DVector<f64>),
) -> Result<EquilibriumSolution> {
    let scale = prepare(family, theta, market, opts)?;
    if init.0.len() != market.nx() || init.1.len() != market.ny() {
        return config("initial unmatched masses have the wrong length");
    }
    check_positive(init.0, "initial mu_x0")?;
    check_positive(init.1, "initial mu_0y")?;
    let bound = family.bind(theta.as_slice());
    let n = &market.n / scale;
    let m = &market.m / scale;
    let state = newton_working(bound.as_ref(), &n, &m, (&(init.0 / scale), &(init.1 / scale)), opts)?;
    Ok(finish(bound.as_ref(), state, scale))
}

/// Dispatches on `opts.method`.
pub fn solve(
    family: &dyn MatchingFunction,
    theta: &ParamVector,
    market: &Market,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution> {
    match opts.method {
        Method::Ipfp => solve_ipfp(family, theta, market, opts),
        Method::Newton => solve_newton(family, theta, market, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{param_vector, ChooSiow, Menzel, SearchMatching};
    use approx::assert_relative_eq;

    fn unit_market() -> Market {
        Market::from_margins(&[1.0], &[1.0]).unwrap()
    }

    #[test]
    fn choo_siow_one_by_one() {
        let f = ChooSiow::free(1, 1);
        let t = param_vector(&f, &[0.0]).unwrap();
        let opts = SolverOptions::default();
        for sol in [
            solve_ipfp(&f, &t, &unit_market(), &opts).unwrap(),
            solve_newton(&f, &t, &unit_market(), &opts).unwrap(),
        ] {
            assert!(sol.converged);
            assert!(sol.residual_sup_norm <= opts.tol);
            assert_relative_eq!(sol.matching.mu_x0[0], 0.5, epsilon = 1e-9);
            assert_relative_eq!(sol.matching.mu_0y[0], 0.5, epsilon = 1e-9);
            assert_relative_eq!(sol.matching.mu_xy[(0, 0)], 0.5, epsilon = 1e-9);
        }
        let tight = SolverOptions::with_tol(1e-12);
        let a = solve_ipfp(&f, &t, &unit_market(), &tight).unwrap();
        let b = solve_newton(&f, &t, &unit_market(), &tight).unwrap();
        assert!(a.matching.sup_distance(&b.matching) < 1e-10);
    }

    #[test]
    fn menzel_golden_ratio() {
        let f = Menzel::free(1, 1);
        let t = param_vector(&f, &[0.0]).unwrap();
        let sol = solve_ipfp(&f, &t, &unit_market(), &SolverOptions::default()).unwrap();
        // t + t² = 1
        let root = (5f64.sqrt() - 1.0) / 2.0;
        assert!(sol.converged);
        assert_relative_eq!(sol.matching.mu_x0[0], root, epsilon = 1e-9);
        assert_relative_eq!(sol.matching.mu_xy[(0, 0)], 1.0 - root, epsilon = 1e-9);
        assert!((sol.matching.mu_x0[0] - 0.6180340).abs() < 1e-7);
    }

    #[test]
    fn no_acceptable_matches() {
        let f = SearchMatching::new(&DMatrix::from_element(2, 3, false));
        let t = param_vector(&f, &[0.0, 0.0]).unwrap();
        let market = Market::from_margins(&[1.0, 2.0], &[0.5, 1.5, 3.0]).unwrap();
        let sol = solve_ipfp(&f, &t, &market, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.outer_iterations, 1);
        assert_eq!(sol.matching.mu_x0, market.n);
        assert_eq!(sol.matching.mu_0y, market.m);
        assert!(sol.matching.mu_xy.iter().all(|v| *v == 0.0));
        let j = system_jacobian(&f, &t, &market.n, &market.m).unwrap();
        assert_eq!(j, DMatrix::identity(5, 5));
    }

    #[test]
    fn residual_examples() {
        let f = ChooSiow::free(1, 1);
        let t = param_vector(&f, &[0.0]).unwrap();
        let half = DVector::from_element(1, 0.5);
        let r = residuals(&f, &t, &unit_market(), &half, &half).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.0]);
        let one = DVector::from_element(1, 1.0);
        let r = residuals(&f, &t, &unit_market(), &one, &one).unwrap();
        assert_eq!(r.as_slice(), &[-1.0, -1.0]);
        assert!(residuals(&f, &t, &unit_market(), &DVector::zeros(1), &one).is_err());
    }

    #[test]
    fn jacobian_example() {
        let f = ChooSiow::free(1, 1);
        let t = param_vector(&f, &[0.0]).unwrap();
        let q = DVector::from_element(1, 0.25);
        let j = system_jacobian(&f, &t, &q, &q).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.5, 0.5, 0.5, 1.5]);
        assert!((j - expected).amax() < 1e-15);
    }

    #[test]
    fn newton_from_ipfp_solution_is_immediate() {
        let f = ChooSiow::free(2, 3);
        let t = param_vector(&f, &[0.3, -0.2, 1.0, 0.0, 0.5, -1.0]).unwrap();
        let market = Market::from_margins(&[1.0, 2.0], &[0.5, 1.5, 3.0]).unwrap();
        let opts = SolverOptions::default();
        let ipfp = solve_ipfp(&f, &t, &market, &opts).unwrap();
        let newton =
            solve_newton_from(&f, &t, &market, &opts, (&ipfp.matching.mu_x0, &ipfp.matching.mu_0y)).unwrap();
        assert!(newton.converged);
        assert!(newton.outer_iterations <= 2);
        assert!(ipfp.matching.sup_distance(&newton.matching) < 1e-8);
    }

    #[test]
    fn option_validation() {
        let mut o = SolverOptions::default();
        assert!(o.validate().is_ok());
        o.inner_tol = 1e-3;
        assert!(o.validate().is_err());
        o.inner_tol = 0.0;
        assert!(o.validate().is_err());
        assert!(matches!(SolverOptions::with_tol(-1.0).validate(), Err(MeqError::Config(_))));
    }

    #[test]
    fn iteration_cap_reports_without_error() {
        let f = ChooSiow::free(2, 2);
        let t = param_vector(&f, &[2.0, 0.0, 0.0, 2.0]).unwrap();
        let market = Market::from_margins(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        let mut opts = SolverOptions::with_tol(1e-14);
        opts.max_outer_iter = 1;
        let sol = solve_ipfp(&f, &t, &market, &opts).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.outer_iterations, 1);
        assert!(sol.matching.mu_x0.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn scalar_root_handles_tiny_roots() {
        // t + 1e12·t = 1
        let r = scalar_root(1.0, 1.0, 1e-15, |t| (1e12 * t, 1e12));
        assert_relative_eq!(r, 1.0 / (1.0 + 1e12), max_relative = 1e-12);
    }
}
