//! Counterfactual equilibria under new margins `(n′, m′)` with θ held fixed.
//!
//! The parametric route re-solves the model at the new margins. The
//! parameter-free route works on ratios `z̃ = z′/z` against an observed
//! baseline: with `p_x0 = μ*_x0/n_x`, `p_xy = μ*_xy/n_x` (and `q` likewise
//! over `m_y`) it solves
//! `ñ_x = p_x0·μ̃_x0 + Σ_y p_xy·g(μ̃_x0, μ̃_0y)` and the women's analogue.

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::{collect, scalar_root, solve_ipfp, SolverOptions};
use crate::error::{config, domain, MeqError, Result};
use crate::families::MatchingFunction;
use crate::types::{Market, Matching, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterfactualMethod {
    Parametric,
    ParameterFree,
}

impl CounterfactualMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CounterfactualMethod::Parametric => "parametric",
            CounterfactualMethod::ParameterFree => "parameter_free",
        }
    }
}

/// Counterfactual over baseline ratios. Cells that are empty in the
/// baseline carry ratio 1 and stay empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Ratios {
    pub mu_xy: DMatrix<f64>,
    pub mu_x0: DVector<f64>,
    pub mu_0y: DVector<f64>,
    pub n: DVector<f64>,
    pub m: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualResult {
    pub ratios: Ratios,
    pub baseline: Matching,
    pub new_matching: Matching,
    pub method: CounterfactualMethod,
    pub iterations: usize,
    pub converged: bool,
}

fn check_same_shape(nx: usize, ny: usize, market: &Market) -> Result<()> {
    if market.nx() != nx || market.ny() != ny {
        return config(format!("new market is {}x{} but the baseline is {nx}x{ny}", market.nx(), market.ny()));
    }
    Ok(())
}

fn ratio(new: f64, base: f64) -> f64 {
    if base > 0.0 {
        new / base
    } else {
        1.0
    }
}

/// Re-solves the model at `(θ̂, n′, m′)`; ratios are against the model
/// equilibrium at the baseline market.
pub fn counterfactual_parametric(
    family: &dyn MatchingFunction,
    theta_hat: &ParamVector,
    baseline: &Market,
    new_market: &Market,
    opts: &SolverOptions,
) -> Result<CounterfactualResult> {
    check_same_shape(baseline.nx(), baseline.ny(), new_market)?;
    let base = solve_ipfp(family, theta_hat, baseline, opts)?;
    let new = solve_ipfp(family, theta_hat, new_market, opts)?;
    let (b, n) = (&base.matching, &new.matching);
    let ratios = Ratios {
        mu_xy: n.mu_xy.zip_map(&b.mu_xy, ratio),
        mu_x0: n.mu_x0.zip_map(&b.mu_x0, ratio),
        mu_0y: n.mu_0y.zip_map(&b.mu_0y, ratio),
        n: new_market.n.component_div(&baseline.n),
        m: new_market.m.component_div(&baseline.m),
    };
    Ok(CounterfactualResult {
        ratios,
        baseline: base.matching.clone(),
        new_matching: new.matching,
        method: CounterfactualMethod::Parametric,
        iterations: new.outer_iterations,
        converged: base.converged && new.converged,
    })
}

/// The ratio system solved by the revised IPFP, initialized at
/// `μ̃⁰_0y = m̃_y / q_0y`.
pub fn counterfactual_parameter_free(
    baseline: &Matching,
    new_market: &Market,
    ratio_form: &dyn MatchingFunction,
    opts: &SolverOptions,
) -> Result<CounterfactualResult> {
    let system = RatioSystem::new(baseline, new_market, ratio_form)?;
    let init = system.m_ratio.component_div(&system.q0);
    system.solve(init, opts)
}

/// As [`counterfactual_parameter_free`] from an explicit `μ̃_0y` start.
pub fn counterfactual_parameter_free_from(
    baseline: &Matching,
    new_market: &Market,
    ratio_form: &dyn MatchingFunction,
    opts: &SolverOptions,
    init_mu_0y_ratio: &DVector<f64>,
) -> Result<CounterfactualResult> {
    let system = RatioSystem::new(baseline, new_market, ratio_form)?;
    if init_mu_0y_ratio.len() != system.q0.len() || init_mu_0y_ratio.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return config("initial ratios must be positive, one per woman type");
    }
    system.solve(init_mu_0y_ratio.clone(), opts)
}

struct RatioSystem<'a> {
    baseline: &'a Matching,
    family: &'a dyn MatchingFunction,
    n_ratio: DVector<f64>,
    m_ratio: DVector<f64>,
    p0: DVector<f64>,
    q0: DVector<f64>,
    p: DMatrix<f64>,
    q: DMatrix<f64>,
}

impl<'a> RatioSystem<'a> {
    fn new(baseline: &'a Matching, new_market: &Market, family: &'a dyn MatchingFunction) -> Result<Self> {
        let d = family.descriptor();
        let (fx, fy) = family.shape();
        let has_grad = fx * fy == 0 || family.ratio_form_grad(0, 0, 1.0, 1.0).is_some();
        if !d.has_theta_free_ratio || !has_grad {
            return Err(MeqError::Capability(format!("{} has no parameter-free ratio form", d.name)));
        }
        let (nx, ny) = (baseline.nx(), baseline.ny());
        if family.shape() != (nx, ny) {
            return config("ratio form shape does not match the baseline");
        }
        check_same_shape(nx, ny, new_market)?;
        if baseline.mu_x0.iter().chain(baseline.mu_0y.iter()).any(|t| *t <= 0.0) {
            return domain("baseline singles must be strictly positive");
        }
        let n = baseline.men_margins();
        let m = baseline.women_margins();
        Ok(Self {
            baseline,
            family,
            n_ratio: new_market.n.component_div(&n),
            m_ratio: new_market.m.component_div(&m),
            p0: baseline.mu_x0.component_div(&n),
            q0: baseline.mu_0y.component_div(&m),
            p: DMatrix::from_fn(nx, ny, |x, y| baseline.mu_xy[(x, y)] / n[x]),
            q: DMatrix::from_fn(nx, ny, |x, y| baseline.mu_xy[(x, y)] / m[y]),
        })
    }

    fn g(&self, x: usize, y: usize, ra: f64, rb: f64) -> (f64, f64, f64) {
        self.family.ratio_form_grad(x, y, ra, rb).expect("ratio form checked at construction")
    }

    /// Men's half-step in `t = p_x0·μ̃_x0 ∈ (0, ñ_x]`.
    fn step_x(&self, b: &DVector<f64>, warm: &DVector<f64>, opts: &SolverOptions) -> DVector<f64> {
        let ny = b.len();
        let solve = |x: usize| {
            let p0 = self.p0[x];
            let t = scalar_root(self.n_ratio[x], p0 * warm[x], opts.inner_tol, |t| {
                let (mut s, mut ds) = (0.0, 0.0);
                for y in 0..ny {
                    let w = self.p[(x, y)];
                    if w > 0.0 {
                        let (g, ga, _) = self.g(x, y, t / p0, b[y]);
                        s += w * g;
                        ds += w * ga / p0;
                    }
                }
                (s, ds)
            });
            t / p0
        };
        collect(self.p0.len(), opts.parallel, solve)
    }

    fn step_y(&self, a: &DVector<f64>, warm: &DVector<f64>, opts: &SolverOptions) -> DVector<f64> {
        let nx = a.len();
        let solve = |y: usize| {
            let q0 = self.q0[y];
            let t = scalar_root(self.m_ratio[y], q0 * warm[y], opts.inner_tol, |t| {
                let (mut s, mut ds) = (0.0, 0.0);
                for x in 0..nx {
                    let w = self.q[(x, y)];
                    if w > 0.0 {
                        let (g, _, gb) = self.g(x, y, a[x], t / q0);
                        s += w * g;
                        ds += w * gb / q0;
                    }
                }
                (s, ds)
            });
            t / q0
        };
        collect(self.q0.len(), opts.parallel, solve)
    }

    fn residual(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let (nx, ny) = (a.len(), b.len());
        let mut rx = self.n_ratio.clone() - self.p0.component_mul(a);
        let mut ry = self.m_ratio.clone() - self.q0.component_mul(b);
        for x in 0..nx {
            for y in 0..ny {
                if self.p[(x, y)] > 0.0 {
                    let g = self.g(x, y, a[x], b[y]).0;
                    rx[x] -= self.p[(x, y)] * g;
                    ry[y] -= self.q[(x, y)] * g;
                }
            }
        }
        rx.amax().max(ry.amax())
    }

    fn solve(&self, init_b: DVector<f64>, opts: &SolverOptions) -> Result<CounterfactualResult> {
        opts.validate()?;
        let mut a = self.n_ratio.component_div(&self.p0);
        let mut b = init_b;
        let mut iterations = opts.max_outer_iter;
        let mut converged = false;
        for t in 1..=opts.max_outer_iter {
            a = self.step_x(&b, &a, opts);
            let next = self.step_y(&a, &b, opts);
            let moved = (&next - &b).amax();
            b = next;
            if moved < opts.tol && self.residual(&a, &b) <= opts.tol {
                iterations = t;
                converged = true;
                break;
            }
        }
        Ok(self.finish(a, b, iterations, converged))
    }

    fn finish(&self, a: DVector<f64>, b: DVector<f64>, iterations: usize, converged: bool) -> CounterfactualResult {
        let base = self.baseline;
        let (nx, ny) = (a.len(), b.len());
        let mu_xy_ratio =
            DMatrix::from_fn(nx, ny, |x, y| if base.mu_xy[(x, y)] > 0.0 { self.g(x, y, a[x], b[y]).0 } else { 1.0 });
        let new_matching = Matching {
            mu_xy: mu_xy_ratio.component_mul(&base.mu_xy),
            mu_x0: a.component_mul(&base.mu_x0),
            mu_0y: b.component_mul(&base.mu_0y),
        };
        CounterfactualResult {
            ratios: Ratios { mu_xy: mu_xy_ratio, mu_x0: a, mu_0y: b, n: self.n_ratio.clone(), m: self.m_ratio.clone() },
            baseline: base.clone(),
            new_matching,
            method: CounterfactualMethod::ParameterFree,
            iterations,
            converged,
        }
    }
}
