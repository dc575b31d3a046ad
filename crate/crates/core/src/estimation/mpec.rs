//! MPEC: Newton on the stationarity conditions of
//! `𝓛 = ℓ/N̂ + λ·G(θ, u, v)` with `G` the accounting constraints.

use nalgebra::{DMatrix, DVector};

use super::likelihood::Problem;
use super::{EstimationResult, FitMethod, FitOptions, ObservedData};
use crate::error::{config, MeqError, Result};
use crate::families::{check_theta, MatchingFunction};
use crate::types::ParamVector;

const MAX_HALVINGS: usize = 50;

/// An MPEC iterate. `u = −log μ_x0` and `v = −log μ_0y` are in observed
/// units; `lambda` multiplies the constraints in solver working units.
#[derive(Debug, Clone, PartialEq)]
pub struct MpecState {
    pub theta: ParamVector,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub lambda: DVector<f64>,
}

struct Kkt {
    /// `∇ℓ/N̂` over `(θ, u, v)`.
    grad_obj: DVector<f64>,
    /// `G`, rows then columns.
    g: DVector<f64>,
    /// `∂G/∂(θ, u, v)`.
    jg: DMatrix<f64>,
    /// `∇²𝓛` over `(θ, u, v)`.
    hess: Option<DMatrix<f64>>,
    objective: f64,
}

/// Working-unit variables.
struct Point {
    theta: DVector<f64>,
    a: DVector<f64>,
    b: DVector<f64>,
    lambda: DVector<f64>,
}

fn kkt(problem: &Problem, pt: &Point, with_hess: bool) -> Kkt {
    let (nx, ny, d) = (problem.nx(), problem.ny(), pt.theta.len());
    let p = d + nx + ny;
    let (iu, iv) = (|x: usize| d + x, |y: usize| d + nx + y);
    let bound = problem.family.bind(pt.theta.as_slice());
    let (a, b, lam) = (&pt.a, &pt.b, &pt.lambda);

    let mut total = a.sum() + b.sum();
    for x in 0..nx {
        for y in 0..ny {
            total += bound.value(x, y, a[x], b[y]);
        }
    }

    let mut grad_n = DVector::zeros(p);
    let mut grad_obj = DVector::zeros(p);
    let mut g = DVector::zeros(nx + ny);
    let mut jg = DMatrix::zeros(nx + ny, p);
    let mut hess = with_hess.then(|| DMatrix::zeros(p, p));
    let mut objective = 0.0;
    let mut grad_m: Vec<(usize, f64)> = Vec::new();

    for x in 0..nx {
        g[x] = problem.n[x] - a[x];
    }
    for y in 0..ny {
        g[nx + y] = problem.m[y] - b[y];
    }
    for x in 0..nx {
        for y in 0..ny {
            let c = x * ny + y;
            let w = problem.pi_hat[c];
            let s = bound.second_order(x, y, a[x], b[y]);
            let value = s.value;
            g[x] -= value;
            g[nx + y] -= value;
            if w > 0.0 {
                objective += w * (value / total).ln();
            }

            grad_m.clear();
            grad_m.extend(s.d_theta.iter().copied());
            grad_m.push((iu(x), -a[x] * s.d_a));
            grad_m.push((iv(y), -b[y] * s.d_b));
            let weight = if w > 0.0 && value > 0.0 { w / value } else { 0.0 };
            for &(i, gi) in &grad_m {
                grad_n[i] += gi;
                grad_obj[i] += weight * gi;
                jg[(x, i)] -= gi;
                jg[(nx + y, i)] -= gi;
            }

            if let Some(h) = hess.as_mut() {
                // Coefficient of ∇²M in ∇²𝓛 (the −∇²N/N part included).
                let coef = weight - 1.0 / total - (lam[x] + lam[nx + y]);
                for &(k, l, v) in &s.d_theta_theta {
                    h[(k, l)] += coef * v;
                }
                for &(k, v) in &s.d_a_theta {
                    let e = -a[x] * v * coef;
                    h[(iu(x), k)] += e;
                    h[(k, iu(x))] += e;
                }
                for &(k, v) in &s.d_b_theta {
                    let e = -b[y] * v * coef;
                    h[(iv(y), k)] += e;
                    h[(k, iv(y))] += e;
                }
                h[(iu(x), iu(x))] += coef * (a[x] * s.d_a + a[x] * a[x] * s.d_aa);
                h[(iv(y), iv(y))] += coef * (b[y] * s.d_b + b[y] * b[y] * s.d_bb);
                let uv = coef * a[x] * b[y] * s.d_ab;
                h[(iu(x), iv(y))] += uv;
                h[(iv(y), iu(x))] += uv;
                if weight > 0.0 {
                    let outer = w / (value * value);
                    for &(i, gi) in &grad_m {
                        for &(j, gj) in &grad_m {
                            h[(i, j)] -= outer * gi * gj;
                        }
                    }
                }
            }
        }
    }
    for x in 0..nx {
        let w = problem.pi_hat[nx * ny + x];
        if w > 0.0 {
            objective += w * (a[x] / total).ln();
        }
        grad_n[iu(x)] -= a[x];
        grad_obj[iu(x)] -= w;
        jg[(x, iu(x))] += a[x];
        if let Some(h) = hess.as_mut() {
            h[(iu(x), iu(x))] -= a[x] / total + lam[x] * a[x];
        }
    }
    for y in 0..ny {
        let w = problem.pi_hat[nx * ny + nx + y];
        if w > 0.0 {
            objective += w * (b[y] / total).ln();
        }
        grad_n[iv(y)] -= b[y];
        grad_obj[iv(y)] -= w;
        jg[(nx + y, iv(y))] += b[y];
        if let Some(h) = hess.as_mut() {
            h[(iv(y), iv(y))] -= b[y] / total + lam[nx + y] * b[y];
        }
    }
    let mass = problem.pi_hat.sum();
    grad_obj -= &grad_n * (mass / total);
    if let Some(h) = hess.as_mut() {
        *h += (&grad_n * grad_n.transpose()) * (mass / (total * total));
    }
    Kkt { grad_obj, g, jg, hess, objective }
}

fn residual_of(k: &Kkt, lambda: &DVector<f64>) -> DVector<f64> {
    let grad_l = &k.grad_obj + k.jg.transpose() * lambda;
    let mut z = DVector::zeros(grad_l.len() + k.g.len());
    z.rows_mut(0, grad_l.len()).copy_from(&grad_l);
    z.rows_mut(grad_l.len(), k.g.len()).copy_from(&k.g);
    z
}

/// Multipliers solving the `(u, v)` stationarity block.
fn multipliers(k: &Kkt, d: usize) -> Option<DVector<f64>> {
    let m = k.g.len();
    let juv = k.jg.columns(d, m).transpose();
    juv.lu().solve(&(-k.grad_obj.rows(d, m)))
}

fn to_point(problem: &Problem, state: &MpecState) -> Point {
    // Working masses are observed masses divided by the scale.
    let a = state.u.map(|u| (-u).exp() / problem.scale);
    let b = state.v.map(|v| (-v).exp() / problem.scale);
    Point { theta: state.theta.values().clone(), a, b, lambda: state.lambda.clone() }
}

fn to_state(problem: &Problem, names: &ParamVector, pt: &Point) -> Result<MpecState> {
    Ok(MpecState {
        theta: names.with_values(pt.theta.as_slice())?,
        u: pt.a.map(|a| -(a * problem.scale).ln()),
        v: pt.b.map(|b| -(b * problem.scale).ln()),
        lambda: pt.lambda.clone(),
    })
}

fn check_state(family: &dyn MatchingFunction, state: &MpecState) -> Result<()> {
    check_theta(family, &state.theta)?;
    let (nx, ny) = family.shape();
    if state.u.len() != nx || state.v.len() != ny || state.lambda.len() != nx + ny {
        return config("MPEC state has the wrong dimensions");
    }
    if state.u.iter().chain(state.v.iter()).chain(state.lambda.iter()).any(|t| !t.is_finite()) {
        return config("MPEC state must be finite");
    }
    Ok(())
}

/// The state at the equilibrium for `theta`, with multipliers from the
/// `(u, v)` stationarity block.
pub fn mpec_state_at(
    family: &dyn MatchingFunction,
    observed: &ObservedData,
    theta: &ParamVector,
    opts: &FitOptions,
) -> Result<MpecState> {
    check_theta(family, theta)?;
    let problem = Problem::new(family, observed, &opts.solver)?;
    let eq = problem.equilibrium(theta.as_slice(), &problem.m)?;
    let mut pt = Point { theta: theta.values().clone(), a: eq.a, b: eq.b, lambda: DVector::zeros(0) };
    pt.lambda = DVector::zeros(problem.nx() + problem.ny());
    let k = kkt(&problem, &pt, false);
    pt.lambda = multipliers(&k, theta.len()).ok_or_else(|| MeqError::Singular("constraint Jacobian".into()))?;
    to_state(&problem, theta, &pt)
}

/// `Z = (∇_θ𝓛, ∇_{u,v}𝓛, G)` at a state (working units).
pub fn mpec_residual(family: &dyn MatchingFunction, observed: &ObservedData, state: &MpecState) -> Result<DVector<f64>> {
    check_state(family, state)?;
    let problem = Problem::new(family, observed, &crate::equilibrium::SolverOptions::default())?;
    let pt = to_point(&problem, state);
    let k = kkt(&problem, &pt, false);
    Ok(residual_of(&k, &pt.lambda))
}

/// MPEC from `theta_init`. Starts at the observed singles; if that run
/// fails, restarts from the equilibrium at `theta_init`.
pub fn fit_mpec(
    family: &dyn MatchingFunction,
    observed: &ObservedData,
    theta_init: &ParamVector,
    opts: &FitOptions,
) -> Result<EstimationResult> {
    check_theta(family, theta_init)?;
    let problem = Problem::new(family, observed, &opts.solver)?;
    let (nx, ny) = (problem.nx(), problem.ny());
    let mu = &observed.matching;
    let mut first = None;
    if mu.mu_x0.iter().chain(mu.mu_0y.iter()).all(|t| *t > 0.0) {
        let mut pt = Point {
            theta: theta_init.values().clone(),
            a: &mu.mu_x0 / problem.scale,
            b: &mu.mu_0y / problem.scale,
            lambda: DVector::zeros(nx + ny),
        };
        if let Some(l) = multipliers(&kkt(&problem, &pt, false), theta_init.len()) {
            pt.lambda = l;
            let res = newton(&problem, theta_init, pt, opts)?;
            if res.converged {
                return Ok(res);
            }
            first = Some(res);
        }
    }
    match mpec_state_at(family, observed, theta_init, opts) {
        Ok(state) => {
            let res = newton(&problem, theta_init, to_point(&problem, &state), opts)?;
            match first {
                Some(f) if !res.converged && f.gradient_norm < res.gradient_norm => Ok(f),
                _ => Ok(res),
            }
        }
        Err(e) => first.ok_or(e),
    }
}

/// MPEC from an explicit state.
pub fn fit_mpec_from(
    family: &dyn MatchingFunction,
    observed: &ObservedData,
    state: &MpecState,
    opts: &FitOptions,
) -> Result<EstimationResult> {
    check_state(family, state)?;
    let problem = Problem::new(family, observed, &opts.solver)?;
    let pt = to_point(&problem, state);
    newton(&problem, &state.theta, pt, opts)
}

fn admissible(problem: &Problem, pt: &Point) -> bool {
    let inside = |v: &DVector<f64>, cap: &DVector<f64>| v.iter().zip(cap.iter()).all(|(t, c)| *t > 0.0 && *t <= *c);
    inside(&pt.a, &problem.n) && inside(&pt.b, &problem.m) && pt.theta.iter().all(|t| t.is_finite())
}

fn newton(problem: &Problem, names: &ParamVector, mut pt: Point, opts: &FitOptions) -> Result<EstimationResult> {
    let (nx, ny, d) = (problem.nx(), problem.ny(), pt.theta.len());
    let p = d + nx + ny;
    let q = nx + ny;
    let mut k = kkt(problem, &pt, true);
    let mut z = residual_of(&k, &pt.lambda);
    let mut iterations = 0;
    let done = |z: &DVector<f64>, tol_l: f64, tol_g: f64| z.rows(0, p).amax() <= tol_l && z.rows(p, q).amax() <= tol_g;
    while iterations < opts.max_iter && !done(&z, opts.target_grad, opts.solver.tol) {
        let h = k.hess.take().expect("hessian requested");
        let mut jz = DMatrix::zeros(p + q, p + q);
        jz.view_mut((0, 0), (p, p)).copy_from(&h);
        jz.view_mut((0, p), (p, q)).copy_from(&k.jg.transpose());
        jz.view_mut((p, 0), (q, p)).copy_from(&k.jg);
        let Some(step) = jz.lu().solve(&(-&z)) else { break };
        if step.iter().any(|s| !s.is_finite()) {
            break;
        }
        let norm = z.norm();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = Point {
                theta: &pt.theta + step.rows(0, d) * t,
                a: pt.a.zip_map(&step.rows(d, nx).into_owned(), |a, du| a * (-t * du).exp()),
                b: pt.b.zip_map(&step.rows(d + nx, ny).into_owned(), |b, dv| b * (-t * dv).exp()),
                lambda: &pt.lambda + step.rows(p, q) * t,
            };
            if admissible(problem, &trial) {
                let tk = kkt(problem, &trial, true);
                let tz = residual_of(&tk, &trial.lambda);
                if tz.iter().all(|v| v.is_finite()) && tz.norm() < norm {
                    accepted = Some((trial, tk, tz));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((np, nk, nz)) = accepted else { break };
        pt = np;
        k = nk;
        z = nz;
        iterations += 1;
    }
    let converged = done(&z, opts.grad_tol, opts.solver.tol);
    Ok(EstimationResult {
        theta_hat: names.with_values(pt.theta.as_slice())?,
        loglik: k.objective * problem.n_obs,
        gradient_norm: z.rows(0, p).amax(),
        iterations,
        evaluations: iterations + 1,
        converged,
        method: FitMethod::Mpec,
        covariance: None,
        std_errors: None,
    })
}
