//! BFGS minimization with a strong-Wolfe line search.

use nalgebra::{DMatrix, DVector};

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_BRACKET: usize = 30;
const MAX_ZOOM: usize = 40;
/// Relative band in which `f` is treated as flat and only slopes are tested.
const FLAT: f64 = 1e-10;

pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once `‖g‖∞` falls below this.
    pub gtol: f64,
}

#[derive(Debug)]
pub(crate) struct BfgsOutcome {
    pub x: DVector<f64>,
    pub f: f64,
    pub g: DVector<f64>,
    pub iterations: usize,
    pub evaluations: usize,
}

struct Point {
    alpha: f64,
    f: f64,
    g: DVector<f64>,
    slope: f64,
}

struct Reference {
    f0: f64,
    slope0: f64,
    flat: f64,
}

impl Reference {
    /// Armijo decrease, or the approximate form near roundoff level.
    fn sufficient(&self, p: &Point) -> bool {
        p.f.is_finite()
            && (p.f <= self.f0 + C1 * p.alpha * self.slope0
                || (p.f <= self.f0 + self.flat && p.slope <= (2.0 * C1 - 1.0) * self.slope0))
    }

    fn curvature(&self, p: &Point) -> bool {
        p.slope.abs() <= -C2 * self.slope0
    }
}

/// Minimizes `f`; the closure returns `None` where the objective is undefined,
/// which the line search treats as `+∞`.
pub(crate) fn minimize<F>(mut f: F, x0: DVector<f64>, opts: &BfgsOptions) -> Option<BfgsOutcome>
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let (f0, g0) = f(&x0)?;
    if !f0.is_finite() {
        return None;
    }
    let mut evaluations = 1;
    let mut x = x0;
    let mut fx = f0;
    let mut g = g0;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut iterations = 0;

    while iterations < opts.max_iter && g.amax() > opts.gtol {
        let mut p = -(&h * &g);
        let mut slope = p.dot(&g);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            first = true;
            p = -g.clone();
            slope = -g.norm_squared();
        }
        let alpha0 = if first { (1.0 / p.amax()).min(1.0) } else { 1.0 };
        let found = {
            let mut phi = |alpha: f64| {
                evaluations += 1;
                let xa = &x + &p * alpha;
                match f(&xa) {
                    Some((fa, ga)) if fa.is_finite() => {
                        let s = ga.dot(&p);
                        Point { alpha, f: fa, g: ga, slope: s }
                    }
                    _ => Point { alpha, f: f64::INFINITY, g: DVector::zeros(0), slope: f64::NAN },
                }
            };
            wolfe_search(&mut phi, fx, slope, alpha0)
        };
        let Some(pt) = found else { break };
        if !(pt.f <= fx + FLAT * fx.abs().max(1.0)) {
            break;
        }
        iterations += 1;
        let s = &p * pt.alpha;
        let y = &pt.g - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                h *= sy / y.norm_squared();
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H⁺ = H − ρ(s·(Hy)' + (Hy)·s') + (ρ²·y'Hy + ρ)·s·s'
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        x += s;
        fx = pt.f;
        g = pt.g;
    }
    Some(BfgsOutcome { x, f: fx, g, iterations, evaluations })
}

/// Strong-Wolfe step along a descent direction; falls back to the best
/// sufficient-decrease point when the curvature condition cannot be met.
fn wolfe_search(phi: &mut impl FnMut(f64) -> Point, f0: f64, slope0: f64, alpha0: f64) -> Option<Point> {
    let r = Reference { f0, slope0, flat: FLAT * f0.abs().max(1.0) };
    let mut prev = Point { alpha: 0.0, f: f0, g: DVector::zeros(0), slope: slope0 };
    let mut alpha = alpha0;
    for i in 0..MAX_BRACKET {
        let cur = phi(alpha);
        if !r.sufficient(&cur) || (i > 0 && cur.f > prev.f + r.flat) {
            return zoom(phi, &r, prev, cur);
        }
        if r.curvature(&cur) {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            return zoom(phi, &r, cur, prev);
        }
        alpha *= 2.0;
        prev = cur;
    }
    (prev.alpha > 0.0).then_some(prev)
}

fn zoom(phi: &mut impl FnMut(f64) -> Point, r: &Reference, mut lo: Point, mut hi: Point) -> Option<Point> {
    for _ in 0..MAX_ZOOM {
        let width = hi.alpha - lo.alpha;
        if width.abs() <= 1e-16 * lo.alpha.abs().max(1e-300) {
            break;
        }
        let mut alpha = lo.alpha + 0.5 * width;
        if hi.f.is_finite() && lo.slope.is_finite() {
            // Quadratic through (lo.f, lo.slope, hi.f), kept inside the interval.
            let denom = 2.0 * (hi.f - lo.f - lo.slope * width);
            if denom > 0.0 {
                let cand = lo.alpha - lo.slope * width * width / denom;
                let (a, b) = if lo.alpha < hi.alpha { (lo.alpha, hi.alpha) } else { (hi.alpha, lo.alpha) };
                let margin = 0.1 * (b - a);
                if cand > a + margin && cand < b - margin {
                    alpha = cand;
                }
            }
        }
        let cur = phi(alpha);
        if !r.sufficient(&cur) || cur.f > lo.f + r.flat {
            hi = cur;
        } else {
            if r.curvature(&cur) {
                return Some(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = std::mem::replace(&mut lo, cur);
            } else {
                lo = cur;
            }
        }
    }
    (lo.alpha > 0.0 && r.sufficient(&lo)).then_some(lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
        Some((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = BfgsOptions { max_iter: 500, gtol: 1e-10 };
        let out = minimize(rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &opts).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-8 && (out.x[1] - 1.0).abs() < 1e-8, "{:?}", out.x);
        assert!(out.g.amax() <= 1e-10);
    }

    #[test]
    fn quadratic_in_few_iterations() {
        let q = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let f = |x: &DVector<f64>| Some((0.5 * x.dot(&(&q * x)) - c.dot(x), &q * x - &c));
        let opts = BfgsOptions { max_iter: 100, gtol: 1e-12 };
        let out = minimize(f, DVector::zeros(3), &opts).unwrap();
        let exact = q.clone().lu().solve(&c).unwrap();
        assert!((out.x - exact).amax() < 1e-10);
        assert!(out.iterations <= 20);
    }

    #[test]
    fn undefined_region_is_avoided() {
        // log barrier: undefined for x ≤ 0, minimum at x = 1.
        let f = |x: &DVector<f64>| {
            (x[0] > 0.0).then(|| (x[0] - x[0].ln(), DVector::from_element(1, 1.0 - 1.0 / x[0])))
        };
        let opts = BfgsOptions { max_iter: 100, gtol: 1e-12 };
        let out = minimize(f, DVector::from_element(1, 20.0), &opts).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn already_optimal_takes_no_step() {
        let f = |x: &DVector<f64>| Some((x.norm_squared(), x * 2.0));
        let opts = BfgsOptions { max_iter: 10, gtol: 1e-10 };
        let out = minimize(f, DVector::zeros(2), &opts).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.evaluations, 1);
    }
}
