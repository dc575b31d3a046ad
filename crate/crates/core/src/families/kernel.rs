//! Second-order derivative assembly shared by the catalogued families.
//!
//! Families describe `L = log M` in log coordinates `q = (log a, log b, s_1..s_k)`
//! where the `s_j` are per-cell linear indices in θ. Everything else is chain rule.

use super::LinearIndex;

pub(crate) const MAX_SLOTS: usize = 5;

/// `log M` with gradient and Hessian in log coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogKernel {
    pub slots: usize,
    pub log_value: f64,
    pub grad: [f64; MAX_SLOTS],
    pub hess: [[f64; MAX_SLOTS]; MAX_SLOTS],
}

impl LogKernel {
    pub fn new(slots: usize, log_value: f64) -> Self {
        Self { slots, log_value, grad: [0.0; MAX_SLOTS], hess: [[0.0; MAX_SLOTS]; MAX_SLOTS] }
    }
}

/// Derivatives of `M` in `(a, b, θ)` at one cell. θ entries are sparse;
/// `d_theta_theta` lists both `(k, l)` and `(l, k)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellSecondOrder {
    pub value: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub d_aa: f64,
    pub d_ab: f64,
    pub d_bb: f64,
    pub d_theta: Vec<(usize, f64)>,
    pub d_a_theta: Vec<(usize, f64)>,
    pub d_b_theta: Vec<(usize, f64)>,
    pub d_theta_theta: Vec<(usize, usize, f64)>,
}

pub(crate) fn push_merge(v: &mut Vec<(usize, f64)>, k: usize, g: f64) {
    if g == 0.0 {
        return;
    }
    match v.iter_mut().find(|(j, _)| *j == k) {
        Some(e) => e.1 += g,
        None => v.push((k, g)),
    }
}

/// `∂M/∂θ` from `∂M/∂s_j`.
pub(crate) fn chain_params(d_s: &[f64], indices: &[&LinearIndex], x: usize, y: usize) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for (j, idx) in indices.iter().enumerate() {
        if d_s[j] == 0.0 {
            continue;
        }
        for &(k, c) in idx.coefs(x, y) {
            push_merge(&mut out, k, d_s[j] * c);
        }
    }
    out
}

pub(crate) fn assemble(lk: &LogKernel, a: f64, b: f64, indices: &[&LinearIndex], x: usize, y: usize) -> CellSecondOrder {
    let n = lk.slots;
    debug_assert_eq!(n, 2 + indices.len());
    let m = lk.log_value.exp();
    // Derivatives of M in log coordinates.
    let mut g = [0.0; MAX_SLOTS];
    let mut h = [[0.0; MAX_SLOTS]; MAX_SLOTS];
    for i in 0..n {
        g[i] = m * lk.grad[i];
    }
    for i in 0..n {
        for j in 0..n {
            h[i][j] = m * (lk.hess[i][j] + lk.grad[i] * lk.grad[j]);
        }
    }

    let mut out = CellSecondOrder {
        value: m,
        d_a: g[0] / a,
        d_b: g[1] / b,
        d_aa: (h[0][0] - g[0]) / (a * a),
        d_ab: h[0][1] / (a * b),
        d_bb: (h[1][1] - g[1]) / (b * b),
        ..Default::default()
    };

    let ns = indices.len();
    for j in 0..ns {
        let cj = indices[j].coefs(x, y);
        for &(k, c) in cj {
            push_merge(&mut out.d_theta, k, g[2 + j] * c);
            push_merge(&mut out.d_a_theta, k, h[0][2 + j] * c / a);
            push_merge(&mut out.d_b_theta, k, h[1][2 + j] * c / b);
        }
        for jj in 0..ns {
            let hs = h[2 + j][2 + jj];
            if hs == 0.0 {
                continue;
            }
            for &(k, c) in cj {
                for &(l, cl) in indices[jj].coefs(x, y) {
                    let v = hs * c * cl;
                    match out.d_theta_theta.iter_mut().find(|e| e.0 == k && e.1 == l) {
                        Some(e) => e.2 += v,
                        None => out.d_theta_theta.push((k, l, v)),
                    }
                }
            }
        }
    }
    out
}
