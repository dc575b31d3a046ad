//! Exponentially transferable utility and its harmonic-mean closed form.
//!
//! Both families share the parameterization `(α_xy, γ_xy, log τ_xy)`, each a
//! [`LinearIndex`] in θ. [`EtuGkw`] evaluates `exp(−D(−log a, −log b))` through
//! the distance function; [`HarmonicMean`] evaluates the power-mean formula
//! directly. They agree algebraically and are kept as separate code paths.

use nalgebra::DMatrix;

use super::kernel::{assemble, chain_params, CellSecondOrder, LogKernel};
use super::{BoundFamily, FamilyDescriptor, LinearIndex, MatchingFunction};
use crate::error::{config, Result};
use crate::types::ParamVector;

use std::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq)]
pub struct EtuParams {
    pub tau: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

impl EtuParams {
    pub fn new(tau: DMatrix<f64>, alpha: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        if tau.shape() != alpha.shape() || tau.shape() != gamma.shape() {
            return config("ETU tables must share a shape");
        }
        if tau.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return config("tau must be positive");
        }
        if alpha.iter().chain(gamma.iter()).any(|v| !v.is_finite()) {
            return config("alpha and gamma must be finite");
        }
        Ok(Self { tau, alpha, gamma })
    }
}

#[inline]
fn log_add_exp(p: f64, q: f64) -> f64 {
    let hi = p.max(q);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((p - hi).exp() + (q - hi).exp()).ln()
}

#[inline]
fn distance(tau: f64, alpha: f64, gamma: f64, u: f64, v: f64) -> f64 {
    tau * (log_add_exp((u - alpha) / tau, (v - gamma) / tau) - LN_2)
}

/// `D_xy(u, v) = τ log((exp((u − α)/τ) + exp((v − γ)/τ)) / 2)`.
pub fn etu_distance(params: &EtuParams, x: usize, y: usize, u: f64, v: f64) -> f64 {
    distance(params.tau[(x, y)], params.alpha[(x, y)], params.gamma[(x, y)], u, v)
}

#[derive(Debug, Clone)]
struct EtuSpec {
    alpha: LinearIndex,
    gamma: LinearIndex,
    log_tau: LinearIndex,
    names: Vec<String>,
}

impl EtuSpec {
    fn new(alpha: LinearIndex, gamma: LinearIndex, log_tau: LinearIndex, names: Vec<String>) -> Result<Self> {
        let shape = alpha.shape();
        if gamma.shape() != shape || log_tau.shape() != shape {
            return config("ETU indices must share a shape");
        }
        let d = names.len();
        if alpha.dim() != d || gamma.dim() != d || log_tau.dim() != d {
            return config(format!("ETU indices must all have {d} parameters"));
        }
        ParamVector::new(vec![0.0; d], names.clone())?;
        Ok(Self { alpha, gamma, log_tau, names })
    }

    fn fixed(p: &EtuParams) -> Self {
        let log_tau = p.tau.map(f64::ln);
        Self {
            alpha: LinearIndex::constant(&p.alpha, 0),
            gamma: LinearIndex::constant(&p.gamma, 0),
            log_tau: LinearIndex::constant(&log_tau, 0),
            names: Vec::new(),
        }
    }

    fn scaled(base: &DMatrix<f64>, tau: &DMatrix<f64>) -> Result<Self> {
        if tau.shape() != base.shape() || tau.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return config("tau must be positive and match the base table");
        }
        Ok(Self {
            alpha: LinearIndex::scaled(base, 0, 2),
            gamma: LinearIndex::scaled(base, 1, 2),
            log_tau: LinearIndex::constant(&tau.map(f64::ln), 2),
            names: vec!["alpha".into(), "gamma".into()],
        })
    }

    fn cells(&self, theta: &[f64]) -> (usize, Vec<[f64; 3]>) {
        let (nx, ny) = self.alpha.shape();
        let cells = (0..nx * ny)
            .map(|c| {
                let (x, y) = (c / ny, c % ny);
                [
                    self.alpha.eval(theta, x, y),
                    self.gamma.eval(theta, x, y),
                    self.log_tau.eval(theta, x, y).exp(),
                ]
            })
            .collect();
        (ny, cells)
    }

    fn descriptor(&self, name: &str) -> FamilyDescriptor {
        FamilyDescriptor {
            name: name.into(),
            theta_dim: self.names.len(),
            homogeneous_degree_one: true,
            separable_in_parameters: false,
            has_theta_free_ratio: false,
            homogeneity_degree: Some(1.0),
        }
    }
}

/// Log kernel in `(log a, log b, α, γ, log τ)` given `L = log M`,
/// the weight `w1` on the men's term and `z = (α + log a, γ + log b)`.
fn soft_min_kernel(log_m: f64, w1: f64, z1: f64, z2: f64, tau: f64) -> LogKernel {
    let w2 = 1.0 - w1;
    let e = w1 * z1 + w2 * z2;
    let var = w1 * w2 * (z1 - z2) * (z1 - z2);
    let c = w1 * w2 / tau;
    let mut lk = LogKernel::new(5, log_m);
    lk.grad = [w1, w2, w1, w2, log_m - e];
    let h = &mut lk.hess;
    for &(i, j) in &[(0, 0), (0, 2), (2, 0), (2, 2), (1, 1), (1, 3), (3, 1), (3, 3)] {
        h[i][j] = -c;
    }
    for &(i, j) in &[(0, 1), (1, 0), (0, 3), (3, 0), (2, 1), (1, 2), (2, 3), (3, 2)] {
        h[i][j] = c;
    }
    let t1 = w1 * (z1 - e) / tau;
    let t2 = w2 * (z2 - e) / tau;
    for i in [0, 2] {
        h[i][4] = t1;
        h[4][i] = t1;
    }
    for i in [1, 3] {
        h[i][4] = t2;
        h[4][i] = t2;
    }
    h[4][4] = -var / tau + (log_m - e);
    lk
}

struct EtuBound<'a> {
    spec: &'a EtuSpec,
    ny: usize,
    cells: Vec<[f64; 3]>,
    closed_form: bool,
}

impl EtuBound<'_> {
    /// `(M, w1)`.
    #[inline]
    fn eval(&self, x: usize, y: usize, a: f64, b: f64) -> (f64, f64) {
        let [alpha, gamma, tau] = self.cells[x * self.ny + y];
        if self.closed_form {
            let p = 0.5 * (-alpha / tau).exp() * a.powf(-1.0 / tau);
            let q = 0.5 * (-gamma / tau).exp() * b.powf(-1.0 / tau);
            ((p + q).powf(-tau), p / (p + q))
        } else {
            let m = (-distance(tau, alpha, gamma, -a.ln(), -b.ln())).exp();
            let gap = ((alpha + a.ln()) - (gamma + b.ln())) / tau;
            (m, 1.0 / (1.0 + gap.exp()))
        }
    }

    fn indices(&self) -> [&LinearIndex; 3] {
        [&self.spec.alpha, &self.spec.gamma, &self.spec.log_tau]
    }
}

impl BoundFamily for EtuBound<'_> {
    #[inline]
    fn value(&self, x: usize, y: usize, a: f64, b: f64) -> f64 {
        self.eval(x, y, a, b).0
    }

    #[inline]
    fn value_grad(&self, x: usize, y: usize, a: f64, b: f64) -> (f64, f64, f64) {
        let (m, w1) = self.eval(x, y, a, b);
        (m, m * w1 / a, m * (1.0 - w1) / b)
    }

    fn param_grad(&self, x: usize, y: usize, a: f64, b: f64) -> Vec<(usize, f64)> {
        let (m, w1) = self.eval(x, y, a, b);
        let [alpha, gamma, _] = self.cells[x * self.ny + y];
        let z1 = alpha + a.ln();
        let z2 = gamma + b.ln();
        let e = w1 * z1 + (1.0 - w1) * z2;
        let d_s = [m * w1, m * (1.0 - w1), m * (m.ln() - e)];
        chain_params(&d_s, &self.indices(), x, y)
    }

    fn second_order(&self, x: usize, y: usize, a: f64, b: f64) -> CellSecondOrder {
        let (m, w1) = self.eval(x, y, a, b);
        let [alpha, gamma, tau] = self.cells[x * self.ny + y];
        let lk = soft_min_kernel(m.ln(), w1, alpha + a.ln(), gamma + b.ln(), tau);
        assemble(&lk, a, b, &self.indices(), x, y)
    }

    fn is_prohibited(&self, _x: usize, _y: usize) -> bool {
        false
    }
}

/// `M = exp(−D_xy(−log a, −log b))`.
#[derive(Debug, Clone)]
pub struct EtuGkw {
    spec: EtuSpec,
}

impl EtuGkw {
    pub fn new(alpha: LinearIndex, gamma: LinearIndex, log_tau: LinearIndex, names: Vec<String>) -> Result<Self> {
        Ok(Self { spec: EtuSpec::new(alpha, gamma, log_tau, names)? })
    }

    /// θ-free instance.
    pub fn fixed(params: &EtuParams) -> Self {
        Self { spec: EtuSpec::fixed(params) }
    }

    /// θ = (alpha, gamma) with `α = alpha·base`, `γ = gamma·base` and τ fixed.
    pub fn scaled(base: &DMatrix<f64>, tau: &DMatrix<f64>) -> Result<Self> {
        Ok(Self { spec: EtuSpec::scaled(base, tau)? })
    }

    pub fn params_at(&self, theta: &[f64]) -> EtuParams {
        let t = &self.spec;
        EtuParams {
            tau: t.log_tau.table(theta).map(f64::exp),
            alpha: t.alpha.table(theta),
            gamma: t.gamma.table(theta),
        }
    }
}

impl MatchingFunction for EtuGkw {
    fn descriptor(&self) -> FamilyDescriptor {
        self.spec.descriptor("etu")
    }

    fn shape(&self) -> (usize, usize) {
        self.spec.alpha.shape()
    }

    fn param_names(&self) -> Vec<String> {
        self.spec.names.clone()
    }

    fn bind<'a>(&'a self, theta: &[f64]) -> Box<dyn BoundFamily + 'a> {
        let (ny, cells) = self.spec.cells(theta);
        Box::new(EtuBound { spec: &self.spec, ny, cells, closed_form: false })
    }
}

/// `M = [e^{−α/τ}/2 · a^{−1/τ} + e^{−γ/τ}/2 · b^{−1/τ}]^{−τ}`.
#[derive(Debug, Clone)]
pub struct HarmonicMean {
    spec: EtuSpec,
}

impl HarmonicMean {
    pub fn new(alpha: LinearIndex, gamma: LinearIndex, log_tau: LinearIndex, names: Vec<String>) -> Result<Self> {
        Ok(Self { spec: EtuSpec::new(alpha, gamma, log_tau, names)? })
    }

    pub fn fixed(params: &EtuParams) -> Self {
        Self { spec: EtuSpec::fixed(params) }
    }

    pub fn scaled(base: &DMatrix<f64>, tau: &DMatrix<f64>) -> Result<Self> {
        Ok(Self { spec: EtuSpec::scaled(base, tau)? })
    }
}

impl MatchingFunction for HarmonicMean {
    fn descriptor(&self) -> FamilyDescriptor {
        self.spec.descriptor("harmonic")
    }

    fn shape(&self) -> (usize, usize) {
        self.spec.alpha.shape()
    }

    fn param_names(&self) -> Vec<String> {
        self.spec.names.clone()
    }

    fn bind<'a>(&'a self, theta: &[f64]) -> Box<dyn BoundFamily + 'a> {
        let (ny, cells) = self.spec.cells(theta);
        Box::new(EtuBound { spec: &self.spec, ny, cells, closed_form: true })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{mf_value, param_vector};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn distance_examples() {
        let p = EtuParams::new(one(1.0), one(0.0), one(0.0)).unwrap();
        assert_eq!(etu_distance(&p, 0, 0, 0.0, 0.0), 0.0);
        assert_relative_eq!(etu_distance(&p, 0, 0, 1.0, 1.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn harmonic_symmetric_case() {
        let f = HarmonicMean::fixed(&EtuParams::new(one(1.0), one(0.0), one(0.0)).unwrap());
        let t = param_vector(&f, &[]).unwrap();
        assert_relative_eq!(mf_value(&f, &t, 0, 0, 1.0, 1.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    /// `exp(−D(−log a, −log b))` written out from the distance definition.
    fn composed(tau: f64, alpha: f64, gamma: f64, a: f64, b: f64) -> f64 {
        let u = -a.ln();
        let v = -b.ln();
        let d = tau * ((((u - alpha) / tau).exp() + ((v - gamma) / tau).exp()) / 2.0).ln();
        (-d).exp()
    }

    #[test]
    fn closed_form_matches_distance_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let tau = rng.random_range(0.2..3.0);
            let alpha = rng.random_range(-2.0..2.0);
            let gamma = rng.random_range(-2.0..2.0);
            let a = rng.random_range(0.01..3.0);
            let b = rng.random_range(0.01..3.0);
            let p = EtuParams::new(one(tau), one(alpha), one(gamma)).unwrap();
            let hm = HarmonicMean::fixed(&p);
            let etu = EtuGkw::fixed(&p);
            let t = ParamVector::empty();
            let h = mf_value(&hm, &t, 0, 0, a, b).unwrap();
            let e = mf_value(&etu, &t, 0, 0, a, b).unwrap();
            let oracle = composed(tau, alpha, gamma, a, b);
            assert_relative_eq!(h, oracle, max_relative = 1e-12);
            assert_relative_eq!(e, oracle, max_relative = 1e-12);
            let shift = rng.random_range(-3.0..3.0);
            assert_relative_eq!(
                etu_distance(&p, 0, 0, 0.4 + shift, -0.1 + shift),
                etu_distance(&p, 0, 0, 0.4, -0.1) + shift,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn rejects_bad_tau() {
        assert!(EtuParams::new(one(0.0), one(0.0), one(0.0)).is_err());
    }
}
