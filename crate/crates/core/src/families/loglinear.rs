//! Families with `log M = c_a log a + c_b log b + w·s(θ)`: Choo-Siow,
//! Menzel, search-and-matching and Cobb-Douglas.

use nalgebra::{DMatrix, DVector};

use super::kernel::{assemble, chain_params, CellSecondOrder, LogKernel};
use super::{cell_names, BoundFamily, FamilyDescriptor, LinearIndex, MatchingFunction, SurplusTable};
use crate::error::{config, Result};
use crate::types::ParamVector;

#[derive(Clone, Copy)]
enum Power<'a> {
    Half,
    Unit,
    Table(&'a DMatrix<f64>, &'a DMatrix<f64>),
}

struct LogLinearBound<'a> {
    ny: usize,
    index: &'a LinearIndex,
    /// `exp(w·s)`; zero marks a prohibited cell.
    scale: Vec<f64>,
    weight: Vec<f64>,
    power: Power<'a>,
}

impl LogLinearBound<'_> {
    #[inline]
    fn exponents(&self, x: usize, y: usize) -> (f64, f64) {
        match self.power {
            Power::Half => (0.5, 0.5),
            Power::Unit => (1.0, 1.0),
            Power::Table(ea, eb) => (ea[(x, y)], eb[(x, y)]),
        }
    }
}

impl BoundFamily for LogLinearBound<'_> {
    #[inline]
    fn value(&self, x: usize, y: usize, a: f64, b: f64) -> f64 {
        let s = self.scale[x * self.ny + y];
        if s == 0.0 {
            return 0.0;
        }
        match self.power {
            Power::Half => s * (a * b).sqrt(),
            Power::Unit => s * a * b,
            Power::Table(ea, eb) => s * a.powf(ea[(x, y)]) * b.powf(eb[(x, y)]),
        }
    }

    #[inline]
    fn value_grad(&self, x: usize, y: usize, a: f64, b: f64) -> (f64, f64, f64) {
        let m = self.value(x, y, a, b);
        if m == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let (ca, cb) = self.exponents(x, y);
        (m, m * ca / a, m * cb / b)
    }

    fn param_grad(&self, x: usize, y: usize, a: f64, b: f64) -> Vec<(usize, f64)> {
        let m = self.value(x, y, a, b);
        if m == 0.0 {
            return Vec::new();
        }
        let w = self.weight[x * self.ny + y];
        chain_params(&[m * w], &[self.index], x, y)
    }

    fn second_order(&self, x: usize, y: usize, a: f64, b: f64) -> CellSecondOrder {
        let m = self.value(x, y, a, b);
        if m == 0.0 {
            return CellSecondOrder::default();
        }
        let (ca, cb) = self.exponents(x, y);
        let mut lk = LogKernel::new(3, m.ln());
        lk.grad[0] = ca;
        lk.grad[1] = cb;
        lk.grad[2] = self.weight[x * self.ny + y];
        assemble(&lk, a, b, &[self.index], x, y)
    }

    fn is_prohibited(&self, x: usize, y: usize) -> bool {
        self.scale[x * self.ny + y] == 0.0
    }
}

fn bind_loglinear<'a>(
    index: &'a LinearIndex,
    theta: &[f64],
    allowed: &[bool],
    weight: Vec<f64>,
    power: Power<'a>,
) -> LogLinearBound<'a> {
    let (nx, ny) = index.shape();
    let scale = (0..nx * ny)
        .map(|c| {
            if allowed[c] {
                (weight[c] * index.eval(theta, c / ny, c % ny)).exp()
            } else {
                0.0
            }
        })
        .collect();
    LogLinearBound { ny, index, scale, weight, power }
}

fn check_names(index: &LinearIndex, names: &[String]) -> Result<()> {
    if names.len() != index.dim() {
        return config(format!("index has {} parameters but {} names", index.dim(), names.len()));
    }
    ParamVector::new(vec![0.0; names.len()], names.to_vec()).map(|_| ())
}

/// Transferable utility: `M = √(ab)·exp(Φ/2)`.
#[derive(Debug, Clone)]
pub struct ChooSiow {
    phi: LinearIndex,
    allowed: Vec<bool>,
    names: Vec<String>,
}

impl ChooSiow {
    pub fn new(phi: LinearIndex, names: Vec<String>) -> Result<Self> {
        check_names(&phi, &names)?;
        let (nx, ny) = phi.shape();
        Ok(Self { phi, allowed: vec![true; nx * ny], names })
    }

    /// One free parameter `phi_x_y` per cell.
    pub fn free(nx: usize, ny: usize) -> Self {
        let cells: Vec<_> = (0..nx).flat_map(|x| (0..ny).map(move |y| (x, y))).collect();
        let phi = LinearIndex::free_cells(nx, ny, &cells, 0, cells.len()).expect("cells in range");
        Self::new(phi, cell_names("phi", &cells)).expect("valid names")
    }

    /// Free parameters on the allowed cells of `table`, returned at the table's values.
    pub fn from_surplus_table(table: &SurplusTable) -> (Self, ParamVector) {
        let (nx, ny) = table.shape();
        let cells: Vec<_> = (0..nx)
            .flat_map(|x| (0..ny).map(move |y| (x, y)))
            .filter(|&(x, y)| table.get(x, y).is_some())
            .collect();
        let values: Vec<f64> = cells.iter().map(|&(x, y)| table.get(x, y).unwrap()).collect();
        let phi = LinearIndex::free_cells(nx, ny, &cells, 0, cells.len()).expect("cells in range");
        let names = cell_names("phi", &cells);
        let mut fam = Self::new(phi, names.clone()).expect("valid names");
        fam.allowed = (0..nx * ny).map(|c| table.get(c / ny, c % ny).is_some()).collect();
        let theta = ParamVector::new(values, names).expect("valid names");
        (fam, theta)
    }

    /// Marks cells where matching is impossible.
    pub fn with_prohibited(mut self, cells: &[(usize, usize)]) -> Result<Self> {
        let (nx, ny) = self.phi.shape();
        for &(x, y) in cells {
            if x >= nx || y >= ny {
                return config(format!("prohibited cell ({x}, {y}) outside {nx}x{ny}"));
            }
            self.allowed[x * ny + y] = false;
        }
        Ok(self)
    }

    pub fn surplus_index(&self) -> &LinearIndex {
        &self.phi
    }

    pub fn is_allowed(&self, x: usize, y: usize) -> bool {
        self.allowed[x * self.phi.shape().1 + y]
    }
}

impl MatchingFunction for ChooSiow {
    fn descriptor(&self) -> FamilyDescriptor {
        FamilyDescriptor {
            name: "choo-siow".into(),
            theta_dim: self.names.len(),
            homogeneous_degree_one: true,
            separable_in_parameters: true,
            has_theta_free_ratio: true,
            homogeneity_degree: Some(1.0),
        }
    }

    fn shape(&self) -> (usize, usize) {
        self.phi.shape()
    }

    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn bind<'a>(&'a self, theta: &[f64]) -> Box<dyn BoundFamily + 'a> {
        let (nx, ny) = self.phi.shape();
        Box::new(bind_loglinear(&self.phi, theta, &self.allowed, vec![0.5; nx * ny], Power::Half))
    }

    fn ratio_form(&self, _x: usize, _y: usize, ra: f64, rb: f64) -> Option<f64> {
        Some((ra * rb).sqrt())
    }

    fn ratio_form_grad(&self, _x: usize, _y: usize, ra: f64, rb: f64) -> Option<(f64, f64, f64)> {
        let g = (ra * rb).sqrt();
        Some((g, 0.5 * g / ra, 0.5 * g / rb))
    }
}

/// Non-transferable utility: `M = a·b·exp(α + γ)`, with `Φ = α + γ` indexed by θ.
#[derive(Debug, Clone)]
pub struct Menzel {
    phi: LinearIndex,
    names: Vec<String>,
}

impl Menzel {
    pub fn new(phi: LinearIndex, names: Vec<String>) -> Result<Self> {
        check_names(&phi, &names)?;
        Ok(Self { phi, names })
    }

    pub fn free(nx: usize, ny: usize) -> Self {
        let cells: Vec<_> = (0..nx).flat_map(|x| (0..ny).map(move |y| (x, y))).collect();
        let phi = LinearIndex::free_cells(nx, ny, &cells, 0, cells.len()).expect("cells in range");
        Self::new(phi, cell_names("phi", &cells)).expect("valid names")
    }
}

impl MatchingFunction for Menzel {
    fn descriptor(&self) -> FamilyDescriptor {
        FamilyDescriptor {
            name: "menzel".into(),
            theta_dim: self.names.len(),
            homogeneous_degree_one: false,
            separable_in_parameters: true,
            has_theta_free_ratio: true,
            homogeneity_degree: Some(2.0),
        }
    }

    fn shape(&self) -> (usize, usize) {
        self.phi.shape()
    }

    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn bind<'a>(&'a self, theta: &[f64]) -> Box<dyn BoundFamily + 'a> {
        let (nx, ny) = self.phi.shape();
        Box::new(bind_loglinear(&self.phi, theta, &vec![true; nx * ny], vec![1.0; nx * ny], Power::Unit))
    }

    fn ratio_form(&self, _x: usize, _y: usize, ra: f64, rb: f64) -> Option<f64> {
        Some(ra * rb)
    }

    fn ratio_form_grad(&self, _x: usize, _y: usize, ra: f64, rb: f64) -> Option<(f64, f64, f64)> {
        Some((ra * rb, rb, ra))
    }
}

/// Search and matching: `M = (ρ/δ)·a·b·A(x, y)` with θ = (log ρ, log δ).
///
/// Only the ratio ρ/δ is identified, so estimating both components is
/// rank deficient by construction.
#[derive(Debug, Clone)]
pub struct SearchMatching {
    rate: LinearIndex,
    acceptance: Vec<bool>,
}

impl SearchMatching {
    pub fn new(acceptance: &DMatrix<bool>) -> Self {
        let (nx, ny) = acceptance.shape();
        let coefs = vec![vec![(0, 1.0), (1, -1.0)]; nx * ny];
        let rate = LinearIndex::new(nx, ny, 2, vec![0.0; nx * ny], coefs).expect("valid index");
        let acceptance = (0..nx * ny).map(|c| acceptance[(c / ny, c % ny)]).collect();
        Self { rate, acceptance }
    }

    pub fn everyone_accepts(nx: usize, ny: usize) -> Self {
        Self::new(&DMatrix::from_element(nx, ny, true))
    }
}

impl MatchingFunction for SearchMatching {
    fn descriptor(&self) -> FamilyDescriptor {
        FamilyDescriptor {
            name: "search".into(),
            theta_dim: 2,
            homogeneous_degree_one: false,
            separable_in_parameters: true,
            has_theta_free_ratio: true,
            homogeneity_degree: Some(2.0),
        }
    }

    fn shape(&self) -> (usize, usize) {
        self.rate.shape()
    }

    fn param_names(&self) -> Vec<String> {
        vec!["log_rho".into(), "log_delta".into()]
    }

    fn bind<'a>(&'a self, theta: &[f64]) -> Box<dyn BoundFamily + 'a> {
        let (nx, ny) = self.rate.shape();
        Box::new(bind_loglinear(&self.rate, theta, &self.acceptance, vec![1.0; nx * ny], Power::Unit))
    }

    fn ratio_form(&self, _x: usize, _y: usize, ra: f64, rb: f64) -> Option<f64> {
        Some(ra * rb)
    }

    fn ratio_form_grad(&self, _x: usize, _y: usize, ra: f64, rb: f64) -> Option<(f64, f64, f64)> {
        Some((ra * rb, rb, ra))
    }
}

/// Cobb-Douglas: `M = a^{a_xy} b^{b_xy} exp(Φ_xy / (2 − ψ_x − Ψ_y))`.
#[derive(Debug, Clone)]
pub struct CobbDouglas {
    exp_a: DMatrix<f64>,
    exp_b: DMatrix<f64>,
    weight: Vec<f64>,
    phi: LinearIndex,
    names: Vec<String>,
    degree: Option<f64>,
}

impl CobbDouglas {
    pub fn new(
        exp_a: DMatrix<f64>,
        exp_b: DMatrix<f64>,
        psi_m: &DVector<f64>,
        psi_w: &DVector<f64>,
        phi: LinearIndex,
        names: Vec<String>,
    ) -> Result<Self> {
        check_names(&phi, &names)?;
        let (nx, ny) = phi.shape();
        if exp_a.shape() != (nx, ny) || exp_b.shape() != (nx, ny) || psi_m.len() != nx || psi_w.len() != ny {
            return config("Cobb-Douglas tables do not match the surplus index shape");
        }
        if exp_a.iter().chain(exp_b.iter()).any(|e| !(e.is_finite() && *e > 0.0)) {
            return config("Cobb-Douglas exponents must be positive");
        }
        let mut weight = vec![0.0; nx * ny];
        for x in 0..nx {
            for y in 0..ny {
                let d = 2.0 - psi_m[x] - psi_w[y];
                if !(d > 0.0 && d.is_finite()) {
                    return config(format!("psi_x + Psi_y must be below 2 at ({x}, {y})"));
                }
                weight[x * ny + y] = 1.0 / d;
            }
        }
        let d0 = exp_a[(0, 0)] + exp_b[(0, 0)];
        let degree = exp_a.iter().zip(exp_b.iter()).all(|(a, b)| (a + b - d0).abs() <= 1e-12).then_some(d0);
        Ok(Self { exp_a, exp_b, weight, phi, names, degree })
    }
}

impl MatchingFunction for CobbDouglas {
    fn descriptor(&self) -> FamilyDescriptor {
        FamilyDescriptor {
            name: "cobb-douglas".into(),
            theta_dim: self.names.len(),
            homogeneous_degree_one: self.degree.is_some_and(|d| (d - 1.0).abs() <= 1e-12),
            separable_in_parameters: true,
            has_theta_free_ratio: self.degree.is_some(),
            homogeneity_degree: self.degree,
        }
    }

    fn shape(&self) -> (usize, usize) {
        self.phi.shape()
    }

    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn bind<'a>(&'a self, theta: &[f64]) -> Box<dyn BoundFamily + 'a> {
        let (nx, ny) = self.phi.shape();
        Box::new(bind_loglinear(
            &self.phi,
            theta,
            &vec![true; nx * ny],
            self.weight.clone(),
            Power::Table(&self.exp_a, &self.exp_b),
        ))
    }

    fn ratio_form(&self, x: usize, y: usize, ra: f64, rb: f64) -> Option<f64> {
        self.degree?;
        Some(ra.powf(self.exp_a[(x, y)]) * rb.powf(self.exp_b[(x, y)]))
    }

    fn ratio_form_grad(&self, x: usize, y: usize, ra: f64, rb: f64) -> Option<(f64, f64, f64)> {
        let g = self.ratio_form(x, y, ra, rb)?;
        Some((g, self.exp_a[(x, y)] * g / ra, self.exp_b[(x, y)] * g / rb))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{mf_grad_params, mf_grad_unmatched, mf_ratio_form, mf_value, param_vector};
    use approx::assert_relative_eq;

    fn cs_scalar(phi: f64) -> (ChooSiow, ParamVector) {
        let f = ChooSiow::free(1, 1);
        let t = param_vector(&f, &[phi]).unwrap();
        (f, t)
    }

    #[test]
    fn choo_siow_values() {
        let (f, t) = cs_scalar(0.0);
        assert_eq!(mf_value(&f, &t, 0, 0, 1.0, 1.0).unwrap(), 1.0);
        assert_relative_eq!(mf_value(&f, &t, 0, 0, 4.0, 4.0).unwrap(), 4.0, epsilon = 1e-15);
        let (f, t) = cs_scalar(2.0);
        let v = mf_value(&f, &t, 0, 0, 4.0, 9.0).unwrap();
        assert_relative_eq!(v, 6.0 * std::f64::consts::E, epsilon = 1e-13);
        assert!((v - 16.309691).abs() < 1e-6);
    }

    #[test]
    fn choo_siow_partials() {
        let (f, t) = cs_scalar(0.0);
        let (da, db) = mf_grad_unmatched(&f, &t, 0, 0, 0.25, 0.25).unwrap();
        // ½·√(b/a)·e^{Φ/2}
        assert_relative_eq!(da, 0.5, epsilon = 1e-15);
        assert_relative_eq!(db, 0.5, epsilon = 1e-15);
        let g = mf_grad_params(&f, &t, 0, 0, 1.0, 1.0).unwrap();
        assert_relative_eq!(g[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn menzel_values() {
        let f = Menzel::free(1, 1);
        let t = param_vector(&f, &[0.0]).unwrap();
        assert_relative_eq!(mf_value(&f, &t, 0, 0, 0.5, 0.25).unwrap(), 0.125);
        let (da, db) = mf_grad_unmatched(&f, &t, 0, 0, 2.0, 3.0).unwrap();
        assert_relative_eq!(da, 3.0);
        assert_relative_eq!(db, 2.0);
        assert_relative_eq!(mf_ratio_form(&f, 0, 0, 2.0, 3.0).unwrap(), 6.0);
    }

    #[test]
    fn ratio_forms() {
        let (f, _) = cs_scalar(0.3);
        assert_eq!(mf_ratio_form(&f, 0, 0, 1.0, 1.0).unwrap(), 1.0);
        assert_relative_eq!(mf_ratio_form(&f, 0, 0, 4.0, 9.0).unwrap(), 6.0);
        assert!(mf_ratio_form(&f, 0, 0, 0.0, 9.0).is_err());
    }

    #[test]
    fn search_rate_is_exponential() {
        let f = SearchMatching::everyone_accepts(1, 1);
        let t = param_vector(&f, &[0.7, 0.2]).unwrap();
        let m = mf_value(&f, &t, 0, 0, 0.3, 0.4).unwrap();
        assert_relative_eq!(m, (0.5f64).exp() * 0.12, epsilon = 1e-15);
        let g = mf_grad_params(&f, &t, 0, 0, 0.3, 0.4).unwrap();
        assert_relative_eq!(g[0], m, epsilon = 1e-15);
        assert_relative_eq!(g[1], -m, epsilon = 1e-15);
    }

    #[test]
    fn prohibited_cells_are_flat() {
        let f = SearchMatching::new(&DMatrix::from_row_slice(1, 2, &[true, false]));
        let t = param_vector(&f, &[0.0, 0.0]).unwrap();
        assert_eq!(mf_value(&f, &t, 0, 1, 0.5, 0.5).unwrap(), 0.0);
        assert_eq!(mf_grad_unmatched(&f, &t, 0, 1, 0.5, 0.5).unwrap(), (0.0, 0.0));
        assert_eq!(mf_grad_params(&f, &t, 0, 1, 0.5, 0.5).unwrap(), vec![0.0, 0.0]);
        let cs = ChooSiow::free(2, 2).with_prohibited(&[(1, 0)]).unwrap();
        let t = param_vector(&cs, &[0.0; 4]).unwrap();
        assert_eq!(mf_value(&cs, &t, 1, 0, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn domain_and_dimension_errors() {
        let (f, t) = cs_scalar(0.0);
        assert!(matches!(mf_value(&f, &t, 0, 0, 0.0, 1.0), Err(crate::MeqError::Domain(_))));
        assert!(matches!(mf_value(&f, &t, 0, 0, 1.0, -1.0), Err(crate::MeqError::Domain(_))));
        let bad = ParamVector::new(vec![0.0, 1.0], vec!["a".into(), "b".into()]).unwrap();
        assert!(matches!(mf_value(&f, &bad, 0, 0, 1.0, 1.0), Err(crate::MeqError::Config(_))));
    }

    #[test]
    fn cobb_douglas_degree_flags() {
        let idx = LinearIndex::scaled(&DMatrix::from_element(2, 2, 1.0), 0, 1);
        let psi = DVector::from_element(2, 0.2);
        let cd = CobbDouglas::new(
            DMatrix::from_element(2, 2, 0.3),
            DMatrix::from_element(2, 2, 0.7),
            &psi,
            &psi,
            idx.clone(),
            vec!["phi".into()],
        )
        .unwrap();
        assert!(cd.descriptor().homogeneous_degree_one);
        let t = param_vector(&cd, &[1.2]).unwrap();
        let m = mf_value(&cd, &t, 0, 1, 2.0, 3.0).unwrap();
        assert_relative_eq!(m, 2f64.powf(0.3) * 3f64.powf(0.7) * (1.2f64 / 1.6).exp(), epsilon = 1e-14);
        let uneven = CobbDouglas::new(
            DMatrix::from_row_slice(2, 2, &[0.3, 0.5, 0.5, 0.5]),
            DMatrix::from_element(2, 2, 0.5),
            &psi,
            &psi,
            idx,
            vec!["phi".into()],
        )
        .unwrap();
        let d = uneven.descriptor();
        assert!(!d.homogeneous_degree_one && !d.has_theta_free_ratio && d.homogeneity_degree.is_none());
    }
}
