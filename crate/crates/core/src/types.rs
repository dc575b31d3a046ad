//! Markets, matchings, parameter vectors and household frequencies.
//!
//! Types are addressed by dense indices; labels live in [`TypeSpace`].
//! The household index space lists couples first (row-major, `x` outer),
//! then single men, then single women.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{config, domain, MeqError, Result};

/// Reserved label for singlehood in external formats.
pub const SINGLE_LABEL: &str = "0";

#[derive(Debug, Clone, PartialEq)]
pub struct TypeSpace {
    x_labels: Vec<String>,
    y_labels: Vec<String>,
}

impl TypeSpace {
    pub fn new(x_labels: Vec<String>, y_labels: Vec<String>) -> Result<Self> {
        for (side, labels) in [("x", &x_labels), ("y", &y_labels)] {
            if labels.is_empty() {
                return config(format!("no {side} types"));
            }
            let mut seen = HashSet::new();
            for l in labels.iter() {
                if l.is_empty() {
                    return config(format!("empty {side} label"));
                }
                if l == SINGLE_LABEL {
                    return config(format!("label \"0\" is reserved ({side} side)"));
                }
                if !seen.insert(l.as_str()) {
                    return config(format!("duplicate {side} label {l:?}"));
                }
            }
        }
        Ok(Self { x_labels, y_labels })
    }

    /// Labels `x1..xN`, `y1..yM`.
    pub fn numbered(nx: usize, ny: usize) -> Self {
        Self {
            x_labels: (1..=nx).map(|i| format!("x{i}")).collect(),
            y_labels: (1..=ny).map(|j| format!("y{j}")).collect(),
        }
    }

    pub fn x_labels(&self) -> &[String] {
        &self.x_labels
    }

    pub fn y_labels(&self) -> &[String] {
        &self.y_labels
    }

    pub fn nx(&self) -> usize {
        self.x_labels.len()
    }

    pub fn ny(&self) -> usize {
        self.y_labels.len()
    }

    pub fn x_index(&self, label: &str) -> Option<usize> {
        self.x_labels.iter().position(|l| l == label)
    }

    pub fn y_index(&self, label: &str) -> Option<usize> {
        self.y_labels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    pub space: TypeSpace,
    pub n: DVector<f64>,
    pub m: DVector<f64>,
}

impl Market {
    pub fn new(space: TypeSpace, n: DVector<f64>, m: DVector<f64>) -> Result<Self> {
        if n.len() != space.nx() || m.len() != space.ny() {
            return config(format!(
                "margin lengths ({}, {}) do not match type space ({}, {})",
                n.len(),
                m.len(),
                space.nx(),
                space.ny()
            ));
        }
        if let Some(v) = n.iter().chain(m.iter()).find(|v| !(v.is_finite() && **v > 0.0)) {
            return domain(format!("margins must be positive and finite, got {v}"));
        }
        Ok(Self { space, n, m })
    }

    /// Market with numbered labels.
    pub fn from_margins(n: &[f64], m: &[f64]) -> Result<Self> {
        Self::new(
            TypeSpace::numbered(n.len(), m.len()),
            DVector::from_column_slice(n),
            DVector::from_column_slice(m),
        )
    }

    pub fn nx(&self) -> usize {
        self.n.len()
    }

    pub fn ny(&self) -> usize {
        self.m.len()
    }

    pub fn total(&self) -> f64 {
        self.n.sum() + self.m.sum()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { space: self.space.clone(), n: &self.n * k, m: &self.m * k }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub mu_xy: DMatrix<f64>,
    pub mu_x0: DVector<f64>,
    pub mu_0y: DVector<f64>,
}

impl Matching {
    pub fn new(mu_xy: DMatrix<f64>, mu_x0: DVector<f64>, mu_0y: DVector<f64>) -> Result<Self> {
        if mu_xy.nrows() != mu_x0.len() || mu_xy.ncols() != mu_0y.len() {
            return config("matching blocks have inconsistent shapes");
        }
        let all = mu_xy.iter().chain(mu_x0.iter()).chain(mu_0y.iter());
        if let Some(v) = all.into_iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return domain(format!("matching masses must be nonnegative and finite, got {v}"));
        }
        Ok(Self { mu_xy, mu_x0, mu_0y })
    }

    pub fn nx(&self) -> usize {
        self.mu_x0.len()
    }

    pub fn ny(&self) -> usize {
        self.mu_0y.len()
    }

    /// n_x = μ_x0 + Σ_y μ_xy.
    pub fn men_margins(&self) -> DVector<f64> {
        DVector::from_fn(self.nx(), |x, _| self.mu_x0[x] + self.mu_xy.row(x).sum())
    }

    /// m_y = μ_0y + Σ_x μ_xy.
    pub fn women_margins(&self) -> DVector<f64> {
        DVector::from_fn(self.ny(), |y, _| self.mu_0y[y] + self.mu_xy.column(y).sum())
    }

    pub fn household_count(&self) -> f64 {
        self.mu_xy.sum() + self.mu_x0.sum() + self.mu_0y.sum()
    }

    /// Masses over the household index space.
    pub fn households(&self) -> DVector<f64> {
        flatten(&self.mu_xy, &self.mu_x0, &self.mu_0y)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { mu_xy: &self.mu_xy * k, mu_x0: &self.mu_x0 * k, mu_0y: &self.mu_0y * k }
    }

    /// Largest absolute elementwise difference.
    pub fn sup_distance(&self, other: &Matching) -> f64 {
        (self.households() - other.households()).amax()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: DVector<f64>,
    names: Vec<String>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if values.len() != names.len() {
            return config(format!("{} values but {} names", values.len(), names.len()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return config(format!("duplicate parameter name {n:?}"));
            }
        }
        Ok(Self { values: DVector::from_vec(values), names })
    }

    /// Same names, new values.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.names.len() {
            return config(format!("expected {} values, got {}", self.names.len(), values.len()));
        }
        Ok(Self { values: DVector::from_column_slice(values), names: self.names.clone() })
    }

    pub fn empty() -> Self {
        Self { values: DVector::zeros(0), names: Vec::new() }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.values[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdFrequencies {
    pub pi_xy: DMatrix<f64>,
    pub pi_x0: DVector<f64>,
    pub pi_0y: DVector<f64>,
}

impl HouseholdFrequencies {
    pub fn nx(&self) -> usize {
        self.pi_x0.len()
    }

    pub fn ny(&self) -> usize {
        self.pi_0y.len()
    }

    pub fn flat(&self) -> DVector<f64> {
        flatten(&self.pi_xy, &self.pi_x0, &self.pi_0y)
    }

    pub fn total(&self) -> f64 {
        self.pi_xy.sum() + self.pi_x0.sum() + self.pi_0y.sum()
    }
}

/// Number of household types for an `nx × ny` market.
pub fn household_dim(nx: usize, ny: usize) -> usize {
    nx * ny + nx + ny
}

pub(crate) fn flatten(xy: &DMatrix<f64>, x0: &DVector<f64>, y0: &DVector<f64>) -> DVector<f64> {
    let (nx, ny) = xy.shape();
    let mut out = DVector::zeros(household_dim(nx, ny));
    for x in 0..nx {
        for y in 0..ny {
            out[x * ny + y] = xy[(x, y)];
        }
    }
    out.rows_mut(nx * ny, nx).copy_from(x0);
    out.rows_mut(nx * ny + nx, ny).copy_from(y0);
    out
}

pub fn normalize_to_frequencies(matching: &Matching) -> Result<(HouseholdFrequencies, f64)> {
    let total = matching.household_count();
    if !(total > 0.0) {
        return Err(MeqError::EmptyMatching);
    }
    let freqs = HouseholdFrequencies {
        pi_xy: &matching.mu_xy / total,
        pi_x0: &matching.mu_x0 / total,
        pi_0y: &matching.mu_0y / total,
    };
    Ok((freqs, total))
}

/// ζ = Aπ: men's margins followed by women's margins.
pub fn aggregate_margins(pi: &HouseholdFrequencies) -> DVector<f64> {
    let (nx, ny) = (pi.nx(), pi.ny());
    let mut zeta = DVector::zeros(nx + ny);
    for x in 0..nx {
        zeta[x] = pi.pi_x0[x] + pi.pi_xy.row(x).sum();
    }
    for y in 0..ny {
        zeta[nx + y] = pi.pi_0y[y] + pi.pi_xy.column(y).sum();
    }
    zeta
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_by_one() -> Matching {
        Matching::new(
            DMatrix::from_element(1, 1, 0.5),
            DVector::from_element(1, 0.5),
            DVector::from_element(1, 0.5),
        )
        .unwrap()
    }

    #[test]
    fn equal_masses_normalize_to_thirds() {
        let (pi, nh) = normalize_to_frequencies(&one_by_one()).unwrap();
        assert_relative_eq!(nh, 1.5);
        for v in pi.flat().iter() {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let zeta = aggregate_margins(&pi);
        assert_relative_eq!(zeta[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(zeta[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn single_cell_matching() {
        let m = Matching::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::zeros(1),
            DVector::zeros(1),
        )
        .unwrap();
        let (pi, nh) = normalize_to_frequencies(&m).unwrap();
        assert_eq!(nh, 2.0);
        assert_eq!(pi.pi_xy[(0, 0)], 1.0);
    }

    #[test]
    fn all_zero_is_empty() {
        let m = Matching::new(DMatrix::zeros(2, 2), DVector::zeros(2), DVector::zeros(2)).unwrap();
        assert_eq!(normalize_to_frequencies(&m), Err(MeqError::EmptyMatching));
    }

    #[test]
    fn singles_only_margins() {
        let pi = HouseholdFrequencies {
            pi_xy: DMatrix::zeros(1, 1),
            pi_x0: DVector::from_element(1, 0.5),
            pi_0y: DVector::from_element(1, 0.5),
        };
        let zeta = aggregate_margins(&pi);
        assert_eq!(zeta.as_slice(), &[0.5, 0.5]);
    }

    /// A built entry by entry from its definition: row x has ones at the
    /// couples (x, ·) and at single x; row |X|+y at couples (·, y) and single y.
    fn literal_a(nx: usize, ny: usize) -> DMatrix<f64> {
        let h = household_dim(nx, ny);
        let mut a = DMatrix::zeros(nx + ny, h);
        for x in 0..nx {
            for y in 0..ny {
                a[(x, x * ny + y)] = 1.0;
                a[(nx + y, x * ny + y)] = 1.0;
            }
            a[(x, nx * ny + x)] = 1.0;
        }
        for y in 0..ny {
            a[(nx + y, nx * ny + nx + y)] = 1.0;
        }
        a
    }

    #[test]
    fn margins_match_explicit_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw = Matching::new(
            DMatrix::from_fn(2, 3, |_, _| rng.random::<f64>()),
            DVector::from_fn(2, |_, _| rng.random::<f64>()),
            DVector::from_fn(3, |_, _| rng.random::<f64>()),
        )
        .unwrap();
        let (pi, _) = normalize_to_frequencies(&raw).unwrap();
        let oracle = literal_a(2, 3) * pi.flat();
        let zeta = aggregate_margins(&pi);
        for i in 0..5 {
            assert_relative_eq!(zeta[i], oracle[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn labels_are_validated() {
        assert!(TypeSpace::new(vec!["a".into(), "a".into()], vec!["b".into()]).is_err());
        assert!(TypeSpace::new(vec!["0".into()], vec!["b".into()]).is_err());
        assert!(TypeSpace::new(vec!["".into()], vec!["b".into()]).is_err());
        assert!(TypeSpace::new(vec!["a".into()], vec!["a".into()]).is_ok());
        assert!(Market::from_margins(&[1.0, 0.0], &[1.0]).is_err());
        assert!(ParamVector::new(vec![1.0, 2.0], vec!["a".into(), "a".into()]).is_err());
        assert!(ParamVector::new(vec![1.0], vec!["a".into(), "b".into()]).is_err());
    }

    proptest! {
        #[test]
        fn normalization_round_trips(
            (nx, ny, cells) in (1usize..5, 1usize..5).prop_flat_map(|(nx, ny)| {
                (Just(nx), Just(ny), proptest::collection::vec(0.0f64..1e3, household_dim(nx, ny)))
            })
        ) {
            prop_assume!(cells.iter().any(|v| *v > 0.0));
            let xy = DMatrix::from_fn(nx, ny, |x, y| cells[x * ny + y]);
            let x0 = DVector::from_fn(nx, |x, _| cells[nx * ny + x]);
            let y0 = DVector::from_fn(ny, |y, _| cells[nx * ny + nx + y]);
            let mu = Matching::new(xy, x0, y0).unwrap();
            let (pi, nh) = normalize_to_frequencies(&mu).unwrap();
            prop_assert!((pi.total() - 1.0).abs() <= 1e-12);
            let back = pi.flat() * nh;
            for (b, o) in back.iter().zip(mu.households().iter()) {
                prop_assert!((b - o).abs() <= 1e-14 * o.abs().max(1e-300) || (b - o).abs() < 1e-300);
            }
            let zeta = aggregate_margins(&pi);
            prop_assert!((zeta.sum() - (1.0 + pi.pi_xy.sum())).abs() <= 1e-12);
        }
    }
}
