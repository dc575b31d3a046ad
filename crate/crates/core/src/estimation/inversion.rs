use super::ObservedData;
use crate::error::{domain, Result};
use crate::families::SurplusTable;

/// `Φ̂_xy = 2·log μ̂_xy − log μ̂_x0 − log μ̂_0y`; empty couple cells become
/// prohibited.
pub fn surplus_nonparametric_cs(observed: &ObservedData) -> Result<SurplusTable> {
    let mu = &observed.matching;
    if mu.mu_x0.iter().chain(mu.mu_0y.iter()).any(|t| *t <= 0.0) {
        return domain("every type needs a positive singles mass to invert the surplus");
    }
    let (nx, ny) = (mu.nx(), mu.ny());
    let phi = (0..nx * ny)
        .map(|c| {
            let (x, y) = (c / ny, c % ny);
            let v = mu.mu_xy[(x, y)];
            (v > 0.0).then(|| 2.0 * v.ln() - mu.mu_x0[x].ln() - mu.mu_0y[y].ln())
        })
        .collect();
    SurplusTable::new(nx, ny, phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Matching;
    use nalgebra::{DMatrix, DVector};

    fn one(c: f64, a: f64, b: f64) -> ObservedData {
        ObservedData::from_matching(
            Matching::new(DMatrix::from_element(1, 1, c), DVector::from_element(1, a), DVector::from_element(1, b))
                .unwrap(),
        )
    }

    #[test]
    fn examples() {
        assert_eq!(surplus_nonparametric_cs(&one(0.5, 0.5, 0.5)).unwrap().get(0, 0), Some(0.0));
        let phi = surplus_nonparametric_cs(&one(6.0 * std::f64::consts::E, 4.0, 9.0)).unwrap();
        assert!((phi.get(0, 0).unwrap() - 2.0).abs() < 1e-14);
        assert!(surplus_nonparametric_cs(&one(0.0, 1.0, 1.0)).unwrap().is_prohibited(0, 0));
    }

    #[test]
    fn zero_singles_is_an_error() {
        assert!(surplus_nonparametric_cs(&one(1.0, 0.0, 1.0)).is_err());
        assert!(surplus_nonparametric_cs(&one(1.0, 1.0, 0.0)).is_err());
    }
}
