//! Joint surplus tables and the age-education surplus design.

use nalgebra::DMatrix;

use super::LinearIndex;
use crate::error::{config, domain, Result};
use crate::types::ParamVector;

/// Φ per cell; `None` marks a prohibited match.
#[derive(Debug, Clone, PartialEq)]
pub struct SurplusTable {
    nx: usize,
    ny: usize,
    phi: Vec<Option<f64>>,
}

impl SurplusTable {
    pub fn new(nx: usize, ny: usize, phi: Vec<Option<f64>>) -> Result<Self> {
        if phi.len() != nx * ny {
            return config(format!("surplus table needs {} cells, got {}", nx * ny, phi.len()));
        }
        if phi.iter().flatten().any(|v| !v.is_finite()) {
            return domain("surplus entries must be finite or prohibited");
        }
        Ok(Self { nx, ny, phi })
    }

    pub fn from_matrix(phi: &DMatrix<f64>) -> Result<Self> {
        let (nx, ny) = phi.shape();
        Self::new(nx, ny, (0..nx * ny).map(|c| Some(phi[(c / ny, c % ny)])).collect())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.phi[x * self.ny + y]
    }

    pub fn is_prohibited(&self, x: usize, y: usize) -> bool {
        self.get(x, y).is_none()
    }
}

pub const AGE_EDU_DIM: usize = 184;
const MAX_AGE: u32 = 60;
const MAX_EDU: u32 = 3;

fn check_type(age: u32, edu: u32) -> Result<()> {
    if !(1..=MAX_AGE).contains(&age) || !(1..=MAX_EDU).contains(&edu) {
        return domain(format!("type (age {age}, education {edu}) out of range"));
    }
    Ok(())
}

/// Names in parameter order: `theta0`, `ma_2..ma_60`, `me_2, me_3`,
/// `wa_2..wa_60`, `we_2, we_3`, `mwa_1..mwa_59`, `mwe_1, mwe_2`.
pub fn age_education_names() -> Vec<String> {
    let mut names = vec!["theta0".to_string()];
    names.extend((2..=MAX_AGE).map(|i| format!("ma_{i}")));
    names.extend((2..=MAX_EDU).map(|i| format!("me_{i}")));
    names.extend((2..=MAX_AGE).map(|i| format!("wa_{i}")));
    names.extend((2..=MAX_EDU).map(|i| format!("we_{i}")));
    names.extend((1..MAX_AGE).map(|d| format!("mwa_{d}")));
    names.extend((1..MAX_EDU).map(|d| format!("mwe_{d}")));
    names
}

/// Parameters switched on for one couple type.
fn design_row(x: (u32, u32), y: (u32, u32)) -> Vec<usize> {
    let (xa, xe) = x;
    let (ya, ye) = y;
    let mut row = vec![0];
    let ma = 1;
    let me = ma + (MAX_AGE as usize - 1);
    let wa = me + (MAX_EDU as usize - 1);
    let we = wa + (MAX_AGE as usize - 1);
    let mwa = we + (MAX_EDU as usize - 1);
    let mwe = mwa + (MAX_AGE as usize - 1);
    if xa >= 2 {
        row.push(ma + xa as usize - 2);
    }
    if xe >= 2 {
        row.push(me + xe as usize - 2);
    }
    if ya >= 2 {
        row.push(wa + ya as usize - 2);
    }
    if ye >= 2 {
        row.push(we + ye as usize - 2);
    }
    let da = xa.abs_diff(ya) as usize;
    if da >= 1 {
        row.push(mwa + da - 1);
    }
    let de = xe.abs_diff(ye) as usize;
    if de >= 1 {
        row.push(mwe + de - 1);
    }
    row
}

/// Φ for man type `x = (age, education)` and woman type `y`.
pub fn surplus_parametric(theta: &ParamVector, x: (u32, u32), y: (u32, u32)) -> Result<f64> {
    if theta.len() != AGE_EDU_DIM {
        return config(format!("age-education surplus needs {AGE_EDU_DIM} parameters, got {}", theta.len()));
    }
    check_type(x.0, x.1)?;
    check_type(y.0, y.1)?;
    let t = theta.as_slice();
    Ok(design_row(x, y).into_iter().map(|k| t[k]).sum())
}

/// The same design as a [`LinearIndex`] over the given type lists.
pub fn age_education_index(men: &[(u32, u32)], women: &[(u32, u32)]) -> Result<LinearIndex> {
    for &(a, e) in men.iter().chain(women) {
        check_type(a, e)?;
    }
    let coefs = men
        .iter()
        .flat_map(|&x| women.iter().map(move |&y| design_row(x, y).into_iter().map(|k| (k, 1.0)).collect()))
        .collect();
    LinearIndex::new(men.len(), women.len(), AGE_EDU_DIM, vec![0.0; men.len() * women.len()], coefs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta_by_name(f: impl Fn(&str) -> f64) -> ParamVector {
        let names = age_education_names();
        let values = names.iter().map(|n| f(n)).collect();
        ParamVector::new(values, names).unwrap()
    }

    #[test]
    fn layout_has_184_unique_names() {
        let names = age_education_names();
        assert_eq!(names.len(), AGE_EDU_DIM);
        assert!(ParamVector::new(vec![0.0; AGE_EDU_DIM], names).is_ok());
    }

    #[test]
    fn footnote_cell() {
        // Distinct power-of-two values make every selected component visible.
        let names = age_education_names();
        let theta = theta_by_name(|n| 2f64.powi(names.iter().position(|m| m == n).unwrap() as i32 % 50));
        let expected: f64 = ["theta0", "ma_6", "me_2", "wa_8", "we_3", "mwa_2", "mwe_1"]
            .iter()
            .map(|n| theta.get(n).unwrap())
            .sum();
        assert_eq!(surplus_parametric(&theta, (6, 2), (8, 3)).unwrap(), expected);
    }

    #[test]
    fn reference_categories() {
        let theta = theta_by_name(|n| if n == "theta0" { 1.5 } else { 100.0 });
        assert_eq!(surplus_parametric(&theta, (1, 1), (1, 1)).unwrap(), 1.5);
        let zero = theta_by_name(|_| 0.0);
        assert_eq!(surplus_parametric(&zero, (17, 3), (42, 1)).unwrap(), 0.0);
    }

    #[test]
    fn range_errors() {
        let zero = theta_by_name(|_| 0.0);
        assert!(surplus_parametric(&zero, (0, 1), (1, 1)).is_err());
        assert!(surplus_parametric(&zero, (61, 1), (1, 1)).is_err());
        assert!(surplus_parametric(&zero, (1, 4), (1, 1)).is_err());
        let short = ParamVector::new(vec![0.0], vec!["a".into()]).unwrap();
        assert!(surplus_parametric(&short, (1, 1), (1, 1)).is_err());
    }

    #[test]
    fn index_matches_formula() {
        let men = [(23, 1), (30, 3), (1, 2), (60, 2)];
        let women = [(25, 2), (2, 1), (59, 3)];
        let idx = age_education_index(&men, &women).unwrap();
        let theta = theta_by_name(|n| n.len() as f64 * 0.37 - (n.as_bytes()[n.len() - 1] as f64) * 0.01);
        for (i, &x) in men.iter().enumerate() {
            for (j, &y) in women.iter().enumerate() {
                let direct = surplus_parametric(&theta, x, y).unwrap();
                assert!((idx.eval(theta.as_slice(), i, j) - direct).abs() < 1e-12);
            }
        }
    }
}
