//! Family catalogue: builds a matching function from a name and a JSON
//! parameter block.

use meq_core::estimation::{surplus_nonparametric_cs, ObservedData};
use meq_core::families::{
    ChooSiow, CobbDouglas, EtuGkw, HarmonicMean, LinearIndex, MatchingFunction, Menzel, SearchMatching, SurplusTable,
};
use meq_core::types::{ParamVector, TypeSpace};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{config_err, CliError, Result};

pub const CATALOGUE: [&str; 6] = ["choo-siow", "menzel", "search", "cobb-douglas", "etu", "harmonic"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self { name: "choo-siow".into(), params: Map::new() }
    }
}

impl FamilySpec {
    pub fn named(name: &str) -> Self {
        Self { name: name.into(), params: Map::new() }
    }

    /// Catalogue name with `_` folded to `-`.
    pub fn canonical(&self) -> Result<&'static str> {
        let name = self.name.to_ascii_lowercase().replace('_', "-");
        CATALOGUE
            .iter()
            .find(|c| **c == name)
            .copied()
            .ok_or_else(|| CliError::Config(format!("unknown family {:?}; known: {}", self.name, CATALOGUE.join(", "))))
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => config_err(format!("family {} has no parameter {k:?}", self.name)),
            None => Ok(()),
        }
    }

    fn number(&self, key: &str, default: f64) -> Result<f64> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| CliError::Config(format!("{key} must be a number"))),
        }
    }

    fn cells(&self, key: &str, space: &TypeSpace) -> Result<Vec<(usize, usize)>> {
        let Some(v) = self.params.get(key) else { return Ok(Vec::new()) };
        let bad = || CliError::Config(format!("{key} must be a list of [x_label, y_label] pairs"));
        let list = v.as_array().ok_or_else(bad)?;
        list.iter()
            .map(|pair| {
                let p = pair.as_array().filter(|p| p.len() == 2).ok_or_else(bad)?;
                let (x, y) = (p[0].as_str().ok_or_else(bad)?, p[1].as_str().ok_or_else(bad)?);
                let xi = space.x_index(x).ok_or_else(|| CliError::Config(format!("{key}: unknown x label {x:?}")))?;
                let yi = space.y_index(y).ok_or_else(|| CliError::Config(format!("{key}: unknown y label {y:?}")))?;
                Ok((xi, yi))
            })
            .collect()
    }

    /// `basis`: `"ones"` (default), `"xy"` for `(x+1)(y+1)`, or an explicit table.
    fn basis(&self, nx: usize, ny: usize) -> Result<DMatrix<f64>> {
        match self.params.get("basis") {
            None => Ok(DMatrix::from_element(nx, ny, 1.0)),
            Some(Value::String(s)) if s == "ones" => Ok(DMatrix::from_element(nx, ny, 1.0)),
            Some(Value::String(s)) if s == "xy" => Ok(DMatrix::from_fn(nx, ny, |x, y| ((x + 1) * (y + 1)) as f64)),
            Some(v) => {
                let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone())
                    .map_err(|_| CliError::Config("basis must be \"ones\", \"xy\" or a numeric table".into()))?;
                if rows.len() != nx || rows.iter().any(|r| r.len() != ny) {
                    return config_err(format!("basis table must be {nx}x{ny}"));
                }
                Ok(DMatrix::from_fn(nx, ny, |x, y| rows[x][y]))
            }
        }
    }
}

/// A built family and, where the data pin one down, a starting value.
pub struct BuiltFamily {
    pub family: Box<dyn MatchingFunction>,
    pub theta_init: Option<ParamVector>,
}

fn cell_names(space: &TypeSpace, cells: &[(usize, usize)]) -> Vec<String> {
    cells.iter().map(|&(x, y)| format!("phi_{}_{}", space.x_labels()[x], space.y_labels()[y])).collect()
}

fn all_cells(nx: usize, ny: usize) -> Vec<(usize, usize)> {
    (0..nx).flat_map(|x| (0..ny).map(move |y| (x, y))).collect()
}

fn free_surplus(space: &TypeSpace, cells: &[(usize, usize)]) -> Result<(LinearIndex, Vec<String>)> {
    let index = LinearIndex::free_cells(space.nx(), space.ny(), cells, 0, cells.len())?;
    Ok((index, cell_names(space, cells)))
}

/// Builds the family for `space`. With observed data ChooSiow keeps only the
/// cells with observed couples and starts at the nonparametric inversion.
pub fn build_family(spec: &FamilySpec, space: &TypeSpace, observed: Option<&ObservedData>) -> Result<BuiltFamily> {
    let (nx, ny) = (space.nx(), space.ny());
    let built: BuiltFamily = match spec.canonical()? {
        "choo-siow" => {
            spec.check_keys(&["prohibited"])?;
            let prohibited = spec.cells("prohibited", space)?;
            let inverted = observed.and_then(|d| surplus_nonparametric_cs(d).ok());
            let table = match inverted {
                Some(t) => t,
                None => SurplusTable::from_matrix(&DMatrix::zeros(nx, ny))?,
            };
            let cells: Vec<Option<f64>> = all_cells(nx, ny)
                .into_iter()
                .map(|(x, y)| if prohibited.contains(&(x, y)) { None } else { table.get(x, y) })
                .collect();
            let table = SurplusTable::new(nx, ny, cells)?;
            let (fam, theta) = ChooSiow::from_surplus_table(&table);
            let kept: Vec<_> = all_cells(nx, ny).into_iter().filter(|&(x, y)| table.get(x, y).is_some()).collect();
            let names = cell_names(space, &kept);
            let theta = ParamVector::new(theta.as_slice().to_vec(), names.clone())?;
            let fam = ChooSiow::new(fam.surplus_index().clone(), names)?.with_prohibited(
                &all_cells(nx, ny).into_iter().filter(|&(x, y)| table.get(x, y).is_none()).collect::<Vec<_>>(),
            )?;
            BuiltFamily { family: Box::new(fam), theta_init: observed.is_some().then_some(theta) }
        }
        "menzel" => {
            spec.check_keys(&[])?;
            let (index, names) = free_surplus(space, &all_cells(nx, ny))?;
            BuiltFamily { family: Box::new(Menzel::new(index, names)?), theta_init: None }
        }
        "search" => {
            spec.check_keys(&["rejected"])?;
            let mut acc = DMatrix::from_element(nx, ny, true);
            for (x, y) in spec.cells("rejected", space)? {
                acc[(x, y)] = false;
            }
            BuiltFamily { family: Box::new(SearchMatching::new(&acc)), theta_init: None }
        }
        "cobb-douglas" => {
            spec.check_keys(&["exp_a", "exp_b"])?;
            let (ea, eb) = (spec.number("exp_a", 0.5)?, spec.number("exp_b", 0.5)?);
            let (index, names) = free_surplus(space, &all_cells(nx, ny))?;
            let fam = CobbDouglas::new(
                DMatrix::from_element(nx, ny, ea),
                DMatrix::from_element(nx, ny, eb),
                &DVector::zeros(nx),
                &DVector::zeros(ny),
                index,
                names,
            )?;
            BuiltFamily { family: Box::new(fam), theta_init: None }
        }
        name @ ("etu" | "harmonic") => {
            spec.check_keys(&["basis", "tau"])?;
            let base = spec.basis(nx, ny)?;
            let tau = spec.number("tau", 1.0)?;
            let tau = DMatrix::from_element(nx, ny, tau);
            let family: Box<dyn MatchingFunction> = if name == "etu" {
                Box::new(EtuGkw::scaled(&base, &tau)?)
            } else {
                Box::new(HarmonicMean::scaled(&base, &tau)?)
            };
            BuiltFamily { family, theta_init: None }
        }
        _ => unreachable!("catalogue names are exhaustive"),
    };
    Ok(built)
}

#[cfg(test)]
mod tests {
    use super::*;
    use meq_core::types::Matching;
    use serde_json::json;

    fn space() -> TypeSpace {
        TypeSpace::new(vec!["A".into(), "B".into()], vec!["C".into(), "D".into()]).unwrap()
    }

    #[test]
    fn every_catalogue_name_builds() {
        for name in CATALOGUE {
            let b = build_family(&FamilySpec::named(name), &space(), None).unwrap();
            assert_eq!(b.family.shape(), (2, 2), "{name}");
        }
        assert!(build_family(&FamilySpec::named("choo_siow"), &space(), None).is_ok());
        assert!(build_family(&FamilySpec::named("logit"), &space(), None).is_err());
    }

    #[test]
    fn choo_siow_starts_at_inversion_and_drops_empty_cells() {
        let m = Matching::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 3.0]),
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, 1.0]),
        )
        .unwrap();
        let obs = ObservedData::new(space(), m).unwrap();
        let b = build_family(&FamilySpec::named("choo-siow"), &space(), Some(&obs)).unwrap();
        let theta = b.theta_init.unwrap();
        assert_eq!(theta.names(), ["phi_A_C", "phi_B_C", "phi_B_D"]);
        assert_eq!(theta.get("phi_A_C").unwrap(), 2.0 * 1.0f64.ln() - 1.0f64.ln() - 3.0f64.ln());
    }

    #[test]
    fn parameter_blocks() {
        let mut spec = FamilySpec::named("search");
        spec.params.insert("rejected".into(), json!([["A", "D"]]));
        assert!(build_family(&spec, &space(), None).is_ok());
        spec.params.insert("rejected".into(), json!([["A", "Z"]]));
        assert!(build_family(&spec, &space(), None).is_err());

        let mut spec = FamilySpec::named("etu");
        spec.params.insert("basis".into(), json!([[1.0, 2.0], [3.0, 4.0]]));
        spec.params.insert("tau".into(), json!(0.5));
        assert!(build_family(&spec, &space(), None).is_ok());
        spec.params.insert("bogus".into(), json!(1));
        assert!(build_family(&spec, &space(), None).is_err());
    }
}
