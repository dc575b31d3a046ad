//! Matching and margins CSV files.
//!
//! Matching files have the header `x_label,y_label,mass`; the label `0` on
//! either side marks singles. Margins files have the header `side,label,mass`
//! with side `M` or `W`. Lines starting with `#` are comments.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use meq_core::estimation::ObservedData;
use meq_core::types::{Market, Matching, TypeSpace, SINGLE_LABEL};
use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, Result};

const MATCHING_HEADER: [&str; 3] = ["x_label", "y_label", "mass"];
const MARGINS_HEADER: [&str; 3] = ["side", "label", "mass"];

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Rows of a three-column file as `(line, [a, b, c])`, header checked.
fn rows(text: &str, origin: &str, header: [&str; 3]) -> Result<Vec<(u64, [String; 3])>> {
    let err = |line: u64, msg: String| CliError::Parse { path: origin.to_string(), line, msg };
    let mut out = Vec::new();
    let mut seen_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i as u64 + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(raw.as_bytes());
        let rec = match rdr.records().next() {
            Some(r) => r.map_err(|e| err(line, e.to_string()))?,
            None => continue,
        };
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != 3 {
            return Err(err(line, format!("expected 3 fields, found {}", rec.len())));
        }
        let fields = [rec[0].to_string(), rec[1].to_string(), rec[2].to_string()];
        if !seen_header {
            if fields.iter().map(String::as_str).ne(header) {
                return Err(err(line, format!("expected header {}", header.join(","))));
            }
            seen_header = true;
            continue;
        }
        out.push((line, fields));
    }
    if !seen_header {
        return Err(err(1, format!("missing header {}", header.join(","))));
    }
    Ok(out)
}

fn parse_mass(s: &str, line: u64, origin: &str) -> Result<f64> {
    let err = |msg: String| CliError::Parse { path: origin.to_string(), line, msg };
    let v: f64 = s.parse().map_err(|_| err(format!("invalid mass {s:?}")))?;
    if !v.is_finite() {
        return Err(err(format!("mass must be finite, got {s}")));
    }
    if v < 0.0 {
        return Err(err(format!("negative mass {s}")));
    }
    Ok(v)
}

/// Parses matching CSV text. Types are taken from `space` when given
/// (other labels are rejected), otherwise in order of first appearance.
pub fn parse_matching_csv(text: &str, origin: &str, space: Option<&TypeSpace>) -> Result<ObservedData> {
    let err = |line: u64, msg: String| CliError::Parse { path: origin.to_string(), line, msg };
    let records = rows(text, origin, MATCHING_HEADER)?;

    let (mut xs, mut ys): (Vec<String>, Vec<String>) = match space {
        Some(s) => (s.x_labels().to_vec(), s.y_labels().to_vec()),
        None => (Vec::new(), Vec::new()),
    };
    let mut x_of: HashMap<String, usize> = xs.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
    let mut y_of: HashMap<String, usize> = ys.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
    let intern = |labels: &mut Vec<String>, index: &mut HashMap<String, usize>, label: &str, line: u64| {
        if let Some(&i) = index.get(label) {
            return Ok(i);
        }
        if space.is_some() {
            return Err(err(line, format!("unknown label {label:?}")));
        }
        index.insert(label.to_string(), labels.len());
        labels.push(label.to_string());
        Ok(labels.len() - 1)
    };

    enum Cell {
        Couple(usize, usize),
        Man(usize),
        Woman(usize),
    }
    let mut cells = Vec::with_capacity(records.len());
    let mut seen = HashSet::new();
    for (line, [x, y, mass]) in &records {
        let line = *line;
        if x.is_empty() || y.is_empty() {
            return Err(err(line, "empty label".into()));
        }
        if !seen.insert((x.clone(), y.clone())) {
            return Err(err(line, format!("duplicate row ({x}, {y})")));
        }
        let mass = parse_mass(mass, line, origin)?;
        let cell = match (x.as_str() == SINGLE_LABEL, y.as_str() == SINGLE_LABEL) {
            (true, true) => return Err(err(line, "both labels are \"0\"".into())),
            (false, true) => Cell::Man(intern(&mut xs, &mut x_of, x, line)?),
            (true, false) => Cell::Woman(intern(&mut ys, &mut y_of, y, line)?),
            (false, false) => {
                let i = intern(&mut xs, &mut x_of, x, line)?;
                Cell::Couple(i, intern(&mut ys, &mut y_of, y, line)?)
            }
        };
        cells.push((cell, mass));
    }

    let space = match space {
        Some(s) => s.clone(),
        None => TypeSpace::new(xs, ys).map_err(|e| err(0, e.to_string()))?,
    };
    let (nx, ny) = (space.nx(), space.ny());
    let mut mu_xy = DMatrix::zeros(nx, ny);
    let mut mu_x0 = DVector::zeros(nx);
    let mut mu_0y = DVector::zeros(ny);
    for (cell, mass) in cells {
        match cell {
            Cell::Couple(x, y) => mu_xy[(x, y)] = mass,
            Cell::Man(x) => mu_x0[x] = mass,
            Cell::Woman(y) => mu_0y[y] = mass,
        }
    }
    let matching = Matching::new(mu_xy, mu_x0, mu_0y).map_err(|e| err(0, e.to_string()))?;
    Ok(ObservedData::new(space, matching)?)
}

pub fn load_matching_csv(path: &Path) -> Result<ObservedData> {
    parse_matching_csv(&read(path)?, &path.display().to_string(), None)
}

/// Matching CSV text, one row per nonzero entry: couples row-major, then
/// single men, then single women.
pub fn matching_csv(data: &ObservedData) -> String {
    let mut out = MATCHING_HEADER.join(",");
    out.push('\n');
    let (xs, ys) = (data.space.x_labels(), data.space.y_labels());
    let mu = &data.matching;
    for (x, xl) in xs.iter().enumerate() {
        for (y, yl) in ys.iter().enumerate() {
            if mu.mu_xy[(x, y)] != 0.0 {
                let _ = writeln!(out, "{xl},{yl},{}", sig17(mu.mu_xy[(x, y)]));
            }
        }
    }
    for (x, xl) in xs.iter().enumerate() {
        if mu.mu_x0[x] != 0.0 {
            let _ = writeln!(out, "{xl},{SINGLE_LABEL},{}", sig17(mu.mu_x0[x]));
        }
    }
    for (y, yl) in ys.iter().enumerate() {
        if mu.mu_0y[y] != 0.0 {
            let _ = writeln!(out, "{SINGLE_LABEL},{yl},{}", sig17(mu.mu_0y[y]));
        }
    }
    out
}

pub fn save_matching_csv(data: &ObservedData, path: &Path) -> Result<()> {
    write_file(path, &matching_csv(data))
}

/// Parses margins CSV text against `space`; every type must appear once.
pub fn parse_margins_csv(text: &str, origin: &str, space: &TypeSpace) -> Result<Market> {
    let err = |line: u64, msg: String| CliError::Parse { path: origin.to_string(), line, msg };
    let mut n = vec![None; space.nx()];
    let mut m = vec![None; space.ny()];
    for (line, [side, label, mass]) in rows(text, origin, MARGINS_HEADER)? {
        let mass = parse_mass(&mass, line, origin)?;
        let slot = match side.as_str() {
            "M" => space.x_index(&label).map(|i| &mut n[i]),
            "W" => space.y_index(&label).map(|i| &mut m[i]),
            other => return Err(err(line, format!("side must be M or W, got {other:?}"))),
        };
        let slot = slot.ok_or_else(|| err(line, format!("unknown label {label:?}")))?;
        if slot.replace(mass).is_some() {
            return Err(err(line, format!("duplicate margin ({side}, {label})")));
        }
    }
    let complete = |v: Vec<Option<f64>>, labels: &[String], side: &str| -> Result<DVector<f64>> {
        v.iter()
            .zip(labels)
            .map(|(m, l)| m.ok_or_else(|| err(0, format!("missing margin ({side}, {l})"))))
            .collect::<Result<Vec<_>>>()
            .map(DVector::from_vec)
    };
    let n = complete(n, space.x_labels(), "M")?;
    let m = complete(m, space.y_labels(), "W")?;
    Market::new(space.clone(), n, m).map_err(|e| err(0, e.to_string()))
}

pub fn load_margins_csv(path: &Path, space: &TypeSpace) -> Result<Market> {
    parse_margins_csv(&read(path)?, &path.display().to_string(), space)
}

pub fn margins_csv(market: &Market) -> String {
    let mut out = MARGINS_HEADER.join(",");
    out.push('\n');
    for (l, v) in market.space.x_labels().iter().zip(market.n.iter()) {
        let _ = writeln!(out, "M,{l},{}", sig17(*v));
    }
    for (l, v) in market.space.y_labels().iter().zip(market.m.iter()) {
        let _ = writeln!(out, "W,{l},{}", sig17(*v));
    }
    out
}

/// Positional notation with 17 significant digits; scientific outside
/// `1e-5 ≤ |v| < 1e17`.
pub fn sig17(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..17).contains(&exp) {
        return sci;
    }
    let (sign, mantissa) = mantissa.strip_prefix('-').map_or(("", mantissa), |m| ("-", m));
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let body = if exp < 0 {
        format!("0.{}{digits}", "0".repeat((-exp - 1) as usize))
    } else {
        let split = exp as usize + 1;
        if split >= digits.len() {
            format!("{digits}{}", "0".repeat(split - digits.len()))
        } else {
            format!("{}.{}", &digits[..split], &digits[split..])
        }
    };
    format!("{sign}{body}")
}
