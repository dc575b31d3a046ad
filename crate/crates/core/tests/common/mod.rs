#![allow(dead_code)]

use meq_core::families::{
    param_vector, ChooSiow, CobbDouglas, EtuGkw, HarmonicMean, LinearIndex, MatchingFunction, Menzel, SearchMatching,
};
use meq_core::types::{Market, ParamVector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    ChooSiow,
    Menzel,
    Search,
    CobbDouglas,
    Etu,
    Harmonic,
}

pub const ALL: [Kind; 6] = [Kind::ChooSiow, Kind::Menzel, Kind::Search, Kind::CobbDouglas, Kind::Etu, Kind::Harmonic];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn table(rng: &mut ChaCha8Rng, nx: usize, ny: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(nx, ny, |_, _| rng.random_range(lo..hi))
}

fn names(prefix: &str, k: usize) -> Vec<String> {
    (0..k).map(|i| format!("{prefix}{i}")).collect()
}

/// Three-parameter surplus `Φ = θ0 + θ1·z1 + θ2·z2`.
fn surplus_index(rng: &mut ChaCha8Rng, nx: usize, ny: usize) -> LinearIndex {
    let basis = [DMatrix::from_element(nx, ny, 1.0), table(rng, nx, ny, -1.0, 1.0), table(rng, nx, ny, -1.0, 1.0)];
    LinearIndex::from_basis(&DMatrix::zeros(nx, ny), &basis).unwrap()
}

fn theta_in(rng: &mut ChaCha8Rng, k: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(lo..hi)).collect()
}

/// A random low-dimensional family of the given kind and a parameter in its domain.
pub fn family(kind: Kind, nx: usize, ny: usize, rng: &mut ChaCha8Rng) -> (Box<dyn MatchingFunction>, ParamVector) {
    let fam: Box<dyn MatchingFunction> = match kind {
        Kind::ChooSiow => Box::new(ChooSiow::new(surplus_index(rng, nx, ny), names("phi", 3)).unwrap()),
        Kind::Menzel => Box::new(Menzel::new(surplus_index(rng, nx, ny), names("phi", 3)).unwrap()),
        Kind::Search => {
            let mut acc = DMatrix::from_fn(nx, ny, |_, _| rng.random_bool(0.85));
            // Keep every type able to match.
            for x in 0..nx {
                acc[(x, x % ny)] = true;
            }
            for y in 0..ny {
                acc[(y % nx, y)] = true;
            }
            Box::new(SearchMatching::new(&acc))
        }
        Kind::CobbDouglas => {
            let homogeneous = rng.random_bool(0.5);
            let exp_a = table(rng, nx, ny, 0.2, 0.8);
            let exp_b = if homogeneous { exp_a.map(|a| 1.0 - a) } else { table(rng, nx, ny, 0.2, 0.8) };
            let psi_m = DVector::from_fn(nx, |_, _| rng.random_range(-0.5..0.5));
            let psi_w = DVector::from_fn(ny, |_, _| rng.random_range(-0.5..0.5));
            let index = surplus_index(rng, nx, ny);
            Box::new(CobbDouglas::new(exp_a, exp_b, &psi_m, &psi_w, index, names("phi", 3)).unwrap())
        }
        Kind::Etu | Kind::Harmonic => {
            let alpha = LinearIndex::scaled(&table(rng, nx, ny, 0.1, 1.0), 0, 3);
            let gamma = LinearIndex::scaled(&table(rng, nx, ny, 0.1, 1.0), 1, 3);
            let log_tau = LinearIndex::scaled(&DMatrix::from_element(nx, ny, 1.0), 2, 3);
            let n = vec!["alpha".to_string(), "gamma".to_string(), "log_tau".to_string()];
            if kind == Kind::Etu {
                Box::new(EtuGkw::new(alpha, gamma, log_tau, n).unwrap())
            } else {
                Box::new(HarmonicMean::new(alpha, gamma, log_tau, n).unwrap())
            }
        }
    };
    let theta = match kind {
        Kind::Search => theta_in(rng, 2, -1.0, 1.0),
        Kind::Etu | Kind::Harmonic => {
            let mut t = theta_in(rng, 2, -1.0, 1.0);
            t.push(rng.random_range(-0.5..0.5));
            t
        }
        _ => theta_in(rng, 3, -1.0, 1.0),
    };
    let theta = param_vector(fam.as_ref(), &theta).unwrap();
    (fam, theta)
}

/// Margins drawn from `U(0.5, 2)`.
pub fn market(nx: usize, ny: usize, rng: &mut ChaCha8Rng) -> Market {
    let n: Vec<f64> = (0..nx).map(|_| rng.random_range(0.5..2.0)).collect();
    let m: Vec<f64> = (0..ny).map(|_| rng.random_range(0.5..2.0)).collect();
    Market::from_margins(&n, &m).unwrap()
}

pub fn rel_close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + abs
}
