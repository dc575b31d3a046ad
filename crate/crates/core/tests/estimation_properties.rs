mod common;

use common::{family, market, rel_close, rng, Kind, ALL};
use meq_core::equilibrium::{solve_ipfp, SolverOptions};
use meq_core::estimation::{
    fit_mpec, fit_nested, log_likelihood, loglik_gradient, predicted_frequencies, surplus_nonparametric_cs, FitOptions,
    ObservedData,
};
use meq_core::families::{param_vector, ChooSiow, MatchingFunction, SurplusTable};
use meq_core::types::{Matching, ParamVector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random counts, zero on the family's prohibited cells.
fn random_data(fam: &dyn MatchingFunction, theta: &ParamVector, r: &mut ChaCha8Rng) -> ObservedData {
    let (nx, ny) = fam.shape();
    let bound = fam.bind(theta.as_slice());
    let mu_xy = DMatrix::from_fn(nx, ny, |x, y| if bound.is_prohibited(x, y) { 0.0 } else { r.random_range(1.0..50.0) });
    let mu_x0 = DVector::from_fn(nx, |_, _| r.random_range(5.0..50.0));
    let mu_0y = DVector::from_fn(ny, |_, _| r.random_range(5.0..50.0));
    ObservedData::from_matching(Matching::new(mu_xy, mu_x0, mu_0y).unwrap())
}

fn loglik(fam: &dyn MatchingFunction, theta: &[f64], obs: &ObservedData) -> f64 {
    let pv = param_vector(fam, theta).unwrap();
    let pi = predicted_frequencies(fam, &pv, &obs.market().unwrap(), &SolverOptions::with_tol(1e-13)).unwrap();
    log_likelihood(obs, &pi).unwrap()
}

fn fd_gradient(fam: &dyn MatchingFunction, theta: &[f64], obs: &ObservedData) -> Vec<f64> {
    let h = 1e-5;
    (0..theta.len())
        .map(|k| {
            let (mut up, mut dn) = (theta.to_vec(), theta.to_vec());
            up[k] += h;
            dn[k] -= h;
            (loglik(fam, &up, obs) - loglik(fam, &dn, obs)) / (2.0 * h)
        })
        .collect()
}

fn simulated(kind: Kind, nx: usize, ny: usize, r: &mut ChaCha8Rng) -> (Box<dyn MatchingFunction>, ParamVector, ObservedData) {
    let (fam, theta) = family(kind, nx, ny, r);
    let mk = market(nx, ny, r);
    let sol = solve_ipfp(fam.as_ref(), &theta, &mk, &SolverOptions::with_tol(1e-14)).unwrap();
    (fam, theta, ObservedData::from_matching(sol.matching))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), kind in 0usize..6) {
        let mut r = rng(seed);
        let (fam, theta) = family(ALL[kind], 2, 3, &mut r);
        let obs = random_data(fam.as_ref(), &theta, &mut r);
        let g = loglik_gradient(fam.as_ref(), &theta, &obs).unwrap();
        let fd = fd_gradient(fam.as_ref(), theta.as_slice(), &obs);
        let scale = g.amax().max(1.0);
        for k in 0..theta.len() {
            prop_assert!(rel_close(g[k], fd[k], 1e-5, 1e-6 * scale), "{:?} k={k}: {} vs {}", ALL[kind], g[k], fd[k]);
        }
    }

    #[test]
    fn choo_siow_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (nx, ny) = (r.random_range(1..8), r.random_range(1..8));
        let cells: Vec<Option<f64>> = (0..nx * ny)
            .map(|_| if r.random_bool(0.2) { None } else { Some(r.random_range(-2.0..2.0)) })
            .collect();
        let phi = SurplusTable::new(nx, ny, cells).unwrap();
        let (fam, theta) = ChooSiow::from_surplus_table(&phi);
        let mk = market(nx, ny, &mut r);
        let sol = solve_ipfp(&fam, &theta, &mk, &SolverOptions::with_tol(1e-14)).unwrap();
        let table = surplus_nonparametric_cs(&ObservedData::from_matching(sol.matching)).unwrap();
        for x in 0..nx {
            for y in 0..ny {
                match phi.get(x, y) {
                    None => prop_assert!(table.is_prohibited(x, y)),
                    Some(v) => prop_assert!((table.get(x, y).unwrap() - v).abs() <= 1e-8),
                }
            }
        }
    }
}

#[test]
fn gradient_vanishes_at_truth_for_all_families() {
    let mut r = rng(3);
    for kind in ALL {
        let (fam, theta, obs) = simulated(kind, 3, 4, &mut r);
        let g = loglik_gradient(fam.as_ref(), &theta, &obs).unwrap();
        assert!(g.amax() <= 1e-8 * obs.household_count(), "{kind:?}: {g}");
    }
}

#[test]
fn nested_fit_is_scale_invariant_for_homogeneous_families() {
    let mut r = rng(5);
    for kind in [Kind::ChooSiow, Kind::Etu, Kind::Harmonic] {
        let (fam, _, obs) = simulated(kind, 3, 4, &mut r);
        let init = param_vector(fam.as_ref(), &vec![0.0; fam.descriptor().theta_dim]).unwrap();
        let opts = FitOptions::default();
        let a = fit_nested(fam.as_ref(), &obs, &init, &opts).unwrap();
        let b = fit_nested(fam.as_ref(), &obs.scaled(37.0), &init, &opts).unwrap();
        assert!(a.converged && b.converged, "{kind:?}");
        assert!((a.theta_hat.values() - b.theta_hat.values()).amax() <= 1e-8, "{kind:?}");
    }
}

/// Nested and MPEC agree; the numerical Hessian of ℓ at the fit is NSD.
#[test]
fn methods_agree_at_a_local_maximum() {
    let mut r = rng(9);
    for kind in [Kind::ChooSiow, Kind::Menzel, Kind::CobbDouglas, Kind::Etu, Kind::Harmonic] {
        let (fam, _, obs) = simulated(kind, 3, 4, &mut r);
        let mut noisy = obs.matching.clone();
        noisy.mu_xy.iter_mut().for_each(|v| *v *= r.random_range(0.9..1.1));
        let noisy = ObservedData::from_matching(noisy);
        let d = fam.descriptor().theta_dim;
        let init = param_vector(fam.as_ref(), &vec![0.0; d]).unwrap();
        let opts = FitOptions::default();
        let nested = fit_nested(fam.as_ref(), &noisy, &init, &opts).unwrap();
        let mpec = fit_mpec(fam.as_ref(), &noisy, &init, &opts).unwrap();
        assert!(nested.converged, "{kind:?} nested");
        assert!(nested.gradient_norm <= 1e-6);
        assert!(mpec.converged, "{kind:?} mpec");
        assert!((nested.theta_hat.values() - mpec.theta_hat.values()).amax() <= 1e-5, "{kind:?}");

        let t = nested.theta_hat.as_slice();
        let h = 1e-4;
        let f = |v: &[f64]| loglik(fam.as_ref(), v, &noisy) / noisy.household_count();
        let mut hess = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let at = |si: f64, sj: f64| {
                    let mut v = t.to_vec();
                    v[i] += si;
                    v[j] += sj;
                    f(&v)
                };
                hess[(i, j)] = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
            }
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let eig = hess.symmetric_eigenvalues();
        assert!(eig.max() <= 1e-6, "{kind:?}: {eig}");
    }
}
