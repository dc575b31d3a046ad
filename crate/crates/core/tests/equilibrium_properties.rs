mod common;

use common::{family, market, rng, ALL};
use meq_core::equilibrium::{residuals, solve_ipfp, solve_newton, system_jacobian, SolverOptions};
use meq_core::families::mf_value;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn residuals_match_double_loop(seed in any::<u64>(), kind in 0usize..6) {
        let mut r = rng(seed);
        let (nx, ny) = (r.random_range(1..5), r.random_range(1..5));
        let (fam, theta) = family(ALL[kind], nx, ny, &mut r);
        let mk = market(nx, ny, &mut r);
        let a = DVector::from_fn(nx, |_, _| r.random_range(0.05..1.0));
        let b = DVector::from_fn(ny, |_, _| r.random_range(0.05..1.0));
        let res = residuals(fam.as_ref(), &theta, &mk, &a, &b).unwrap();
        for x in 0..nx {
            let mut s = mk.n[x] - a[x];
            for y in 0..ny {
                s -= mf_value(fam.as_ref(), &theta, x, y, a[x], b[y]).unwrap();
            }
            prop_assert!((res[x] - s).abs() <= 1e-13 * (1.0 + s.abs()));
        }
        for y in 0..ny {
            let mut s = mk.m[y] - b[y];
            for x in 0..nx {
                s -= mf_value(fam.as_ref(), &theta, x, y, a[x], b[y]).unwrap();
            }
            prop_assert!((res[nx + y] - s).abs() <= 1e-13 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn jacobian_is_column_diagonally_dominant(seed in any::<u64>(), kind in 0usize..6) {
        let mut r = rng(seed);
        let (nx, ny) = (r.random_range(1..6), r.random_range(1..6));
        let (fam, theta) = family(ALL[kind], nx, ny, &mut r);
        let a = DVector::from_fn(nx, |_, _| r.random_range(0.05..1.0));
        let b = DVector::from_fn(ny, |_, _| r.random_range(0.05..1.0));
        let j = system_jacobian(fam.as_ref(), &theta, &a, &b).unwrap();
        for c in 0..nx + ny {
            let off: f64 = (0..nx + ny).filter(|&i| i != c).map(|i| j[(i, c)].abs()).sum();
            prop_assert!(j[(c, c)] > off);
            prop_assert!(j[(c, c)] >= 1.0);
        }
    }

    #[test]
    fn ipfp_and_newton_agree(seed in any::<u64>(), kind in 0usize..6) {
        let mut r = rng(seed);
        let (nx, ny) = (r.random_range(1..8), r.random_range(1..8));
        let (fam, theta) = family(ALL[kind], nx, ny, &mut r);
        let mk = market(nx, ny, &mut r);
        let opts = SolverOptions::with_tol(1e-12);
        let ip = solve_ipfp(fam.as_ref(), &theta, &mk, &opts).unwrap();
        prop_assert!(ip.converged);
        prop_assert!(ip.residual_sup_norm <= 1e-12);
        let nt = solve_newton(fam.as_ref(), &theta, &mk, &opts).unwrap();
        prop_assert!(nt.converged);
        prop_assert!(ip.matching.sup_distance(&nt.matching) <= 1e-10);
        // Feasibility in observed units.
        let scale = ip.mass_scale;
        prop_assert!((ip.matching.men_margins() - &mk.n).amax() <= 1e-12 * scale * 10.0);
        prop_assert!((ip.matching.women_margins() - &mk.m).amax() <= 1e-12 * scale * 10.0);
    }

    #[test]
    fn parallel_ipfp_is_bit_identical(seed in any::<u64>(), kind in 0usize..6) {
        let mut r = rng(seed);
        let (nx, ny) = (r.random_range(1..12), r.random_range(1..12));
        let (fam, theta) = family(ALL[kind], nx, ny, &mut r);
        let mk = market(nx, ny, &mut r);
        let serial = SolverOptions::with_tol(1e-11);
        let parallel = SolverOptions { parallel: true, ..serial.clone() };
        let a = solve_ipfp(fam.as_ref(), &theta, &mk, &serial).unwrap();
        let b = solve_ipfp(fam.as_ref(), &theta, &mk, &parallel).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn homogeneous_scaling_of_equilibrium() {
    let mut r = rng(11);
    for kind in ALL {
        let (fam, theta) = family(kind, 3, 4, &mut r);
        if !fam.descriptor().homogeneous_degree_one {
            continue;
        }
        let mk = market(3, 4, &mut r);
        let opts = SolverOptions::with_tol(1e-13);
        let base = solve_ipfp(fam.as_ref(), &theta, &mk, &opts).unwrap();
        let big = solve_ipfp(fam.as_ref(), &theta, &mk.scaled(7.0), &opts).unwrap();
        assert!(big.matching.sup_distance(&base.matching.scaled(7.0)) <= 1e-11, "{kind:?}");
    }
}
