//! Asymptotic covariance of the MLE for degree-1 homogeneous families.
//!
//! With `B = D_θ log Π`, `C = D_ζ log Π` (`ζ` the aggregate margins) and
//! `J = B'·diag(Π)·B`,
//! `V_θ = J⁻¹ + J⁻¹·(B'diag(Π)C)·AV_πA'·(B'diag(Π)C)'·J⁻¹`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::likelihood::{d_log_pi, sensitivity, Problem};
use super::ObservedData;
use crate::equilibrium::{raw_jacobian, SolverOptions};
use crate::error::{config, MeqError, Result};
use crate::families::{check_theta, MatchingFunction};
use crate::types::{HouseholdFrequencies, ParamVector};

const PIVOT_FLOOR: f64 = 1e-12;

/// `A·V_π·A'` with `V_π = diag(π) − ππ'`.
pub fn margin_covariance(pi: &HouseholdFrequencies) -> DMatrix<f64> {
    let (nx, ny) = (pi.nx(), pi.ny());
    let mut out = DMatrix::zeros(nx + ny, nx + ny);
    let mut zeta = DVector::zeros(nx + ny);
    for x in 0..nx {
        zeta[x] += pi.pi_x0[x];
        for y in 0..ny {
            let p = pi.pi_xy[(x, y)];
            zeta[x] += p;
            zeta[nx + y] += p;
            out[(x, nx + y)] = p;
            out[(nx + y, x)] = p;
        }
    }
    for y in 0..ny {
        zeta[nx + y] += pi.pi_0y[y];
    }
    for i in 0..nx + ny {
        out[(i, i)] = zeta[i];
    }
    out - &zeta * zeta.transpose()
}

/// The sandwich formula from its ingredients; rows of the derivative
/// matrices index households.
pub fn sandwich_covariance(
    d_theta_log_pi: &DMatrix<f64>,
    d_zeta_log_pi: &DMatrix<f64>,
    pi: &DVector<f64>,
    margin_cov: &DMatrix<f64>,
    names: &[String],
) -> Result<DMatrix<f64>> {
    let (h, d) = d_theta_log_pi.shape();
    let z = d_zeta_log_pi.ncols();
    if pi.len() != h || d_zeta_log_pi.nrows() != h || margin_cov.shape() != (z, z) || names.len() != d {
        return config("covariance ingredients have inconsistent shapes");
    }
    let weighted = DMatrix::from_fn(h, d, |r, c| pi[r] * d_theta_log_pi[(r, c)]);
    let info = d_theta_log_pi.transpose() * &weighted;
    let info = (&info + info.transpose()) * 0.5;
    let info_inv = invert_information(info, names)?;
    let cross = weighted.transpose() * d_zeta_log_pi;
    let half = &info_inv * cross;
    let v = &info_inv + &half * margin_cov * half.transpose();
    Ok((&v + v.transpose()) * 0.5)
}

fn invert_information(info: DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(info);
    let (imin, lmin) = eig.eigenvalues.argmin();
    let lmax = eig.eigenvalues.max();
    if !(lmax > 0.0) || lmin <= PIVOT_FLOOR * lmax {
        let dir = eig.eigenvectors.column(imin);
        let mut terms: Vec<String> = dir
            .iter()
            .zip(names)
            .filter(|(c, _)| c.abs() > 1e-3)
            .map(|(c, n)| format!("{c:+.3}*{n}"))
            .collect();
        if terms.is_empty() {
            terms.push("(all parameters)".into());
        }
        return Err(MeqError::RankDeficient { direction: terms.join(" ") });
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    Ok(&eig.eigenvectors * inv_diag * eig.eigenvectors.transpose())
}

/// `(V_θ, std_errors)` with `std_errors = sqrt(diag(V_θ) / N̂)`.
pub fn covariance_homogeneous(
    family: &dyn MatchingFunction,
    theta_hat: &ParamVector,
    observed: &ObservedData,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    covariance_homogeneous_with(family, theta_hat, observed, &super::FitOptions::default().solver)
}

pub fn covariance_homogeneous_with(
    family: &dyn MatchingFunction,
    theta_hat: &ParamVector,
    observed: &ObservedData,
    opts: &SolverOptions,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let desc = family.descriptor();
    if !desc.homogeneous_degree_one {
        return Err(MeqError::Capability(format!(
            "covariance requires a degree-1 homogeneous family; {} is not",
            desc.name
        )));
    }
    check_theta(family, theta_hat)?;
    let problem = Problem::new(family, observed, opts)?;
    let (nx, ny) = (problem.nx(), problem.ny());
    let state = problem.equilibrium(theta_hat.as_slice(), &problem.m)?;
    let bound = family.bind(theta_hat.as_slice());
    let s = sensitivity(bound.as_ref(), &state.a, &state.b, theta_hat.len())?;
    let total = s.mu.sum();
    let pi = &s.mu / total;
    let b_mat = d_log_pi(&s);

    // D_{π₀}Π: couples depend on their row and column singles.
    let hdim = s.mu.len();
    let mut d_mass = DMatrix::zeros(hdim, nx + ny);
    for x in 0..nx {
        for y in 0..ny {
            let (_, da, db) = bound.value_grad(x, y, state.a[x], state.b[y]);
            d_mass[(x * ny + y, x)] = da;
            d_mass[(x * ny + y, nx + y)] = db;
        }
    }
    for i in 0..nx + ny {
        d_mass[(nx * ny + i, i)] = 1.0;
    }
    let col_sums = d_mass.row_sum();
    let d_pi = DMatrix::from_fn(hdim, nx + ny, |r, c| (d_mass[(r, c)] - pi[r] * col_sums[c]) / total);
    // D_ζΠ = D_{π₀}Π·Δ⁻¹, i.e. Δ'·X' = D_{π₀}Π'.
    let delta_t = raw_jacobian(bound.as_ref(), &state.a, &state.b).transpose();
    let xt = delta_t
        .lu()
        .solve(&d_pi.transpose())
        .ok_or_else(|| MeqError::Singular("equilibrium Jacobian".into()))?;
    // Working margins are ζ·N̂/K.
    let unit = problem.n_obs / problem.scale;
    let c_mat = DMatrix::from_fn(hdim, nx + ny, |r, c| if pi[r] > 0.0 { xt[(c, r)] / pi[r] * unit } else { 0.0 });

    let freq = HouseholdFrequencies {
        pi_xy: DMatrix::from_fn(nx, ny, |x, y| pi[x * ny + y]),
        pi_x0: pi.rows(nx * ny, nx).into_owned(),
        pi_0y: pi.rows(nx * ny + nx, ny).into_owned(),
    };
    let v = sandwich_covariance(&b_mat, &c_mat, &pi, &margin_covariance(&freq), theta_hat.names())?;
    let se = v.diagonal().map(|d| (d.max(0.0) / problem.n_obs).sqrt());
    Ok((v, se))
}
