//! First Dirichlet eigenpair of the negative discrete Laplacian, computed by
//! inverse power iteration on the cached Poisson factorization.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

/// Smallest eigenvalue and its sup-normalized positive eigenfunction.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda1: f64,
    pub phi1: ScalarField,
}

/// Default Rayleigh-increment tolerance.
pub const DEFAULT_EIGEN_TOL: f64 = 1e-10;
/// Default iteration budget.
pub const DEFAULT_EIGEN_MAX_ITERS: usize = 500;

/// Inverse power iteration from the all-ones interior start vector.
///
/// Stops once successive Rayleigh quotients differ by less than `tol` and the
/// eigen-residual max |(-Lap phi) - lambda phi| has dropped below
/// 10 * tol * lambda; the Rayleigh increment alone cannot certify the
/// residual, so both are required.
pub fn first_eigenpair(grid: &Grid, tol: f64, max_iters: usize) -> Result<EigenPair> {
    if grid.interior_count() == 0 {
        return Err(Error::InvalidGrid("no interior nodes".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }

    let mut phi = grid.sample_dirichlet(|_| 1.0);
    phi = phi.scale(1.0 / phi.linf_norm());
    let mut rayleigh = rayleigh_quotient(grid, &phi)?;
    let mut residual = eigen_residual(grid, &phi, rayleigh)?;

    for iterations in 1..=max_iters {
        let next = grid.solve_poisson(&phi)?;
        let sup = next.linf_norm();
        if !(sup > 0.0) {
            return Err(Error::LinearSolver("inverse iteration collapsed to zero".into()));
        }
        phi = next.scale(1.0 / sup);
        let next_rayleigh = rayleigh_quotient(grid, &phi)?;
        // monotone for SPD operators; tiny slack for roundoff
        debug_assert!(next_rayleigh <= rayleigh * (1.0 + 1e-12));
        let increment = (rayleigh - next_rayleigh).abs();
        rayleigh = next_rayleigh;
        residual = eigen_residual(grid, &phi, rayleigh)?;
        if increment < tol && residual <= 10.0 * tol * rayleigh {
            // positive start + inverse iteration keeps every interior node positive
            if grid.interior_nodes().any(|n| phi.get(n) <= 0.0) {
                return Err(Error::LinearSolver(
                    "eigenfunction lost positivity at an interior node".into(),
                ));
            }
            let _ = iterations;
            return Ok(EigenPair { lambda1: rayleigh, phi1: phi });
        }
    }
    Err(Error::EigenNonConvergence { iterations: max_iters, residual })
}

/// Rayleigh quotient of the Dirichlet form: |grad f|^2 integral over |f|^2.
pub fn rayleigh_quotient(grid: &Grid, f: &ScalarField) -> Result<f64> {
    let num = grid.grad_inner(f, f)?;
    let den = {
        let l2 = grid.l2_norm(f)?;
        l2 * l2
    };
    if den == 0.0 {
        return Err(Error::InvalidParameter("Rayleigh quotient of the zero field".into()));
    }
    Ok(num / den)
}

fn eigen_residual(grid: &Grid, phi: &ScalarField, lambda: f64) -> Result<f64> {
    let lap = grid.laplacian(phi)?;
    Ok(lap.zip(phi, |a, p| a - lambda * p)?.linf_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainKind;
    use std::f64::consts::PI;

    #[test]
    fn interval_eigenvalue_is_pi_squared() {
        let g = Grid::build(DomainKind::Interval, &[1.0], &[65]).unwrap();
        let pair = first_eigenpair(&g, 1e-10, 500).unwrap();
        let exact = PI * PI;
        assert!((pair.lambda1 - exact).abs() / exact < 0.005, "lambda {}", pair.lambda1);

        // phi1 tracks sin(pi x) after sup normalization
        for n in g.interior_nodes() {
            let x = g.coord(n, 0);
            assert!((pair.phi1.get(n) - (PI * x).sin()).abs() < 1e-3);
        }
        assert!((pair.phi1.linf_norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn square_eigenvalue_is_two_pi_squared() {
        let g = Grid::build(DomainKind::Rectangle, &[1.0, 1.0], &[33, 33]).unwrap();
        let pair = first_eigenpair(&g, 1e-10, 500).unwrap();
        let exact = 2.0 * PI * PI;
        assert!((pair.lambda1 - exact).abs() / exact < 0.005, "lambda {}", pair.lambda1);
    }

    #[test]
    fn eigenvalue_scales_inversely_with_domain_size() {
        let g1 = Grid::build(DomainKind::Interval, &[1.0], &[65]).unwrap();
        let g2 = Grid::build(DomainKind::Interval, &[2.0], &[65]).unwrap();
        let p1 = first_eigenpair(&g1, 1e-10, 500).unwrap();
        let p2 = first_eigenpair(&g2, 1e-10, 500).unwrap();
        let exact = PI * PI / 4.0;
        assert!((p2.lambda1 - exact).abs() / exact < 0.005, "lambda {}", p2.lambda1);
        // enlarging the domain lowers the eigenvalue
        assert!(p2.lambda1 < p1.lambda1);
    }

    #[test]
    fn eigenfunction_positive_and_residual_small() {
        let g = Grid::build_at(DomainKind::Disc, &[-1.0, -1.0], &[2.0, 2.0], &[33, 33]).unwrap();
        let tol = 1e-10;
        let pair = first_eigenpair(&g, tol, 500).unwrap();
        assert!(pair.lambda1 > 0.0);
        for n in g.interior_nodes() {
            assert!(pair.phi1.get(n) > 0.0);
        }
        let lap = g.laplacian(&pair.phi1).unwrap();
        let res = lap.zip(&pair.phi1, |a, p| a - pair.lambda1 * p).unwrap().linf_norm();
        assert!(res <= 10.0 * tol * pair.lambda1, "residual {res}");
    }

    #[test]
    fn rayleigh_quotients_decrease_along_the_iteration() {
        let g = Grid::build(DomainKind::Rectangle, &[1.0, 1.0], &[17, 17]).unwrap();
        let mut phi = g.sample_dirichlet(|_| 1.0);
        let mut prev = rayleigh_quotient(&g, &phi).unwrap();
        for _ in 0..30 {
            phi = g.solve_poisson(&phi).unwrap();
            phi = phi.scale(1.0 / phi.linf_norm());
            let next = rayleigh_quotient(&g, &phi).unwrap();
            assert!(next <= prev * (1.0 + 1e-12), "{next} > {prev}");
            prev = next;
        }
    }

    #[test]
    fn reports_nonconvergence_with_budget() {
        let g = Grid::build(DomainKind::Rectangle, &[1.0, 1.0], &[33, 33]).unwrap();
        match first_eigenpair(&g, 1e-12, 2) {
            Err(Error::EigenNonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
