//! Solvers for the discrete truncated-penalized auxiliary system at fixed eps:
//! a damped Picard iteration on the inverted-Laplacian fixed-point form (the
//! production method; each step is a pair of cached back-substitutions) and a
//! dense Newton oracle with finite-difference Jacobians for cross-validation
//! on small grids.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundsPair, ProblemSpec};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::truncation::{self, NonlinearityContext};

/// A Dirichlet-zero (u, v) state.
#[derive(Debug, Clone)]
pub struct StatePair {
    pub u: ScalarField,
    pub v: ScalarField,
}

impl StatePair {
    pub fn new(u: ScalarField, v: ScalarField) -> Result<Self> {
        if u.grid() != v.grid() {
            return Err(Error::GridMismatch);
        }
        if !u.is_dirichlet_zero() || !v.is_dirichlet_zero() {
            return Err(Error::InvalidParameter(
                "state fields must vanish on the boundary".into(),
            ));
        }
        Ok(StatePair { u, v })
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    /// Sup distance between two states.
    pub fn sup_distance(&self, other: &StatePair) -> Result<f64> {
        let du = self.u.sub(&other.u)?.linf_norm();
        let dv = self.v.sub(&other.v)?.linf_norm();
        Ok(du.max(dv))
    }
}

/// Nodewise right-hand sides of the two equations. The production system is
/// the truncated-penalized one; the raw regularized system and constant
/// debug systems implement the same interface.
pub trait SystemRhs {
    fn rhs_u(&self, node: usize, s: f64, t: f64, eta: &[f64], xi: &[f64]) -> f64;
    fn rhs_v(&self, node: usize, s: f64, t: f64, eta: &[f64], xi: &[f64]) -> f64;
}

impl SystemRhs for NonlinearityContext<'_> {
    fn rhs_u(&self, node: usize, s: f64, t: f64, eta: &[f64], xi: &[f64]) -> f64 {
        self.h2_eval(node, s, t, eta, xi)
    }

    fn rhs_v(&self, node: usize, s: f64, t: f64, eta: &[f64], xi: &[f64]) -> f64 {
        self.g2_eval(node, s, t, eta, xi)
    }
}

/// The untruncated regularized system, used for the raw-residual diagnostics
/// once a solution is confined to the band.
#[derive(Debug, Clone, Copy)]
pub struct RawRegularized<'a> {
    pub spec: &'a ProblemSpec,
    pub eps: f64,
}

impl SystemRhs for RawRegularized<'_> {
    fn rhs_u(&self, _node: usize, s: f64, t: f64, eta: &[f64], xi: &[f64]) -> f64 {
        truncation::h_eps_raw(self.spec, self.eps, s, t, eta, xi)
    }

    fn rhs_v(&self, _node: usize, s: f64, t: f64, eta: &[f64], xi: &[f64]) -> f64 {
        truncation::g_eps_raw(self.spec, self.eps, s, t, eta, xi)
    }
}

/// Solution method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Picard,
    DenseNewton,
}

/// Damping, tolerance, and budget of one solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// damping in (0, 1]
    pub theta: f64,
    /// sup-norm residual tolerance
    pub tol: f64,
    pub max_iter: usize,
    pub method: SolveMethod,
}

impl SolverConfig {
    pub fn new(theta: f64, tol: f64, max_iter: usize, method: SolveMethod) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::InvalidParameter(format!("theta must lie in (0,1], got {theta}")));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
        }
        Ok(SolverConfig { theta, tol, max_iter, method })
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { theta: 0.5, tol: 1e-10, max_iter: 2000, method: SolveMethod::Picard }
    }
}

/// Sup norms of the positive parts (u - upper)+ / (lower - u)+ against a
/// bounds pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OrderingMargins {
    pub upper_u: f64,
    pub upper_v: f64,
    pub lower_u: f64,
    pub lower_v: f64,
}

impl OrderingMargins {
    pub fn max_upper(&self) -> f64 {
        self.upper_u.max(self.upper_v)
    }

    pub fn max_lower(&self) -> f64 {
        self.lower_u.max(self.lower_v)
    }

    pub fn max(&self) -> f64 {
        self.max_upper().max(self.max_lower())
    }
}

/// Telemetry of one solve. residual_history always has iterations + 1
/// entries: the initial residual plus one per accepted update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: SolveMethod,
    pub theta: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    pub pairing_history: Vec<f64>,
    pub ordering: Option<OrderingMargins>,
    pub penalty_max: Option<(f64, f64)>,
    pub failure: Option<String>,
}

/// Right-hand-side fields of the system at the current state, zero on the
/// boundary.
pub fn rhs_fields<R: SystemRhs>(
    grid: &Grid,
    sys: &R,
    state: &StatePair,
) -> Result<(ScalarField, ScalarField)> {
    let grad_u = grid.gradient(&state.u)?;
    let grad_v = grid.gradient(&state.v)?;
    let mut fu = grid.zeros();
    let mut fv = grid.zeros();
    for n in grid.interior_nodes() {
        let s = state.u.get(n);
        let t = state.v.get(n);
        let eta = grad_u.at(n);
        let xi = grad_v.at(n);
        fu.set(n, sys.rhs_u(n, s, t, eta, xi));
        fv.set(n, sys.rhs_v(n, s, t, eta, xi));
    }
    Ok((fu, fv))
}

/// Nodewise residual r = (-Lap state) - rhs(state), zero on the boundary;
/// exactly zero iff the state solves the discrete system.
pub fn residual<R: SystemRhs>(grid: &Grid, sys: &R, state: &StatePair) -> Result<StatePair> {
    let (fu, fv) = rhs_fields(grid, sys, state)?;
    let ru = grid.laplacian(&state.u)?.sub(&fu)?;
    let rv = grid.laplacian(&state.v)?.sub(&fv)?;
    Ok(StatePair { u: ru, v: rv })
}

/// Sup norm of the residual.
pub fn residual_sup<R: SystemRhs>(grid: &Grid, sys: &R, state: &StatePair) -> Result<f64> {
    let r = residual(grid, sys, state)?;
    Ok(r.u.linf_norm().max(r.v.linf_norm()))
}

/// Duality pairing <B(u,v), (phi,psi)> = a(u,phi) + a(v,psi)
/// - int rhs_u phi - int rhs_v psi, with a the discrete Dirichlet form.
pub fn pairing_b<R: SystemRhs>(
    grid: &Grid,
    sys: &R,
    state: &StatePair,
    test: &StatePair,
) -> Result<f64> {
    let (fu, fv) = rhs_fields(grid, sys, state)?;
    let a = grid.grad_inner(&state.u, &test.u)? + grid.grad_inner(&state.v, &test.v)?;
    let load = grid.integrate(&fu.zip(&test.u, |a, b| a * b)?)?
        + grid.integrate(&fv.zip(&test.v, |a, b| a * b)?)?;
    Ok(a - load)
}

/// Damped fixed-point iteration
/// (u, v) <- (1-theta)(u, v) + theta (Poisson(rhs_u), Poisson(rhs_v)).
/// On non-convergence the best iterate seen is returned with
/// converged = false.
pub fn picard_solve<R: SystemRhs>(
    grid: &Grid,
    sys: &R,
    config: &SolverConfig,
    initial: &StatePair,
) -> Result<(StatePair, SolveReport)> {
    let theta = config.theta;
    let mut state = initial.clone();
    let mut residual_history = Vec::new();
    let mut pairing_history = Vec::new();
    let mut best = state.clone();
    let mut best_res = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    loop {
        let (fu, fv) = rhs_fields(grid, sys, &state)?;
        let ru = grid.laplacian(&state.u)?.sub(&fu)?;
        let rv = grid.laplacian(&state.v)?.sub(&fv)?;
        let res = ru.linf_norm().max(rv.linf_norm());
        residual_history.push(res);
        pairing_history.push(pairing_b(grid, sys, &state, &state)?);
        if res < best_res {
            best_res = res;
            best = state.clone();
        }
        if res <= config.tol {
            converged = true;
            break;
        }
        if iterations >= config.max_iter {
            break;
        }
        let wu = grid.solve_poisson(&fu)?;
        let wv = grid.solve_poisson(&fv)?;
        state = StatePair {
            u: state.u.zip(&wu, |a, b| (1.0 - theta) * a + theta * b)?,
            v: state.v.zip(&wv, |a, b| (1.0 - theta) * a + theta * b)?,
        };
        iterations += 1;
    }

    let report = SolveReport {
        method: SolveMethod::Picard,
        theta,
        converged,
        iterations,
        residual_history,
        final_residual: best_res,
        pairing_history,
        ordering: None,
        penalty_max: None,
        failure: if converged { None } else { Some("iteration budget exhausted".into()) },
    };
    Ok((best, report))
}

/// Interior-unknown cap for the dense Newton oracle.
pub const NEWTON_MAX_UNKNOWNS: usize = 2000;

/// Newton iteration with forward-difference Jacobians (step 1e-6, scaled by
/// 1 + |x_j|) and a halving line search accepting on sup-norm residual
/// decrease. Desk-scale oracle: refuses more than 2000 interior unknowns.
pub fn dense_newton_solve<R: SystemRhs>(
    grid: &Grid,
    sys: &R,
    config: &SolverConfig,
    initial: &StatePair,
) -> Result<(StatePair, SolveReport)> {
    let n_int = grid.interior_count();
    let n = 2 * n_int;
    if n > NEWTON_MAX_UNKNOWNS {
        return Err(Error::InvalidParameter(format!(
            "dense Newton limited to {NEWTON_MAX_UNKNOWNS} unknowns, got {n}"
        )));
    }

    let pack = |state: &StatePair| {
        let mut x = DVector::zeros(n);
        for (k, node) in grid.interior_nodes().enumerate() {
            x[k] = state.u.get(node);
            x[n_int + k] = state.v.get(node);
        }
        x
    };
    let unpack = |x: &DVector<f64>| {
        let mut u = grid.zeros();
        let mut v = grid.zeros();
        for (k, node) in grid.interior_nodes().enumerate() {
            u.set(node, x[k]);
            v.set(node, x[n_int + k]);
        }
        StatePair { u, v }
    };
    let eval = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let state = unpack(x);
        let r = residual(grid, sys, &state)?;
        let mut f = DVector::zeros(n);
        for (k, node) in grid.interior_nodes().enumerate() {
            f[k] = r.u.get(node);
            f[n_int + k] = r.v.get(node);
        }
        Ok(f)
    };

    let mut x = pack(initial);
    let mut fx = eval(&x)?;
    let mut res = fx.amax();
    let mut residual_history = vec![res];
    let mut pairing_history = vec![pairing_b(grid, sys, initial, initial)?];
    let mut converged = res <= config.tol;
    let mut iterations = 0;
    let mut failure = None;

    while !converged && iterations < config.max_iter {
        // forward-difference Jacobian, column by column
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let step = 1e-6 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += step;
            let fp = eval(&xp)?;
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fx[i]) / step;
            }
        }
        let lu = jac.lu();
        let dir = match lu.solve(&(-&fx)) {
            Some(d) => d,
            None => {
                failure = Some("singular Jacobian".to_string());
                break;
            }
        };

        // halving line search on sup-norm decrease
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let xt = &x + alpha * &dir;
            let ft = eval(&xt)?;
            let rt = ft.amax();
            if rt < res {
                accepted = Some((xt, ft, rt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xt, ft, rt)) = accepted else {
            failure = Some("line search stagnated".to_string());
            break;
        };
        x = xt;
        fx = ft;
        res = rt;
        iterations += 1;
        residual_history.push(res);
        let state = unpack(&x);
        pairing_history.push(pairing_b(grid, sys, &state, &state)?);
        converged = res <= config.tol;
    }

    if !converged && failure.is_none() {
        failure = Some("iteration budget exhausted".to_string());
    }
    let report = SolveReport {
        method: SolveMethod::DenseNewton,
        theta: config.theta,
        converged,
        iterations,
        residual_history,
        final_residual: res,
        pairing_history,
        ordering: None,
        penalty_max: None,
        failure: if converged { None } else { failure },
    };
    Ok((unpack(&x), report))
}

/// Sup norms of the band violations of a state.
pub fn ordering_check(state: &StatePair, bounds: &BoundsPair) -> Result<OrderingMargins> {
    let pos_sup = |f: &ScalarField, g: &ScalarField| -> Result<f64> {
        Ok(f.zip(g, |a, b| (a - b).max(0.0))?.linf_norm())
    };
    Ok(OrderingMargins {
        upper_u: pos_sup(&state.u, &bounds.upper.u)?,
        upper_v: pos_sup(&state.v, &bounds.upper.v)?,
        lower_u: pos_sup(&bounds.lower.u, &state.u)?,
        lower_v: pos_sup(&bounds.lower.v, &state.v)?,
    })
}

/// Max |gamma1|, |gamma2| of a state over interior nodes.
pub fn penalty_maxima(grid: &Grid, ctx: &NonlinearityContext, state: &StatePair) -> (f64, f64) {
    let mut p1 = 0.0f64;
    let mut p2 = 0.0f64;
    for n in grid.interior_nodes() {
        let (g1, g2) = ctx.penalties(n, state.u.get(n), state.v.get(n));
        p1 = p1.max(g1.abs());
        p2 = p2.max(g2.abs());
    }
    (p1, p2)
}

/// Solves the truncated-penalized system with the configured method and
/// attaches ordering and penalty diagnostics to the report.
pub fn solve_system(
    grid: &Grid,
    ctx: &NonlinearityContext,
    config: &SolverConfig,
    initial: &StatePair,
) -> Result<(StatePair, SolveReport)> {
    let (state, mut report) = match config.method {
        SolveMethod::Picard => picard_solve(grid, ctx, config, initial)?,
        SolveMethod::DenseNewton => dense_newton_solve(grid, ctx, config, initial)?,
    };
    report.ordering = Some(ordering_check(&state, ctx.bounds)?);
    report.penalty_max = Some(penalty_maxima(grid, ctx, &state));
    Ok((state, report))
}

/// Damping retries on non-convergence: halves theta up to `max_retries`
/// times and re-solves from the same initial state.
pub fn solve_with_retries(
    grid: &Grid,
    ctx: &NonlinearityContext,
    config: &SolverConfig,
    initial: &StatePair,
    max_retries: usize,
) -> Result<(StatePair, SolveReport)> {
    let mut cfg = *config;
    let mut last = solve_system(grid, ctx, &cfg, initial)?;
    for _ in 0..max_retries {
        if last.1.converged {
            return Ok(last);
        }
        cfg.theta *= 0.5;
        last = solve_system(grid, ctx, &cfg, initial)?;
    }
    Ok(last)
}
