//! Pointwise nonlinearities: the raw regularized right-hand sides H_eps and
//! G_eps, the frozen-branch truncations H1 and G1, the penalties gamma1 and
//! gamma2, and their compositions H2 and G2.

use crate::bounds::{BoundsPair, ProblemSpec};
use crate::error::{Error, Result};

/// (t^2 + eps)^(-alpha/2): globally bounded for eps > 0, equal to |t|^-alpha
/// at eps = 0.
#[inline]
fn singular_term(t: f64, eps: f64, alpha: f64) -> f64 {
    (t * t + eps).powf(-0.5 * alpha)
}

/// Raw u-equation right-hand side (t^2+eps)^(-a1/2) -+ t^b1 + g1(eta, xi).
/// Total: diverges to +inf at (eps, t) = (0, 0) instead of erroring; the
/// power term guards negative t with |t|^b1.
pub(crate) fn h_eps_raw(
    spec: &ProblemSpec,
    eps: f64,
    _s: f64,
    t: f64,
    eta: &[f64],
    xi: &[f64],
) -> f64 {
    singular_term(t, eps, spec.alpha1)
        + spec.sign.factor() * t.abs().powf(spec.beta1)
        + spec.g1.eval(eta, xi)
}

/// Raw v-equation right-hand side with the roles of s and t swapped.
pub(crate) fn g_eps_raw(
    spec: &ProblemSpec,
    eps: f64,
    s: f64,
    _t: f64,
    eta: &[f64],
    xi: &[f64],
) -> f64 {
    singular_term(s, eps, spec.alpha2)
        + spec.sign.factor() * s.abs().powf(spec.beta2)
        + spec.g2.eval(eta, xi)
}

/// Raw regularized u-equation nonlinearity. Errors on the genuinely singular
/// evaluation eps = 0, t = 0 with alpha1 > 0.
pub fn h_eps(spec: &ProblemSpec, eps: f64, s: f64, t: f64, eta: &[f64], xi: &[f64]) -> Result<f64> {
    if eps == 0.0 && t == 0.0 && spec.alpha1 > 0.0 {
        return Err(Error::SingularArgument);
    }
    Ok(h_eps_raw(spec, eps, s, t, eta, xi))
}

/// Raw regularized v-equation nonlinearity; singular at eps = 0, s = 0.
pub fn g_eps(spec: &ProblemSpec, eps: f64, s: f64, t: f64, eta: &[f64], xi: &[f64]) -> Result<f64> {
    if eps == 0.0 && s == 0.0 && spec.alpha2 > 0.0 {
        return Err(Error::SingularArgument);
    }
    Ok(g_eps_raw(spec, eps, s, t, eta, xi))
}

/// Penalty gamma(x, s) = -((lower - s)+)^l + ((s - upper)+)^l: zero exactly on
/// [lower, upper], strictly increasing in s outside it.
pub fn gamma(l: f64, lower: f64, upper: f64, s: f64) -> f64 {
    debug_assert!(lower <= upper);
    -((lower - s).max(0.0)).powf(l) + ((s - upper).max(0.0)).powf(l)
}

/// Which of the five truncation branches fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// first argument below its subsolution: everything frozen at the lower pair
    FrozenLower,
    /// second argument below its subsolution: it and its gradient frozen low
    SecondLow,
    /// both arguments inside the band: the raw nonlinearity, unchanged
    Middle,
    /// second argument above its supersolution: it and its gradient frozen high
    SecondHigh,
    /// first argument above its supersolution: everything frozen at the upper pair
    FrozenUpper,
}

impl Branch {
    pub fn id(self) -> u8 {
        match self {
            Branch::FrozenLower => 1,
            Branch::SecondLow => 2,
            Branch::Middle => 3,
            Branch::SecondHigh => 4,
            Branch::FrozenUpper => 5,
        }
    }
}

/// Everything a truncated evaluation needs at one node: the problem data, the
/// sub/supersolution band with its gradients, and the regularization eps.
#[derive(Debug, Clone, Copy)]
pub struct NonlinearityContext<'a> {
    pub spec: &'a ProblemSpec,
    pub bounds: &'a BoundsPair,
    pub eps: f64,
}

impl<'a> NonlinearityContext<'a> {
    pub fn new(spec: &'a ProblemSpec, bounds: &'a BoundsPair, eps: f64) -> Result<Self> {
        if !(eps >= 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be nonnegative, got {eps}")));
        }
        Ok(NonlinearityContext { spec, bounds, eps })
    }

    /// Truncated u-equation nonlinearity H1, with the branch that fired.
    ///
    /// Branches on s against [u_lower, u_upper] first, then on t against
    /// [v_lower, v_upper]; ties route to the middle branch. In the middle
    /// branch t >= v_lower > 0 at interior nodes, so the singular term only
    /// ever sees safely positive arguments there.
    pub fn h1_eval_with_branch(
        &self,
        node: usize,
        s: f64,
        t: f64,
        eta: &[f64],
        xi: &[f64],
    ) -> (f64, Branch) {
        let b = self.bounds;
        let (lo_u, hi_u) = (b.lower.u.get(node), b.upper.u.get(node));
        let (lo_v, hi_v) = (b.lower.v.get(node), b.upper.v.get(node));
        let spec = self.spec;
        let eps = self.eps;
        if s < lo_u {
            let v = h_eps_raw(
                spec,
                eps,
                lo_u,
                lo_v,
                b.lower.grad_u.at(node),
                b.lower.grad_v.at(node),
            );
            (v, Branch::FrozenLower)
        } else if s > hi_u {
            // frozen upper pair; the second gradient argument is grad(v_upper)
            let v = h_eps_raw(
                spec,
                eps,
                hi_u,
                hi_v,
                b.upper.grad_u.at(node),
                b.upper.grad_v.at(node),
            );
            (v, Branch::FrozenUpper)
        } else if t < lo_v {
            let v = h_eps_raw(spec, eps, s, lo_v, eta, b.lower.grad_v.at(node));
            (v, Branch::SecondLow)
        } else if t > hi_v {
            let v = h_eps_raw(spec, eps, s, hi_v, eta, b.upper.grad_v.at(node));
            (v, Branch::SecondHigh)
        } else {
            (h_eps_raw(spec, eps, s, t, eta, xi), Branch::Middle)
        }
    }

    pub fn h1_eval(&self, node: usize, s: f64, t: f64, eta: &[f64], xi: &[f64]) -> f64 {
        self.h1_eval_with_branch(node, s, t, eta, xi).0
    }

    /// Truncated v-equation nonlinearity G1: branches on t first, then on s.
    pub fn g1_eval_with_branch(
        &self,
        node: usize,
        s: f64,
        t: f64,
        eta: &[f64],
        xi: &[f64],
    ) -> (f64, Branch) {
        let b = self.bounds;
        let (lo_u, hi_u) = (b.lower.u.get(node), b.upper.u.get(node));
        let (lo_v, hi_v) = (b.lower.v.get(node), b.upper.v.get(node));
        let spec = self.spec;
        let eps = self.eps;
        if t < lo_v {
            let v = g_eps_raw(
                spec,
                eps,
                lo_u,
                lo_v,
                b.lower.grad_u.at(node),
                b.lower.grad_v.at(node),
            );
            (v, Branch::FrozenLower)
        } else if t > hi_v {
            let v = g_eps_raw(
                spec,
                eps,
                hi_u,
                hi_v,
                b.upper.grad_u.at(node),
                b.upper.grad_v.at(node),
            );
            (v, Branch::FrozenUpper)
        } else if s < lo_u {
            let v = g_eps_raw(spec, eps, lo_u, t, b.lower.grad_u.at(node), xi);
            (v, Branch::SecondLow)
        } else if s > hi_u {
            let v = g_eps_raw(spec, eps, hi_u, t, b.upper.grad_u.at(node), xi);
            (v, Branch::SecondHigh)
        } else {
            (g_eps_raw(spec, eps, s, t, eta, xi), Branch::Middle)
        }
    }

    pub fn g1_eval(&self, node: usize, s: f64, t: f64, eta: &[f64], xi: &[f64]) -> f64 {
        self.g1_eval_with_branch(node, s, t, eta, xi).0
    }

    /// H2 = H1 - gamma1(x, s).
    pub fn h2_eval(&self, node: usize, s: f64, t: f64, eta: &[f64], xi: &[f64]) -> f64 {
        let b = self.bounds;
        self.h1_eval(node, s, t, eta, xi)
            - gamma(self.spec.penalty_exponent, b.lower.u.get(node), b.upper.u.get(node), s)
    }

    /// G2 = G1 - gamma2(x, t).
    pub fn g2_eval(&self, node: usize, s: f64, t: f64, eta: &[f64], xi: &[f64]) -> f64 {
        let b = self.bounds;
        self.g1_eval(node, s, t, eta, xi)
            - gamma(self.spec.penalty_exponent, b.lower.v.get(node), b.upper.v.get(node), t)
    }

    /// Penalty values at one node for a state value pair.
    pub fn penalties(&self, node: usize, s: f64, t: f64) -> (f64, f64) {
        let b = self.bounds;
        let l = self.spec.penalty_exponent;
        (
            gamma(l, b.lower.u.get(node), b.upper.u.get(node), s),
            gamma(l, b.lower.v.get(node), b.upper.v.get(node), t),
        )
    }
}
