//! Construction and certification of the eps-uniform sub/supersolution pairs:
//! eigenfunction subsolutions (delta phi1, delta phi1), constant supersolutions
//! (M, M) with a torsion-function fallback (M e, M e), and the nodewise
//! certificates behind them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DomainKind, Grid, ScalarField, VectorField};
use crate::spectral::EigenPair;
use crate::truncation;

/// Sign of the reaction power term: -Lap u = 1/v^a1 (+|-) v^b1 + g1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemSign {
    Plus,
    Minus,
}

impl SystemSign {
    /// +1 or -1 multiplier for the power term.
    pub fn factor(self) -> f64 {
        match self {
            SystemSign::Plus => 1.0,
            SystemSign::Minus => -1.0,
        }
    }
}

/// Shape of a bounded convection term g(eta, xi) >= 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvectionKind {
    /// g = c
    Constant,
    /// g = c exp(-|eta|^2 - |xi|^2)
    GaussianDecay,
    /// g = c / (1 + |eta| + |xi|)
    RationalDecay,
}

/// A convection term from the bounded registry; its sup norm is exactly the
/// amplitude for all three kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvectionSpec {
    pub kind: ConvectionKind,
    pub amplitude: f64,
}

impl ConvectionSpec {
    pub fn new(kind: ConvectionKind, amplitude: f64) -> Result<Self> {
        if !(amplitude >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "convection amplitude must be nonnegative, got {amplitude}"
            )));
        }
        Ok(ConvectionSpec { kind, amplitude })
    }

    pub fn zero() -> Self {
        ConvectionSpec { kind: ConvectionKind::Constant, amplitude: 0.0 }
    }

    pub fn eval(&self, eta: &[f64], xi: &[f64]) -> f64 {
        let sq = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>();
        match self.kind {
            ConvectionKind::Constant => self.amplitude,
            ConvectionKind::GaussianDecay => self.amplitude * (-(sq(eta) + sq(xi))).exp(),
            ConvectionKind::RationalDecay => {
                self.amplitude / (1.0 + sq(eta).sqrt() + sq(xi).sqrt())
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.amplitude
    }
}

/// Exponents, sign, penalty exponent, and the two convection terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub sign: SystemSign,
    pub penalty_exponent: f64,
    pub g1: ConvectionSpec,
    pub g2: ConvectionSpec,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        alpha1: f64,
        alpha2: f64,
        beta1: f64,
        beta2: f64,
        sign: SystemSign,
        penalty_exponent: f64,
        g1: ConvectionSpec,
        g2: ConvectionSpec,
    ) -> Result<Self> {
        for (name, v) in [("alpha1", alpha1), ("alpha2", alpha2), ("beta1", beta1), ("beta2", beta2)]
        {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0,1), got {v}"
                )));
            }
        }
        if !(penalty_exponent > 0.0 && penalty_exponent < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "penalty_exponent must lie in (0,1), got {penalty_exponent}"
            )));
        }
        Ok(ProblemSpec { alpha1, alpha2, beta1, beta2, sign, penalty_exponent, g1, g2 })
    }
}

/// A (u, v) pair of fields together with their precomputed gradients.
#[derive(Debug, Clone)]
pub struct FieldPair {
    pub u: ScalarField,
    pub v: ScalarField,
    pub grad_u: VectorField,
    pub grad_v: VectorField,
}

impl FieldPair {
    pub fn new(grid: &Grid, u: ScalarField, v: ScalarField) -> Result<Self> {
        let grad_u = grid.gradient(&u)?;
        let grad_v = grid.gradient(&v)?;
        Ok(FieldPair { u, v, grad_u, grad_v })
    }
}

/// How the supersolution was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupersolutionForm {
    Constant,
    Torsion,
}

/// The ordered sub/supersolution quadruple with its construction scales.
#[derive(Debug, Clone)]
pub struct BoundsPair {
    pub lower: FieldPair,
    pub upper: FieldPair,
    /// subsolution scale: lower pair is (delta phi1, delta phi1)
    pub delta: f64,
    /// supersolution scale M
    pub m_scale: f64,
    pub form: SupersolutionForm,
}

impl BoundsPair {
    /// Checks positivity of the lower pair at interior nodes, zero boundary
    /// values of the lower pair, nonnegative boundary values of the upper
    /// pair, and the nodewise ordering lower <= upper.
    pub fn new(
        grid: &Grid,
        lower: FieldPair,
        upper: FieldPair,
        delta: f64,
        m_scale: f64,
        form: SupersolutionForm,
    ) -> Result<Self> {
        for n in 0..grid.node_count() {
            if grid.is_interior(n) {
                if lower.u.get(n) <= 0.0 || lower.v.get(n) <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "subsolution not strictly positive at interior node {n}"
                    )));
                }
            } else {
                if lower.u.get(n) != 0.0 || lower.v.get(n) != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "subsolution nonzero at boundary node {n}"
                    )));
                }
                if upper.u.get(n) < 0.0 || upper.v.get(n) < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "supersolution negative at boundary node {n}"
                    )));
                }
            }
            if lower.u.get(n) > upper.u.get(n) || lower.v.get(n) > upper.v.get(n) {
                return Err(Error::InvalidParameter(format!(
                    "ordering violated at node {n}"
                )));
            }
        }
        Ok(BoundsPair { lower, upper, delta, m_scale, form })
    }

    /// Skips the invariant checks. For solver tests with synthetic bands
    /// (e.g. constant bounds that do not vanish on the boundary).
    pub fn new_unchecked(
        lower: FieldPair,
        upper: FieldPair,
        delta: f64,
        m_scale: f64,
        form: SupersolutionForm,
    ) -> Self {
        BoundsPair { lower, upper, delta, m_scale, form }
    }
}

/// Nodewise certificate slack.
pub const CERT_SLACK: f64 = 1e-12;

/// Relative safety margin for the scalar supersolution dominance checks, so
/// the certificate slack is never consumed by factorization roundoff.
const BUILDER_MARGIN: f64 = 1e-6;

const SUBSOLUTION_BUDGET: usize = 60;
const SUPERSOLUTION_BUDGET: usize = 40;

/// Which equation of the system a certificate entry refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Equation {
    U,
    V,
}

/// Outcome of a nodewise sub/supersolution certification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertReport {
    pub passed: bool,
    /// Worst inequality margin; nonnegative margins mean the inequality holds.
    pub worst_margin: f64,
    pub worst_node: usize,
    pub worst_equation: Equation,
}

fn certify(
    grid: &Grid,
    spec: &ProblemSpec,
    pair: &FieldPair,
    eps: f64,
    super_side: bool,
) -> Result<CertReport> {
    let lap_u = grid.laplacian(&pair.u)?;
    let lap_v = grid.laplacian(&pair.v)?;
    let mut worst = f64::INFINITY;
    let mut worst_node = 0;
    let mut worst_eq = Equation::U;
    for n in grid.interior_nodes() {
        let s = pair.u.get(n);
        let t = pair.v.get(n);
        let eta = pair.grad_u.at(n);
        let xi = pair.grad_v.at(n);
        let rhs_u = truncation::h_eps_raw(spec, eps, s, t, eta, xi);
        let rhs_v = truncation::g_eps_raw(spec, eps, s, t, eta, xi);
        let (m_u, m_v) = if super_side {
            (lap_u.get(n) - rhs_u, lap_v.get(n) - rhs_v)
        } else {
            (rhs_u - lap_u.get(n), rhs_v - lap_v.get(n))
        };
        if m_u < worst {
            worst = m_u;
            worst_node = n;
            worst_eq = Equation::U;
        }
        if m_v < worst {
            worst = m_v;
            worst_node = n;
            worst_eq = Equation::V;
        }
    }
    Ok(CertReport {
        passed: worst >= -CERT_SLACK,
        worst_margin: worst,
        worst_node,
        worst_equation: worst_eq,
    })
}

/// Checks -Lap u <= H_eps(x, u, v, grad u, grad v) (and the v equation) at
/// every interior node; the discrete weak inequality against nonnegative hat
/// functions is exactly this nodewise stencil inequality.
pub fn verify_subsolution(
    grid: &Grid,
    spec: &ProblemSpec,
    pair: &FieldPair,
    eps: f64,
) -> Result<CertReport> {
    certify(grid, spec, pair, eps, false)
}

/// Reversed inequalities of [`verify_subsolution`].
pub fn verify_supersolution(
    grid: &Grid,
    spec: &ProblemSpec,
    pair: &FieldPair,
    eps: f64,
) -> Result<CertReport> {
    certify(grid, spec, pair, eps, true)
}

/// Scales the eigenfunction pair (delta phi1, delta phi1) by halving delta
/// from 1 until the subsolution certificate passes at the eps-worst case
/// eps_max. Termination: the left side shrinks linearly in delta while the
/// regularized singular term stays bounded below by eps_max^(-alpha/2) > 0.
pub fn build_subsolution(
    grid: &Grid,
    spec: &ProblemSpec,
    eigen: &EigenPair,
    eps_max: f64,
) -> Result<(f64, FieldPair)> {
    if !(eps_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps_max must be positive, got {eps_max}"
        )));
    }
    let grad_phi = grid.gradient(&eigen.phi1)?;
    let mut delta = 1.0;
    for _ in 0..SUBSOLUTION_BUDGET {
        let field = eigen.phi1.scale(delta);
        let grad = grad_phi.scale(delta);
        let pair = FieldPair {
            u: field.clone(),
            v: field,
            grad_u: grad.clone(),
            grad_v: grad,
        };
        if verify_subsolution(grid, spec, &pair, eps_max)?.passed {
            return Ok((delta, pair));
        }
        delta *= 0.5;
    }
    Err(Error::SearchExhausted { what: "subsolution bisection", budget: SUBSOLUTION_BUDGET })
}

/// Builds (M, M) or (M e, M e) depending on the sign and on whether the
/// constant form can dominate, returning the accepted scale and form.
pub struct Supersolution {
    pub m: f64,
    pub pair: FieldPair,
    pub form: SupersolutionForm,
}

/// Doubles M until the supersolution certificate holds at the eps-worst case
/// eps = 0, where the raw singular term is largest; a pair certified there is
/// certified for every eps > 0. For sign minus the constant pair is tried
/// first and the torsion form is the fallback; sign plus goes straight to the
/// torsion form.
pub fn build_supersolution(
    grid: &Grid,
    spec: &ProblemSpec,
    sub: &FieldPair,
    torsion_e: Option<&ScalarField>,
) -> Result<Supersolution> {
    let m0 = 1.0f64.max(2.0 * sub.u.linf_norm().max(sub.v.linf_norm()));
    if spec.sign == SystemSign::Minus {
        if let Some(m) = try_constant(grid, spec, m0)? {
            let field = grid.constant(m);
            let pair = FieldPair::new(grid, field.clone(), field)?;
            return Ok(Supersolution { m, pair, form: SupersolutionForm::Constant });
        }
    }
    let e = torsion_e.ok_or_else(|| {
        Error::InvalidParameter(
            "torsion function required: constant supersolution unavailable".into(),
        )
    })?;
    let (m, pair) = try_torsion(grid, spec, sub, e, m0)?;
    Ok(Supersolution { m, pair, form: SupersolutionForm::Torsion })
}

/// Like [`build_supersolution`] but builds the torsion function on demand,
/// only when the constant form is unavailable or the sign requires it.
/// Returns the torsion field when one was built.
pub fn build_supersolution_lazy(
    grid: &Grid,
    spec: &ProblemSpec,
    sub: &FieldPair,
    torsion_builder: impl FnOnce() -> Result<ScalarField>,
) -> Result<(Supersolution, Option<ScalarField>)> {
    let m0 = 1.0f64.max(2.0 * sub.u.linf_norm().max(sub.v.linf_norm()));
    if spec.sign == SystemSign::Minus {
        if let Some(m) = try_constant(grid, spec, m0)? {
            let field = grid.constant(m);
            let pair = FieldPair::new(grid, field.clone(), field)?;
            return Ok((Supersolution { m, pair, form: SupersolutionForm::Constant }, None));
        }
    }
    let e = torsion_builder()?;
    let (m, pair) = try_torsion(grid, spec, sub, &e, m0)?;
    Ok((Supersolution { m, pair, form: SupersolutionForm::Torsion }, Some(e)))
}

fn try_constant(grid: &Grid, spec: &ProblemSpec, m0: f64) -> Result<Option<f64>> {
    let mut m = m0;
    for _ in 0..SUPERSOLUTION_BUDGET {
        let field = grid.constant(m);
        let pair = FieldPair::new(grid, field.clone(), field)?;
        if verify_supersolution(grid, spec, &pair, 0.0)?.passed {
            return Ok(Some(m));
        }
        m *= 2.0;
    }
    Ok(None)
}

fn try_torsion(
    grid: &Grid,
    spec: &ProblemSpec,
    sub: &FieldPair,
    e: &ScalarField,
    m0: f64,
) -> Result<(f64, FieldPair)> {
    if e.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let e_min = e.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let e_max = e.linf_norm();
    if !(e_min > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "torsion function must be strictly positive on the target, min {e_min}"
        )));
    }

    // scalar dominance: M >= (M e_min)^(-a) + (M e_max)^b + sup g, per equation;
    // the minus sign only weakens the right side, so the same check covers it
    let dominated = |m: f64| {
        let lhs = m * (1.0 - BUILDER_MARGIN);
        let rhs1 = (m * e_min).powf(-spec.alpha1)
            + (m * e_max).powf(spec.beta1)
            + spec.g1.sup_norm();
        let rhs2 = (m * e_min).powf(-spec.alpha2)
            + (m * e_max).powf(spec.beta2)
            + spec.g2.sup_norm();
        lhs >= rhs1.max(rhs2)
    };
    let ordered = |m: f64| {
        (0..grid.node_count())
            .all(|n| m * e.get(n) >= sub.u.get(n).max(sub.v.get(n)))
    };

    let mut m = m0;
    for _ in 0..SUPERSOLUTION_BUDGET {
        if dominated(m) && ordered(m) {
            let field = e.scale(m);
            let pair = FieldPair::new(grid, field.clone(), field)?;
            return Ok((m, pair));
        }
        m *= 2.0;
    }
    Err(Error::SearchExhausted { what: "supersolution doubling", budget: SUPERSOLUTION_BUDGET })
}

/// Required clearance between the target domain and the enclosing-ball
/// boundary, as a fraction of the target diameter.
pub const CLEARANCE_FRACTION: f64 = 0.25;

/// Default enclosing-ball radius as a multiple of the target circumradius.
/// 1.5 x circumradius gives exactly the required clearance of 25% of the
/// diameter for centrally symmetric targets.
pub const DEFAULT_BALL_FACTOR: f64 = 1.5;

/// Circumradius of the target domain (half diagonal for rectangles, radius
/// for discs, half length for intervals) and its diameter.
fn target_metrics(grid: &Grid) -> (f64, f64) {
    match grid.kind() {
        DomainKind::Interval => {
            let l = grid.extents()[0];
            (l / 2.0, l)
        }
        DomainKind::Rectangle => {
            let d = (grid.extents()[0].powi(2) + grid.extents()[1].powi(2)).sqrt();
            (d / 2.0, d)
        }
        DomainKind::Disc => {
            let r = 0.5 * grid.extents()[0].min(grid.extents()[1]);
            (r, 2.0 * r)
        }
    }
}

/// Builds the enclosing ball (disc in 2D, interval in 1D) for a target grid,
/// commensurate with the target lattice: same spacing, expanded by whole
/// cells. Nodal restriction from such a ball is exact, so the restricted
/// torsion function still satisfies -Lap e = 1 at target interior nodes.
pub fn enclosing_ball_grid(target: &Grid, radius_factor: f64) -> Result<Grid> {
    let (circum, _) = target_metrics(target);
    if !(radius_factor >= DEFAULT_BALL_FACTOR - 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "ball radius factor {radius_factor} below the clearance minimum {DEFAULT_BALL_FACTOR}"
        )));
    }
    let needed = radius_factor * circum;
    let dim = target.dim();
    let mut origin = vec![0.0; dim];
    let mut extents = vec![0.0; dim];
    let mut resolution = vec![0usize; dim];
    for d in 0..dim {
        let h = target.spacing()[d];
        let half = 0.5 * target.extents()[d];
        let pad_cells = ((needed - half) / h).ceil().max(1.0) as usize;
        origin[d] = target.origin()[d] - pad_cells as f64 * h;
        extents[d] = target.extents()[d] + 2.0 * pad_cells as f64 * h;
        resolution[d] = target.resolution()[d] + 2 * pad_cells;
    }
    let kind = if dim == 1 { DomainKind::Interval } else { DomainKind::Disc };
    Grid::build_at(kind, &origin, &extents, &resolution)
}

/// Solves -Lap e = 1 on the enclosing grid and restricts to the target nodes
/// by (bi)linear interpolation, which is exact when the lattices are aligned.
/// The result is strictly positive on every target node, boundary included.
pub fn torsion_function(ball: &Grid, target: &Grid) -> Result<ScalarField> {
    check_clearance(ball, target)?;
    let e_ball = ball.solve_poisson(&ball.constant(1.0))?;
    let mut out = target.zeros();
    for n in 0..target.node_count() {
        let coords = target.coords(n);
        let v = interpolate(&e_ball, &coords[..target.dim()])?;
        out.set(n, v);
    }
    let min = out.values().iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::Clearance(format!(
            "torsion function not strictly positive on the target (min {min:.3e}); \
             enclosing ball too tight"
        )));
    }
    Ok(out)
}

fn check_clearance(ball: &Grid, target: &Grid) -> Result<()> {
    if ball.dim() != target.dim() {
        return Err(Error::Clearance("dimension mismatch".into()));
    }
    let (_, diam) = target_metrics(target);
    let required = CLEARANCE_FRACTION * diam;
    // extreme points of the target domain: corners for intervals and
    // rectangles, circle support points for discs (the bounding box of a disc
    // overstates the domain)
    let corners: Vec<Vec<f64>> = match target.kind() {
        DomainKind::Interval => {
            let x0 = target.origin()[0];
            vec![vec![x0], vec![x0 + target.extents()[0]]]
        }
        DomainKind::Rectangle => {
            let (x0, y0) = (target.origin()[0], target.origin()[1]);
            let (ex, ey) = (target.extents()[0], target.extents()[1]);
            vec![
                vec![x0, y0],
                vec![x0 + ex, y0],
                vec![x0, y0 + ey],
                vec![x0 + ex, y0 + ey],
            ]
        }
        DomainKind::Disc => {
            let r = 0.5 * target.extents()[0].min(target.extents()[1]);
            let cx = target.origin()[0] + 0.5 * target.extents()[0];
            let cy = target.origin()[1] + 0.5 * target.extents()[1];
            (0..360)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / 360.0;
                    vec![cx + r * a.cos(), cy + r * a.sin()]
                })
                .collect()
        }
    };
    for c in &corners {
        let dist = match ball.kind() {
            DomainKind::Interval => {
                let lo = ball.origin()[0];
                let hi = lo + ball.extents()[0];
                (c[0] - lo).min(hi - c[0])
            }
            DomainKind::Disc => {
                let r = 0.5 * ball.extents()[0].min(ball.extents()[1]);
                let cx = ball.origin()[0] + 0.5 * ball.extents()[0];
                let cy = ball.origin()[1] + 0.5 * ball.extents()[1];
                r - ((c[0] - cx).powi(2) + (c[1] - cy).powi(2)).sqrt()
            }
            DomainKind::Rectangle => {
                let mut d = f64::INFINITY;
                for a in 0..2 {
                    let lo = ball.origin()[a];
                    let hi = lo + ball.extents()[a];
                    d = d.min((c[a] - lo).min(hi - c[a]));
                }
                d
            }
        };
        if dist < required - 1e-12 {
            return Err(Error::Clearance(format!(
                "target corner at distance {dist:.4} from the ball boundary, \
                 need at least {required:.4} (25% of the target diameter)"
            )));
        }
    }
    Ok(())
}

/// (Bi)linear interpolation of a field at an arbitrary point of its grid.
pub fn interpolate(field: &ScalarField, x: &[f64]) -> Result<f64> {
    let g = field.grid();
    let dim = g.dim();
    let mut base = [0usize; 2];
    let mut frac = [0.0f64; 2];
    for d in 0..dim {
        let u = (x[d] - g.origin()[d]) / g.spacing()[d];
        let n = g.resolution()[d];
        if u < -1e-9 || u > (n - 1) as f64 + 1e-9 {
            return Err(Error::InterpolationOutOfRange(x[0], if dim == 2 { x[1] } else { 0.0 }));
        }
        let i = (u.floor() as isize).clamp(0, n as isize - 2) as usize;
        base[d] = i;
        frac[d] = (u - i as f64).clamp(0.0, 1.0);
    }
    let nx = g.resolution()[0];
    if dim == 1 {
        let v0 = field.get(base[0]);
        let v1 = field.get(base[0] + 1);
        Ok(v0 + frac[0] * (v1 - v0))
    } else {
        let n00 = base[1] * nx + base[0];
        let (fx, fy) = (frac[0], frac[1]);
        let v = field.get(n00) * (1.0 - fx) * (1.0 - fy)
            + field.get(n00 + 1) * fx * (1.0 - fy)
            + field.get(n00 + nx) * (1.0 - fx) * fy
            + field.get(n00 + nx + 1) * fx * fy;
        Ok(v)
    }
}
