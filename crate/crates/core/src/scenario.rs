//! Declarative scenario files (flat `key = value` documents with dotted
//! sections) and the full pipeline they drive: grid, eigenpair, bounds,
//! continuation, invariant gates, and artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::{
    self, BoundsPair, ConvectionKind, ConvectionSpec, ProblemSpec, Supersolution,
    SupersolutionForm, SystemSign, DEFAULT_BALL_FACTOR,
};
use crate::continuation::{
    self, ContinuationReport, ContinuationSchedule, APRIORI_GATE, ORDERING_GATE, PENALTY_GATE,
};
use crate::error::{Error, Result};
use crate::grid::{DomainKind, Grid, GridDescriptor, ScalarField};
use crate::report;
use crate::solver::{SolveMethod, SolverConfig, StatePair};
use crate::spectral::{self, EigenPair};
use crate::truncation::{self, NonlinearityContext};

/// Fully validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub domain: GridDescriptor,
    pub spec: ProblemSpec,
    pub schedule: ContinuationSchedule,
    pub solver: SolverConfig,
    pub torsion_radius_factor: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
}

const KNOWN_KEYS: &[&str] = &[
    "domain.kind",
    "domain.origin",
    "domain.extents",
    "domain.resolution",
    "spec.alpha1",
    "spec.alpha2",
    "spec.beta1",
    "spec.beta2",
    "spec.sign",
    "spec.penalty_exponent",
    "spec.g1.kind",
    "spec.g1.amplitude",
    "spec.g2.kind",
    "spec.g2.amplitude",
    "schedule",
    "solver.theta",
    "solver.tol",
    "solver.max_iter",
    "solver.method",
    "torsion.radius_factor",
    "output.dir",
    "seed",
];

struct Entry {
    line: usize,
    value: String,
}

struct Violations(Vec<String>);

impl Violations {
    fn push(&mut self, line: usize, msg: impl AsRef<str>) {
        self.0.push(format!("line {line}: {}", msg.as_ref()));
    }
}

/// Parses and validates a scenario document, reporting every violation at
/// once with its line number. Unknown keys are fatal.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let mut entries: Vec<(String, Entry)> = Vec::new();
    let mut violations = Violations(Vec::new());

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        }
        .trim();
        if stripped.is_empty() {
            continue;
        }
        let Some((key, value)) = stripped.split_once('=') else {
            violations.push(line, format!("expected `key = value`, got {stripped:?}"));
            continue;
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            violations.push(line, format!("unknown key '{key}'"));
            continue;
        }
        if entries.iter().any(|(k, _)| *k == key) {
            violations.push(line, format!("duplicate key '{key}'"));
            continue;
        }
        entries.push((key, Entry { line, value }));
    }

    let lookup = |key: &str| entries.iter().find(|(k, _)| k == key).map(|(_, e)| e);

    let f64_at = |vs: &mut Violations, key: &str, default: f64| -> (f64, usize) {
        match lookup(key) {
            Some(e) => match e.value.parse::<f64>() {
                Ok(v) => (v, e.line),
                Err(_) => {
                    vs.push(e.line, format!("{key} must be a number, got {:?}", e.value));
                    (default, e.line)
                }
            },
            None => (default, 0),
        }
    };

    // domain
    let kind = match lookup("domain.kind") {
        Some(e) => match e.value.as_str() {
            "interval" => Some(DomainKind::Interval),
            "rectangle" => Some(DomainKind::Rectangle),
            "disc" => Some(DomainKind::Disc),
            other => {
                violations.push(
                    e.line,
                    format!("domain.kind must be interval|rectangle|disc, got {other:?}"),
                );
                None
            }
        },
        None => {
            violations.push(0, "missing required key domain.kind");
            None
        }
    };
    let float_list = |vs: &mut Violations, key: &str| -> Option<Vec<f64>> {
        let e = lookup(key)?;
        let mut out = Vec::new();
        for part in e.value.split(',') {
            match part.trim().parse::<f64>() {
                Ok(v) => out.push(v),
                Err(_) => {
                    vs.push(e.line, format!("{key} entries must be numbers, got {part:?}"));
                    return None;
                }
            }
        }
        Some(out)
    };
    let extents = float_list(&mut violations, "domain.extents");
    if extents.is_none() && lookup("domain.extents").is_none() {
        violations.push(0, "missing required key domain.extents");
    }
    let origin = float_list(&mut violations, "domain.origin");
    let resolution: Option<Vec<usize>> = match lookup("domain.resolution") {
        Some(e) => {
            let mut out = Vec::new();
            let mut ok = true;
            for part in e.value.split(',') {
                match part.trim().parse::<usize>() {
                    Ok(v) => out.push(v),
                    Err(_) => {
                        violations.push(
                            e.line,
                            format!("domain.resolution entries must be integers, got {part:?}"),
                        );
                        ok = false;
                    }
                }
            }
            ok.then_some(out)
        }
        None => {
            violations.push(0, "missing required key domain.resolution");
            None
        }
    };

    // problem spec
    let (alpha1, l_a1) = f64_at(&mut violations, "spec.alpha1", 0.5);
    let (alpha2, l_a2) = f64_at(&mut violations, "spec.alpha2", 0.5);
    let (beta1, l_b1) = f64_at(&mut violations, "spec.beta1", 0.5);
    let (beta2, l_b2) = f64_at(&mut violations, "spec.beta2", 0.5);
    for (name, v, line) in [
        ("alpha1", alpha1, l_a1),
        ("alpha2", alpha2, l_a2),
        ("beta1", beta1, l_b1),
        ("beta2", beta2, l_b2),
    ] {
        if !(0.0..1.0).contains(&v) {
            violations.push(line, format!("{name} must lie in [0,1), got {v}"));
        }
    }
    let (penalty, l_pen) = f64_at(&mut violations, "spec.penalty_exponent", 0.5);
    if !(penalty > 0.0 && penalty < 1.0) {
        violations.push(l_pen, format!("penalty_exponent must lie in (0,1), got {penalty}"));
    }
    let sign = match lookup("spec.sign") {
        Some(e) => match e.value.as_str() {
            "plus" => SystemSign::Plus,
            "minus" => SystemSign::Minus,
            other => {
                violations.push(e.line, format!("spec.sign must be plus|minus, got {other:?}"));
                SystemSign::Minus
            }
        },
        None => SystemSign::Minus,
    };
    let mut convection = |which: &str| -> ConvectionSpec {
        let kind_key = format!("spec.{which}.kind");
        let kind = match lookup(&kind_key) {
            Some(e) => match e.value.as_str() {
                "constant" => ConvectionKind::Constant,
                "gaussian-decay" => ConvectionKind::GaussianDecay,
                "rational-decay" => ConvectionKind::RationalDecay,
                other => {
                    violations.push(
                        e.line,
                        format!(
                            "{kind_key} must be constant|gaussian-decay|rational-decay, got {other:?}"
                        ),
                    );
                    ConvectionKind::Constant
                }
            },
            None => ConvectionKind::Constant,
        };
        let (amplitude, line) =
            f64_at(&mut violations, &format!("spec.{which}.amplitude"), 0.0);
        if !(amplitude >= 0.0) {
            violations.push(line, format!("{which} amplitude must be nonnegative, got {amplitude}"));
        }
        ConvectionSpec { kind, amplitude: amplitude.max(0.0) }
    };
    let g1 = convection("g1");
    let g2 = convection("g2");

    // schedule
    let schedule = match lookup("schedule") {
        Some(e) => {
            let mut ns = Vec::new();
            let mut ok = true;
            for part in e.value.split(',') {
                match part.trim().parse::<u32>() {
                    Ok(v) => ns.push(v),
                    Err(_) => {
                        violations
                            .push(e.line, format!("schedule entries must be integers, got {part:?}"));
                        ok = false;
                    }
                }
            }
            if ok {
                match ContinuationSchedule::new(ns) {
                    Ok(s) => Some(s),
                    Err(err) => {
                        violations.push(e.line, err.to_string());
                        None
                    }
                }
            } else {
                None
            }
        }
        None => Some(ContinuationSchedule::default()),
    };

    // solver
    let (theta, l_theta) = f64_at(&mut violations, "solver.theta", 0.5);
    if !(theta > 0.0 && theta <= 1.0) {
        violations.push(l_theta, format!("theta must lie in (0,1], got {theta}"));
    }
    let (tol, l_tol) = f64_at(&mut violations, "solver.tol", 1e-10);
    if !(tol > 0.0) {
        violations.push(l_tol, format!("tol must be positive, got {tol}"));
    }
    let max_iter = match lookup("solver.max_iter") {
        Some(e) => match e.value.parse::<usize>() {
            Ok(v) => v,
            Err(_) => {
                violations
                    .push(e.line, format!("solver.max_iter must be an integer, got {:?}", e.value));
                2000
            }
        },
        None => 2000,
    };
    let method = match lookup("solver.method") {
        Some(e) => match e.value.as_str() {
            "picard" => SolveMethod::Picard,
            "dense-newton" => SolveMethod::DenseNewton,
            other => {
                violations.push(
                    e.line,
                    format!("solver.method must be picard|dense-newton, got {other:?}"),
                );
                SolveMethod::Picard
            }
        },
        None => SolveMethod::Picard,
    };

    let (ball_factor, l_ball) =
        f64_at(&mut violations, "torsion.radius_factor", DEFAULT_BALL_FACTOR);
    if ball_factor < DEFAULT_BALL_FACTOR - 1e-12 {
        violations.push(
            l_ball,
            format!(
                "torsion.radius_factor must be at least {DEFAULT_BALL_FACTOR} \
                 (clearance of 25% of the target diameter), got {ball_factor}"
            ),
        );
    }
    let output_dir = lookup("output.dir")
        .map(|e| PathBuf::from(&e.value))
        .unwrap_or_else(|| PathBuf::from("out"));
    let seed = match lookup("seed") {
        Some(e) => match e.value.parse::<u64>() {
            Ok(v) => v,
            Err(_) => {
                violations.push(e.line, format!("seed must be an integer, got {:?}", e.value));
                0
            }
        },
        None => 0,
    };

    // assemble the grid descriptor and validate geometry
    let domain = match (kind, extents, resolution) {
        (Some(kind), Some(extents), Some(resolution)) => {
            let origin = origin.unwrap_or_else(|| vec![0.0; extents.len()]);
            let desc = GridDescriptor { kind, origin, extents, resolution };
            match Grid::from_descriptor(&desc) {
                Ok(_) => Some(desc),
                Err(e) => {
                    violations.push(0, e.to_string());
                    None
                }
            }
        }
        _ => None,
    };

    if !violations.0.is_empty() {
        return Err(Error::Config(violations.0));
    }
    let spec = ProblemSpec::new(alpha1, alpha2, beta1, beta2, sign, penalty, g1, g2)
        .map_err(|e| Error::Config(vec![e.to_string()]))?;
    Ok(ScenarioConfig {
        domain: domain.expect("validated above"),
        spec,
        schedule: schedule.expect("validated above"),
        solver: SolverConfig { theta, tol, max_iter, method },
        torsion_radius_factor: ball_factor,
        output_dir,
        seed,
    })
}

/// Reads and parses a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    parse_scenario(&fs::read_to_string(path)?)
}

/// One invariant gate of a pipeline run.
#[derive(Debug, Clone, Serialize)]
pub struct GateResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Overall status of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RunStatus {
    Pass,
    /// the first failed invariant gate, by name
    GateFailure(String),
    SolverFailure(String),
}

impl RunStatus {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunStatus::Pass => 0,
            RunStatus::GateFailure(_) => 2,
            RunStatus::SolverFailure(_) => 3,
        }
    }
}

/// Everything a pipeline run produces besides the files on disk.
#[derive(Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub gates: Vec<GateResult>,
    pub lambda1: f64,
    pub delta: f64,
    pub m_scale: f64,
    pub supersolution_form: SupersolutionForm,
    pub report: ContinuationReport,
    pub final_state: Option<StatePair>,
    pub summary: String,
}

/// Pipeline stages shared by the CLI subcommands.
pub struct PipelineSetup {
    pub grid: Grid,
    pub eigen: EigenPair,
    pub bounds: BoundsPair,
    pub torsion_e: Option<ScalarField>,
}

/// Builds grid, eigenpair, subsolution, and supersolution (with the torsion
/// function when the constant form is unavailable or the sign demands it).
pub fn build_pipeline(config: &ScenarioConfig) -> Result<PipelineSetup> {
    let grid = Grid::from_descriptor(&config.domain)?;
    let eigen = spectral::first_eigenpair(&grid, 1e-10, 500)?;
    let eps_max = config.schedule.eps_max();
    let (delta, sub) = bounds::build_subsolution(&grid, &config.spec, &eigen, eps_max)?;

    let (supersolution, torsion_e): (Supersolution, Option<ScalarField>) =
        bounds::build_supersolution_lazy(&grid, &config.spec, &sub, || {
            let ball = bounds::enclosing_ball_grid(&grid, config.torsion_radius_factor)?;
            bounds::torsion_function(&ball, &grid)
        })?;
    let bounds = BoundsPair::new(
        &grid,
        sub,
        supersolution.pair,
        delta,
        supersolution.m,
        supersolution.form,
    )?;
    Ok(PipelineSetup { grid, eigen, bounds, torsion_e })
}

/// Runs the whole pipeline, writes all artifacts under the configured output
/// directory, and evaluates every invariant gate. Exit 0 iff all gates pass.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutcome> {
    let out_dir = &config.output_dir;
    fs::create_dir_all(out_dir)?;

    let setup = build_pipeline(config)?;
    let grid = &setup.grid;
    let bounds = &setup.bounds;

    report::write_grid_json(&out_dir.join("grid.json"), grid)?;
    report::write_field_csv(&out_dir.join("phi1.csv"), &setup.eigen.phi1)?;
    report::write_field_csv(&out_dir.join("u_lower.csv"), &bounds.lower.u)?;
    report::write_field_csv(&out_dir.join("v_lower.csv"), &bounds.lower.v)?;
    report::write_field_csv(&out_dir.join("u_upper.csv"), &bounds.upper.u)?;
    report::write_field_csv(&out_dir.join("v_upper.csv"), &bounds.upper.v)?;
    if let Some(e) = &setup.torsion_e {
        report::write_field_csv(&out_dir.join("torsion_e.csv"), e)?;
    }

    let mut gates: Vec<GateResult> = Vec::new();
    let mut gate = |name: &str, passed: bool, detail: String| {
        gates.push(GateResult { name: name.to_string(), passed, detail });
    };

    // eps-uniform certificates, re-checked explicitly at every scheduled eps
    let mut sub_worst = f64::INFINITY;
    let mut sub_ok = true;
    for eps in config.schedule.eps_values() {
        let cert = bounds::verify_subsolution(grid, &config.spec, &bounds.lower, eps)?;
        sub_ok &= cert.passed;
        sub_worst = sub_worst.min(cert.worst_margin);
    }
    gate(
        "subsolution-certificates",
        sub_ok,
        format!("worst margin {sub_worst:.3e} over the schedule"),
    );
    let mut sup_worst = f64::INFINITY;
    let mut sup_ok = true;
    for eps in std::iter::once(0.0).chain(config.schedule.eps_values()) {
        let cert = bounds::verify_supersolution(grid, &config.spec, &bounds.upper, eps)?;
        sup_ok &= cert.passed;
        sup_worst = sup_worst.min(cert.worst_margin);
    }
    gate(
        "supersolution-certificates",
        sup_ok,
        format!("worst margin {sup_worst:.3e} incl. eps = 0"),
    );

    // continuation ladder
    let outcome =
        continuation::run_continuation(grid, &config.spec, bounds, &config.schedule, &config.solver)?;
    let rep = &outcome.report;
    gate(
        "rungs-converged",
        rep.completed,
        rep.failure.clone().unwrap_or_else(|| format!("{} rungs", rep.rungs.len())),
    );

    for (k, state) in outcome.rung_states.iter().enumerate() {
        let n = rep.rungs[k].n;
        report::write_field_csv(&out_dir.join(format!("rung_n{n}_u.csv")), &state.u)?;
        report::write_field_csv(&out_dir.join(format!("rung_n{n}_v.csv")), &state.v)?;
    }
    if let Some(state) = &outcome.final_state {
        report::write_field_csv(&out_dir.join("final_u.csv"), &state.u)?;
        report::write_field_csv(&out_dir.join("final_v.csv"), &state.v)?;
    }
    report::write_json(&out_dir.join("continuation_report.json"), rep)?;
    fs::write(out_dir.join("convergence.csv"), report::convergence_csv(rep))?;

    let worst_ordering = rep
        .rungs
        .iter()
        .filter_map(|r| r.solve.ordering.map(|o| o.max()))
        .fold(0.0f64, f64::max);
    gate(
        "band-confinement",
        rep.completed && worst_ordering <= ORDERING_GATE,
        format!("worst violation {worst_ordering:.3e} (gate {ORDERING_GATE:.0e})"),
    );

    let worst_penalty = rep
        .rungs
        .iter()
        .filter_map(|r| r.solve.penalty_max.map(|(a, b)| a.max(b)))
        .fold(0.0f64, f64::max);
    gate(
        "penalty-inactive",
        rep.completed && worst_penalty <= PENALTY_GATE,
        format!("worst |gamma| {worst_penalty:.3e} (gate {PENALTY_GATE:.0e})"),
    );

    let worst_slack = rep
        .rungs
        .iter()
        .map(|r| r.apriori_slack_u.min(r.apriori_slack_v))
        .fold(f64::INFINITY, f64::min);
    gate(
        "apriori-slacks",
        rep.completed && worst_slack >= APRIORI_GATE,
        format!("worst slack {worst_slack:.3e} (gate {APRIORI_GATE:.0e})"),
    );

    // Cauchy tail: strictly decreasing over the last three rung pairs, or
    // already flattened below 10x the solver tolerance
    let c = &rep.cauchy_differences;
    let cauchy_ok = if c.len() < 3 {
        true
    } else {
        let tail = &c[c.len() - 3..];
        tail.windows(2).all(|w| w[1] < w[0]) || tail.iter().all(|&d| d <= 10.0 * config.solver.tol)
    };
    gate("cauchy-tail", rep.completed && cauchy_ok, format!("tail {c:?}"));

    let raw = rep.final_raw_residual.unwrap_or(f64::INFINITY);
    gate(
        "raw-residual",
        rep.completed && raw <= 10.0 * config.solver.tol,
        format!("final raw-system residual {raw:.3e}"),
    );

    // seeded spot check of the truncation band identity on this grid
    let band_failures = band_identity_sample(grid, &config.spec, bounds, config.seed)?;
    gate(
        "band-identity-sample",
        band_failures == 0,
        format!("{band_failures} failures over the sampled band points"),
    );

    let status = if !rep.completed {
        let msg = rep.failure.clone().unwrap_or_default();
        if msg.contains("did not converge") {
            RunStatus::SolverFailure(msg)
        } else {
            RunStatus::GateFailure("band-confinement".into())
        }
    } else {
        match gates.iter().find(|g| !g.passed) {
            Some(g) => RunStatus::GateFailure(g.name.clone()),
            None => RunStatus::Pass,
        }
    };

    let summary = render_summary(config, &setup, &gates, &outcome, &status);
    fs::write(out_dir.join("summary.txt"), &summary)?;
    report::write_json(&out_dir.join("gates.json"), &gates)?;

    Ok(RunOutcome {
        status,
        gates,
        lambda1: setup.eigen.lambda1,
        delta: bounds.delta,
        m_scale: bounds.m_scale,
        supersolution_form: bounds.form,
        report: outcome.report,
        final_state: outcome.final_state,
        summary,
    })
}

/// Randomized in-band sampling of the truncation identities H2 = H1 = H_eps
/// and G2 = G1 = G_eps; returns the number of failures.
fn band_identity_sample(
    grid: &Grid,
    spec: &ProblemSpec,
    bounds: &BoundsPair,
    seed: u64,
) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 0.5;
    let ctx = NonlinearityContext::new(spec, bounds, eps)?;
    let mut failures = 0usize;
    let interior: Vec<usize> = grid.interior_nodes().collect();
    let nodes = interior.len().min(64);
    for k in 0..nodes {
        let node = interior[k * interior.len() / nodes];
        let (lo_u, hi_u) = (bounds.lower.u.get(node), bounds.upper.u.get(node));
        let (lo_v, hi_v) = (bounds.lower.v.get(node), bounds.upper.v.get(node));
        for _ in 0..32 {
            let s = rng.gen_range(lo_u..=hi_u);
            let t = rng.gen_range(lo_v..=hi_v);
            let eta = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let xi = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let (eta, xi) = (&eta[..grid.dim()], &xi[..grid.dim()]);
            let raw_h = truncation::h_eps(spec, eps, s, t, eta, xi)?;
            let raw_g = truncation::g_eps(spec, eps, s, t, eta, xi)?;
            if ctx.h1_eval(node, s, t, eta, xi) != raw_h
                || ctx.h2_eval(node, s, t, eta, xi) != raw_h
                || ctx.g1_eval(node, s, t, eta, xi) != raw_g
                || ctx.g2_eval(node, s, t, eta, xi) != raw_g
            {
                failures += 1;
            }
        }
    }
    Ok(failures)
}

fn render_summary(
    config: &ScenarioConfig,
    setup: &PipelineSetup,
    gates: &[GateResult],
    outcome: &continuation::ContinuationOutcome,
    status: &RunStatus,
) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let rep = &outcome.report;
    let _ = writeln!(s, "domain: {:?} {:?} @ {:?}", config.domain.kind, config.domain.extents, config.domain.resolution);
    let _ = writeln!(s, "sign: {:?}", config.spec.sign);
    let _ = writeln!(s, "lambda1: {}", setup.eigen.lambda1);
    let _ = writeln!(s, "delta: {}", setup.bounds.delta);
    let _ = writeln!(
        s,
        "M: {} ({})",
        setup.bounds.m_scale,
        match setup.bounds.form {
            SupersolutionForm::Constant => "constant form",
            SupersolutionForm::Torsion => "torsion form",
        }
    );
    if let Some(last) = rep.rungs.last() {
        let _ = writeln!(s, "final residual: {}", last.solve.final_residual);
    }
    if let Some(raw) = rep.final_raw_residual {
        let _ = writeln!(s, "final raw-system residual: {raw}");
    }
    let worst_ordering = rep
        .rungs
        .iter()
        .filter_map(|r| r.solve.ordering.map(|o| o.max()))
        .fold(0.0f64, f64::max);
    let _ = writeln!(s, "worst ordering margin: {worst_ordering}");
    let tail: Vec<f64> = rep
        .cauchy_differences
        .iter()
        .rev()
        .take(3)
        .rev()
        .cloned()
        .collect();
    let _ = writeln!(s, "cauchy tail: {tail:?}");
    for g in gates {
        let _ = writeln!(s, "gate {}: {} ({})", g.name, if g.passed { "PASS" } else { "FAIL" }, g.detail);
    }
    let _ = writeln!(
        s,
        "status: {}",
        match status {
            RunStatus::Pass => "PASS".to_string(),
            RunStatus::GateFailure(g) => format!("GATE FAILURE: {g}"),
            RunStatus::SolverFailure(m) => format!("SOLVER FAILURE: {m}"),
        }
    );
    s
}
