use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use subsuper::bounds;
use subsuper::continuation::{self, ContinuationSchedule};
use subsuper::error::Error;
use subsuper::report;
use subsuper::scenario::{self, RunStatus, ScenarioConfig};
use subsuper::solver::{self, SolveMethod, StatePair};
use subsuper::spectral;
use subsuper::truncation::NonlinearityContext;

/// Output-directory override; takes precedence over `output.dir`.
const OUT_DIR_ENV: &str = "SUBSUPER_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "subsuper",
    about = "Sub/supersolution continuation solver for singular elliptic systems with convection terms",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: grid, eigenpair, bounds, continuation, invariant gates.
    Run {
        scenario: PathBuf,
    },
    /// First Dirichlet eigenpair: prints lambda1, writes phi1.csv.
    Eigen {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
    },
    /// Torsion function of the auto-sized enclosing ball, restricted to the domain.
    Torsion {
        scenario: PathBuf,
    },
    /// Sub/supersolution construction: prints delta, M, margins, writes the four fields.
    Bounds {
        scenario: PathBuf,
    },
    /// One solve of the truncated-penalized system at a fixed eps.
    Solve {
        scenario: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        /// picard | dense-newton
        #[arg(long)]
        method: Option<String>,
    },
    /// Continuation ladder: per-rung fields, JSON report, convergence table.
    Continue {
        #[arg(long = "spec-file")]
        spec_file: PathBuf,
        /// comma-separated n values overriding the scenario schedule
        #[arg(long)]
        schedule: Option<String>,
    },
    /// Branch id and value of the truncations over an (s, t) lattice at one node.
    TruncationTable {
        scenario: PathBuf,
        #[arg(long)]
        node: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value_t = 21)]
        steps: usize,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::InvalidGrid(_)
        | Error::Clearance(_) => 4,
        Error::EigenNonConvergence { .. }
        | Error::SolverNonConvergence(_)
        | Error::LinearSolver(_) => 3,
        Error::GateFailed(_) | Error::SearchExhausted { .. } => 2,
        _ => 1,
    }
}

fn load(path: &PathBuf) -> Result<ScenarioConfig, Error> {
    let mut config = scenario::load_scenario(path)?;
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        config.output_dir = PathBuf::from(dir);
    }
    Ok(config)
}

fn run(command: Command) -> Result<u8, Error> {
    match command {
        Command::Run { scenario: path } => {
            let config = load(&path)?;
            let outcome = scenario::run_scenario(&config)?;
            print!("{}", outcome.summary);
            match &outcome.status {
                RunStatus::Pass => Ok(0),
                RunStatus::GateFailure(gate) => {
                    eprintln!("failed gate: {gate}");
                    Ok(2)
                }
                RunStatus::SolverFailure(msg) => {
                    eprintln!("solver failure: {msg}");
                    Ok(3)
                }
            }
        }
        Command::Eigen { scenario: path, tol, max_iters } => {
            let config = load(&path)?;
            let grid = subsuper::grid::Grid::from_descriptor(&config.domain)?;
            let pair = spectral::first_eigenpair(&grid, tol, max_iters)?;
            println!("lambda1 = {}", pair.lambda1);
            fs::create_dir_all(&config.output_dir)?;
            let out = config.output_dir.join("phi1.csv");
            report::write_field_csv(&out, &pair.phi1)?;
            println!("phi1 -> {}", out.display());
            Ok(0)
        }
        Command::Torsion { scenario: path } => {
            let config = load(&path)?;
            let grid = subsuper::grid::Grid::from_descriptor(&config.domain)?;
            let ball = bounds::enclosing_ball_grid(&grid, config.torsion_radius_factor)?;
            let e = bounds::torsion_function(&ball, &grid)?;
            let min = e.values().iter().cloned().fold(f64::INFINITY, f64::min);
            println!("ball extents = {:?}", ball.extents());
            println!("e min = {min}, e max = {}", e.linf_norm());
            fs::create_dir_all(&config.output_dir)?;
            let out = config.output_dir.join("torsion_e.csv");
            report::write_field_csv(&out, &e)?;
            println!("e -> {}", out.display());
            Ok(0)
        }
        Command::Bounds { scenario: path } => {
            let config = load(&path)?;
            let setup = scenario::build_pipeline(&config)?;
            let b = &setup.bounds;
            let sub_cert = bounds::verify_subsolution(
                &setup.grid,
                &config.spec,
                &b.lower,
                config.schedule.eps_max(),
            )?;
            let sup_cert =
                bounds::verify_supersolution(&setup.grid, &config.spec, &b.upper, 0.0)?;
            println!("delta = {}", b.delta);
            println!("M = {} ({:?})", b.m_scale, b.form);
            println!(
                "subsolution worst margin = {} at node {}",
                sub_cert.worst_margin, sub_cert.worst_node
            );
            println!(
                "supersolution worst margin = {} at node {}",
                sup_cert.worst_margin, sup_cert.worst_node
            );
            fs::create_dir_all(&config.output_dir)?;
            for (name, field) in [
                ("u_lower.csv", &b.lower.u),
                ("v_lower.csv", &b.lower.v),
                ("u_upper.csv", &b.upper.u),
                ("v_upper.csv", &b.upper.v),
            ] {
                report::write_field_csv(&config.output_dir.join(name), field)?;
            }
            println!("fields -> {}", config.output_dir.display());
            Ok(0)
        }
        Command::Solve { scenario: path, eps, theta, tol, max_iter, method } => {
            let mut config = load(&path)?;
            if let Some(t) = theta {
                config.solver.theta = t;
            }
            if let Some(t) = tol {
                config.solver.tol = t;
            }
            if let Some(m) = max_iter {
                config.solver.max_iter = m;
            }
            if let Some(m) = method {
                config.solver.method = match m.as_str() {
                    "picard" => SolveMethod::Picard,
                    "dense-newton" => SolveMethod::DenseNewton,
                    other => {
                        return Err(Error::InvalidParameter(format!(
                            "method must be picard|dense-newton, got {other:?}"
                        )))
                    }
                };
            }
            let setup = scenario::build_pipeline(&config)?;
            let ctx = NonlinearityContext::new(&config.spec, &setup.bounds, eps)?;
            let initial =
                StatePair::new(setup.bounds.lower.u.clone(), setup.bounds.lower.v.clone())?;
            let (state, rep) =
                solver::solve_system(&setup.grid, &ctx, &config.solver, &initial)?;
            println!(
                "converged = {}, iterations = {}, residual = {}",
                rep.converged, rep.iterations, rep.final_residual
            );
            fs::create_dir_all(&config.output_dir)?;
            report::write_field_csv(&config.output_dir.join("solve_u.csv"), &state.u)?;
            report::write_field_csv(&config.output_dir.join("solve_v.csv"), &state.v)?;
            report::write_json(&config.output_dir.join("solve_report.json"), &rep)?;
            println!("artifacts -> {}", config.output_dir.display());
            Ok(if rep.converged { 0 } else { 3 })
        }
        Command::Continue { spec_file, schedule } => {
            let mut config = load(&spec_file)?;
            if let Some(s) = schedule {
                let ns = s
                    .split(',')
                    .map(|p| p.trim().parse::<u32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| {
                        Error::InvalidParameter(format!("bad --schedule entry: {e}"))
                    })?;
                config.schedule = ContinuationSchedule::new(ns)?;
            }
            let setup = scenario::build_pipeline(&config)?;
            let out = continuation::run_continuation(
                &setup.grid,
                &config.spec,
                &setup.bounds,
                &config.schedule,
                &config.solver,
            )?;
            fs::create_dir_all(&config.output_dir)?;
            for (k, state) in out.rung_states.iter().enumerate() {
                let n = out.report.rungs[k].n;
                report::write_field_csv(
                    &config.output_dir.join(format!("rung_n{n}_u.csv")),
                    &state.u,
                )?;
                report::write_field_csv(
                    &config.output_dir.join(format!("rung_n{n}_v.csv")),
                    &state.v,
                )?;
            }
            report::write_json(
                &config.output_dir.join("continuation_report.json"),
                &out.report,
            )?;
            fs::write(
                config.output_dir.join("convergence.csv"),
                report::convergence_csv(&out.report),
            )?;
            println!(
                "completed = {}, rungs = {}",
                out.report.completed,
                out.report.rungs.len()
            );
            println!("artifacts -> {}", config.output_dir.display());
            Ok(if out.report.completed { 0 } else { 3 })
        }
        Command::TruncationTable { scenario: path, node, eps, steps } => {
            let config = load(&path)?;
            let setup = scenario::build_pipeline(&config)?;
            let grid = &setup.grid;
            let node = node.unwrap_or_else(|| grid.interior_node(grid.interior_count() / 2));
            if grid.interior_index(node).is_none() {
                return Err(Error::InvalidParameter(format!(
                    "node {node} is not an interior node"
                )));
            }
            let b = &setup.bounds;
            let ctx = NonlinearityContext::new(&config.spec, b, eps)?;
            let (lo_u, hi_u) = (b.lower.u.get(node), b.upper.u.get(node));
            let (lo_v, hi_v) = (b.lower.v.get(node), b.upper.v.get(node));
            let (s0, s1) = (lo_u - 1.0, hi_u + 1.0);
            let (t0, t1) = (lo_v - 1.0, hi_v + 1.0);
            let eta = vec![0.0; grid.dim()];
            let xi = vec![0.0; grid.dim()];
            let mut csv = String::from("s,t,h1_branch,h1,h2,g1_branch,g1,g2\n");
            for i in 0..steps {
                let s = s0 + (s1 - s0) * i as f64 / (steps - 1) as f64;
                for j in 0..steps {
                    let t = t0 + (t1 - t0) * j as f64 / (steps - 1) as f64;
                    let (h1, hb) = ctx.h1_eval_with_branch(node, s, t, &eta, &xi);
                    let h2 = ctx.h2_eval(node, s, t, &eta, &xi);
                    let (g1, gb) = ctx.g1_eval_with_branch(node, s, t, &eta, &xi);
                    let g2 = ctx.g2_eval(node, s, t, &eta, &xi);
                    let _ = writeln!(
                        csv,
                        "{s},{t},{},{h1},{h2},{},{g1},{g2}",
                        hb.id(),
                        gb.id()
                    );
                }
            }
            fs::create_dir_all(&config.output_dir)?;
            let out = config.output_dir.join(format!("truncation_table_node{node}.csv"));
            fs::write(&out, csv)?;
            println!("table -> {}", out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
