use subsuper::bounds::*;
use subsuper::continuation::*;
use subsuper::grid::*;
use subsuper::solver::*;
use subsuper::spectral::first_eigenpair;

fn main() {
    let grid = Grid::build(DomainKind::Interval, &[1.0], &[65]).unwrap();
    let spec = ProblemSpec::new(0.5, 0.5, 0.5, 0.5, SystemSign::Minus, 0.5,
        ConvectionSpec::new(ConvectionKind::GaussianDecay, 0.3).unwrap(),
        ConvectionSpec::new(ConvectionKind::GaussianDecay, 0.3).unwrap()).unwrap();
    let eigen = first_eigenpair(&grid, 1e-10, 500).unwrap();
    let (delta, sub) = build_subsolution(&grid, &spec, &eigen, 1.0).unwrap();
    let sup = build_supersolution(&grid, &spec, &sub, None).unwrap();
    println!("delta = {delta}, M = {}", sup.m);
    let bounds = BoundsPair::new(&grid, sub, sup.pair, delta, sup.m, sup.form).unwrap();
    let out = run_continuation(&grid, &spec, &bounds, &ContinuationSchedule::default(), &SolverConfig::default()).unwrap();
    let state = out.final_state.unwrap();
    println!("final u sup = {}, v sup = {}", state.u.linf_norm(), state.v.linf_norm());
    let lhs_u = grid.grad_inner(&state.u, &state.u).unwrap();
    println!("LHS (|u|_H1^2) = {lhs_u}");
    let (su, sv) = apriori_check(&grid, &spec, &bounds, &state).unwrap();
    println!("slack_u = {su}, slack_v = {sv}  (RHS = LHS + slack = {})", lhs_u + su);
    for k in [2.0, 4.0, 8.0, 16.0, 32.0] {
        let scaled = StatePair::new(state.u.scale(k), state.v.scale(k)).unwrap();
        let (du, dv) = apriori_check(&grid, &spec, &bounds, &scaled).unwrap();
        println!("x{k}: slack_u = {du:.4}, slack_v = {dv:.4}");
    }
    println!("cauchy: {:?}", out.report.cauchy_differences);
}
