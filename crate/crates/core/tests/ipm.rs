mod common;

use common::*;
use compact_opf::acopf::{self, Instance, Solution};
use compact_opf::grid::parse_matpower;
use compact_opf::ipm::{self, flat_start, solve, IpmConfig, SolveResult, SolveStatus, StartKind, StartPoint};

const TWO_BUS: &str = "
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	135	1	1.1	0.9;
	2	1	50	0	0	0	1	1	0	135	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	100	-100	1	100	1	200	0	0	0	0	0	0	0	0	0	0	0	0;
];
mpc.branch = [
	1	2	0.01	0.1	0	0	0	0	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0.01	10	5;
];
";

fn solve_flat(net: &compact_opf::grid::Network, inst: &Instance) -> SolveResult {
    solve(net, inst, &flat_start(net), &IpmConfig::default()).unwrap()
}

#[test]
fn two_bus_matches_hand_solution() {
    // Hand solve: losses fall with voltage, so the sending end sits at
    // v_max = 1.1; the receiving bus equations (p = -0.5, q = 0) then fix
    // pg = 0.5020869992680032 p.u. and v2 = 1.0944825858547576.
    let net = parse_matpower(TWO_BUS).unwrap();
    let inst = Instance::baseline(&net);
    let cost = 532.2961347513979;
    let r = solve_flat(&net, &inst);
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.objective - cost).abs() / cost < 1e-5, "objective {}", r.objective);

    let tight = IpmConfig { tol: 1e-9, ..IpmConfig::default() };
    let r = solve(&net, &inst, &flat_start(&net), &tight).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.solution.pg[0] - 0.5020869992680032).abs() < 1e-7, "pg {}", r.solution.pg[0]);
    assert!((r.solution.vm[1] - 1.0944825858547576).abs() < 1e-6, "vm {}", r.solution.vm[1]);
    assert!((r.objective - cost).abs() / cost < 1e-8, "objective {}", r.objective);
    assert_eq!(r.solution.va[0], 0.0);
}

#[test]
fn case14_and_case30_match_reference_solver() {
    for (name, reference) in [("case14", REFERENCE_OBJECTIVE_CASE14), ("case30", REFERENCE_OBJECTIVE_CASE30)] {
        let net = case(name);
        let inst = Instance::baseline(&net);
        let r = solve_flat(&net, &inst);
        assert_eq!(r.status, SolveStatus::Optimal, "{name}");
        let rel = (r.objective - reference).abs() / reference;
        assert!(rel < 1e-4, "{name}: objective {} vs {reference}", r.objective);
        let v = acopf::violations(&net, &inst, &r.solution).unwrap();
        assert!(v.max_overall <= 1e-3, "{name}: {v:?}");
        let kkt = kkt_residuals(&net, &inst, &r);
        assert!(kkt.max() <= 10.0 * 1e-4, "{name}: {kkt:?}");
    }
}

#[test]
fn case118_solves_from_flat_start() {
    let net = case("case118");
    let inst = Instance::baseline(&net);
    let r = solve_flat(&net, &inst);
    assert_eq!(r.status, SolveStatus::Optimal);
    let rel = (r.objective - REFERENCE_OBJECTIVE_CASE118).abs() / REFERENCE_OBJECTIVE_CASE118;
    assert!(rel < 1e-4, "objective {}", r.objective);
}

#[test]
fn self_warm_start_is_faster_and_consistent() {
    let net = case("case30");
    let inst = Instance::baseline(&net);
    let cfg = IpmConfig::default();
    let flat = solve_flat(&net, &inst);
    let start = StartPoint::primal_dual(flat.solution.clone(), flat.duals.clone(), cfg.mu_init_warm);
    let warm = solve(&net, &inst, &start, &cfg).unwrap();
    assert_eq!(warm.status, SolveStatus::Optimal);
    assert!(warm.iterations < flat.iterations, "{} vs {}", warm.iterations, flat.iterations);
}

#[test]
fn self_warm_start_reproduces_objective_at_tight_tolerance() {
    let net = case("case30");
    let inst = Instance::baseline(&net);
    let cfg = IpmConfig { tol: 1e-8, ..IpmConfig::default() };
    let flat = solve(&net, &inst, &flat_start(&net), &cfg).unwrap();
    let start = StartPoint::primal_dual(flat.solution.clone(), flat.duals.clone(), cfg.mu_init_warm);
    let warm = solve(&net, &inst, &start, &cfg).unwrap();
    assert!(flat.is_optimal() && warm.is_optimal());
    assert!((warm.objective - flat.objective).abs() / flat.objective < 1e-6, "{} vs {}", warm.objective, flat.objective);
}

#[test]
fn identical_inputs_give_bit_identical_results() {
    let net = case("case14");
    let inst = Instance::baseline(&net);
    let cfg = IpmConfig { trace: true, ..IpmConfig::default() };
    let a = solve(&net, &inst, &flat_start(&net), &cfg).unwrap();
    let b = solve(&net, &inst, &flat_start(&net), &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.solution, b.solution);
    assert_eq!(a.duals, b.duals);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn more_load_never_costs_less() {
    let net = case("case14");
    let base = Instance::baseline(&net);
    let scaled = Instance { pd: base.pd.iter().map(|p| 1.05 * p).collect(), qd: base.qd.iter().map(|q| 1.05 * q).collect() };
    let a = solve_flat(&net, &base);
    let b = solve_flat(&net, &scaled);
    assert!(a.is_optimal() && b.is_optimal());
    assert!(b.objective >= a.objective);
}

#[test]
fn duals_respect_sign_constraints() {
    let net = case("case30");
    let r = solve_flat(&net, &Instance::baseline(&net));
    let d = &r.duals;
    assert!(d.mu_thermal.iter().chain(&d.z_lower).chain(&d.z_upper).all(|&v| v >= 0.0));
    let enc = d.encode();
    assert_eq!(enc.len(), ipm::DualSolution::dim(&net));
    assert_eq!(ipm::DualSolution::decode(&net, &enc).unwrap(), *d);
}

#[test]
fn flat_start_uses_lower_limits() {
    let net = case("case14");
    let s = flat_start(&net);
    assert_eq!(s.kind, StartKind::Flat);
    let p = s.primal.unwrap();
    let pg_min: Vec<f64> = net.generators.iter().map(|g| g.pg_min).collect();
    assert_eq!(p.pg, pg_min);
    assert_eq!(p.pg.len(), 5);
    assert!(p.va.iter().all(|&a| a == 0.0));
    assert!(p.vm.iter().zip(&net.buses).all(|(v, b)| *v == b.v_min));
}

#[test]
fn flat_start_follows_custom_limits() {
    let text = TWO_BUS.replace("1.1	0.9;", "1.1	0.94;");
    let net = parse_matpower(&text).unwrap();
    let p = flat_start(&net).primal.unwrap();
    assert_eq!(p.vm, vec![0.94, 0.94]);
    assert_eq!(p.pg, vec![0.0]);
}

#[test]
fn warm_start_outside_bounds_is_clamped() {
    let net = case("case14");
    let inst = Instance::baseline(&net);
    let mut sol = Solution::flat(&net);
    sol.vm.iter_mut().for_each(|v| *v = 2.0);
    sol.pg.iter_mut().for_each(|p| *p = -5.0);
    let r = solve(&net, &inst, &StartPoint::primal(sol, 0.1), &IpmConfig::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.objective - REFERENCE_OBJECTIVE_CASE14).abs() / REFERENCE_OBJECTIVE_CASE14 < 1e-4);
}

#[test]
fn invalid_inputs_are_rejected() {
    let net = case("case14");
    let inst = Instance::baseline(&net);
    let cfg = IpmConfig::default();
    let mut bad_mu = flat_start(&net);
    bad_mu.mu0 = 0.0;
    assert!(solve(&net, &inst, &bad_mu, &cfg).is_err());
    let no_primal = StartPoint { kind: StartKind::Primal, primal: None, duals: None, mu0: 0.1 };
    assert!(solve(&net, &inst, &no_primal, &cfg).is_err());
    let short = Instance { pd: vec![0.0; 3], qd: vec![0.0; 3] };
    assert!(solve(&net, &short, &flat_start(&net), &cfg).is_err());
    let bad_cfg = IpmConfig { fraction_to_boundary: 1.0, ..cfg };
    assert!(solve(&net, &inst, &flat_start(&net), &bad_cfg).is_err());
}

#[test]
fn iteration_limit_returns_best_iterate() {
    let net = case("case30");
    let cfg = IpmConfig { max_iter: 3, ..IpmConfig::default() };
    let r = solve(&net, &Instance::baseline(&net), &flat_start(&net), &cfg).unwrap();
    assert_eq!(r.status, SolveStatus::MaxIter);
    assert_eq!(r.iterations, 3);
    assert!(r.solution.is_finite());
}

#[test]
fn result_json_round_trip_and_trace_csv() {
    let net = case("case14");
    let cfg = IpmConfig { trace: true, ..IpmConfig::default() };
    let r = solve(&net, &Instance::baseline(&net), &flat_start(&net), &cfg).unwrap();
    let json = serde_json::to_string(&r).unwrap();
    let back: SolveResult = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    let csv = ipm::trace_csv(&r.trace);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iter,mu,primal_inf,dual_inf,step_len"));
    assert_eq!(lines.count(), r.iterations);
}
