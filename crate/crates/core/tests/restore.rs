mod common;

use compact_opf::acopf::{self, Instance, Solution};
use compact_opf::datagen::{generate, PerturbConfig};
use compact_opf::grid::{parse_matpower, Network};
use compact_opf::ipm::{self, IpmConfig};
use compact_opf::restore::*;
use compact_opf::train::{Predictor, TrainError};
use proptest::prelude::*;

/// Two buses with a generator at each end; bus 2 is PV with a 60 MW load.
const TWO_BUS_PV: &str = r#"
function mpc = two_bus_pv
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1.02	0	135	1	1.1	0.9;
	2	2	60	10	0	0	1	0.98	0	135	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	100	-100	1.02	100	1	200	0	0	0	0	0	0	0	0	0	0	0	0;
	2	0	0	100	-100	0.98	100	1	80	10	0	0	0	0	0	0	0	0	0	0	0;
];
mpc.branch = [
	1	2	0.02	0.15	0	0	0	0	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0.01	10	0;
	2	0	0	3	0.02	12	0;
];
"#;

/// Slack feeding a heavy PQ load over a long line.
const WEAK_FEEDER: &str = r#"
function mpc = weak_feeder
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	135	1	1.06	0.94;
	2	1	120	40	0	0	1	1	0	135	1	1.06	0.94;
];
mpc.gen = [
	1	0	0	300	-300	1	100	1	300	0	0	0	0	0	0	0	0	0	0	0	0;
];
mpc.branch = [
	1	2	0.03	0.25	0	0	0	0	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0.01	10	0;
];
"#;

fn solved(net: &Network, inst: &Instance) -> Solution {
    let cfg = IpmConfig { tol: 1e-8, ..IpmConfig::default() };
    let res = ipm::solve(net, inst, &ipm::flat_start(net), &cfg).unwrap();
    assert!(res.is_optimal());
    res.solution
}

fn balance_inf(net: &Network, inst: &Instance, sol: &Solution) -> f64 {
    let (dp, dq) = acopf::balance_residuals(net, inst, sol).unwrap();
    dp.iter().chain(&dq).fold(0.0, |m, v| m.max(v.abs()))
}

#[test]
fn exact_solution_seed_converges_immediately() {
    for name in ["case14", "case30"] {
        let net = common::case(name);
        let inst = Instance::baseline(&net);
        let sol = solved(&net, &inst);
        let pf = newton_pf(&net, &inst, &sol, &PfOptions::default()).unwrap();
        assert!(pf.converged, "{name}: {pf:?}");
        assert!(pf.iterations <= 2, "{name}: {} iterations", pf.iterations);
        assert!(pf.residual_inf < 1e-10, "{name}: residual {:e}", pf.residual_inf);
        let v = restored_violations(&net, &inst, &pf).unwrap();
        assert!(v.max_bound <= 1e-4 && v.max_thermal <= 1e-4, "{v:?}");
        assert!(balance_inf(&net, &inst, &pf.solution) <= 1e-7);
    }
}

/// Root of `g v₂² − v₂v₁(b sin θ + g cos θ) = p` on `[lo, hi]`.
fn bisect_angle(g: f64, b: f64, v1: f64, v2: f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    let f = |t: f64| g * v2 * v2 - v2 * v1 * (b * t.sin() + g * t.cos()) - p;
    assert!(f(lo) * f(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn two_bus_angle_matches_bisection() {
    let net = parse_matpower(TWO_BUS_PV).unwrap();
    assert_eq!(net.gens_at_bus[1].len(), 1);
    let inst = Instance::baseline(&net);
    for (pg2, v1, v2) in [(0.2, 1.02, 0.98), (0.9, 1.0, 1.03), (0.0, 1.05, 0.95)] {
        let seed = Solution { pg: vec![0.4, pg2], qg: vec![0.0, 0.0], vm: vec![v1, v2], va: vec![0.3, -0.7] };
        let pf = newton_pf(&net, &inst, &seed, &PfOptions::default()).unwrap();
        assert!(pf.converged);
        let br = &net.branches[0];
        let p = pg2 - inst.pd[0];
        let theta = bisect_angle(br.g, br.b, v1, v2, p, -1.2, 1.2);
        assert!((pf.solution.va[1] - theta).abs() < 1e-9, "{} vs {theta}", pf.solution.va[1]);
        assert_eq!(pf.solution.va[0], 0.0);
        assert_eq!(pf.solution.vm, vec![v1, v2]);
        assert_eq!(pf.solution.pg[1], pg2);
        assert!(balance_inf(&net, &inst, &pf.solution) <= 1e-8);
    }
}

#[test]
fn voltage_drop_at_pq_bus_is_reported_as_bound_violation() {
    let net = parse_matpower(WEAK_FEEDER).unwrap();
    let inst = Instance::baseline(&net);
    let pf = newton_pf(&net, &inst, &Solution::flat(&net), &PfOptions::default()).unwrap();
    assert!(pf.converged);
    assert!(pf.solution.vm[1] < 0.94, "vm = {}", pf.solution.vm[1]);
    let v = restored_violations(&net, &inst, &pf).unwrap();
    assert!((v.max_bound - (0.94 - pf.solution.vm[1])).abs() < 1e-12, "{v:?}");
    assert!(v.max_balance <= 1e-8);
}

#[test]
fn failures_are_reported_not_raised() {
    let net = common::case("case14");
    let inst = Instance::baseline(&net);
    let mut dead = Solution::flat(&net);
    dead.vm.iter_mut().for_each(|v| *v = 0.0);
    let pf = newton_pf(&net, &inst, &dead, &PfOptions::default()).unwrap();
    assert!(!pf.converged);
    assert!(pf.failure.as_deref().unwrap().contains("singular"), "{:?}", pf.failure);
    assert!(matches!(restored_violations(&net, &inst, &pf), Err(RestoreError::NotConverged)));

    let far = Solution { pg: vec![0.0; net.n_gen()], ..Solution::flat(&net) };
    let pf = newton_pf(&net, &inst, &far, &PfOptions { tol: 1e-8, max_iter: 1 }).unwrap();
    assert!(!pf.converged && pf.iterations == 1);
    assert!(pf.failure.is_some());
    assert!(pf.residual_inf.is_finite());

    let short = Solution { vm: vec![1.0; 3], ..Solution::flat(&net) };
    assert!(newton_pf(&net, &inst, &short, &PfOptions::default()).is_err());
}

struct Truth(Vec<(Vec<f64>, Vec<f64>)>, String);

impl Predictor for Truth {
    fn predict_f64(&self, x: &[f64]) -> Result<Vec<f64>, TrainError> {
        Ok(self.0.iter().find(|(k, _)| k == x).map(|(_, y)| y.clone()).unwrap())
    }
    fn n_params(&self) -> usize {
        0
    }
    fn fingerprint(&self) -> &str {
        &self.1
    }
}

#[test]
fn dataset_restore_writes_one_row_per_instance() {
    let net = common::case("case14");
    let ds = generate(&net, &PerturbConfig::default(), 20, &IpmConfig::default(), 0).unwrap();
    let truth = Truth(ds.records.iter().map(|r| (r.x.clone(), r.y.clone())).collect(), ds.header.network_fingerprint.clone());
    let recs = restore_dataset(&net, &ds, &truth, &PfOptions::default()).unwrap();
    assert_eq!(recs.len(), ds.len());
    assert!(recs.iter().all(|r| r.converged && r.iterations <= 3));
    let csv = pf_csv(&recs);
    assert_eq!(csv.lines().next().unwrap(), "instance_id,converged,iterations,bound_pu,thermal_mva,balance_pu,elapsed_s");
    assert_eq!(csv.lines().count(), ds.len() + 1);
    let s = RestoreSummary::from_records(&recs);
    assert_eq!((s.converged, s.instances), (20, 20));
    assert_eq!(RestoreSummary::CSV_HEADER, "method,bound_pu,thermal_mva,time_s,converged,instances");
    assert!(s.mean_bound_pu <= 1e-3);

    let other = Truth(vec![], "different".into());
    assert!(restore_dataset(&net, &ds, &other, &PfOptions::default()).is_err());
}

fn case14_solution() -> &'static (Network, Instance, Solution) {
    static S: std::sync::OnceLock<(Network, Instance, Solution)> = std::sync::OnceLock::new();
    S.get_or_init(|| {
        let net = common::case("case14");
        let inst = Instance::baseline(&net);
        let sol = solved(&net, &inst);
        (net, inst, sol)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn converged_flows_satisfy_physics_and_keep_fixed_injections(
        dv in prop::collection::vec(-0.03f64..0.03, 14),
        dp in prop::collection::vec(0.9f64..1.1, 5),
        da in prop::collection::vec(-0.1f64..0.1, 14),
    ) {
        let (net, inst, sol) = case14_solution();
        let seed = Solution {
            pg: sol.pg.iter().zip(&dp).map(|(p, f)| p * f).collect(),
            qg: sol.qg.clone(),
            vm: sol.vm.iter().zip(&dv).map(|(v, d)| v + d).collect(),
            va: sol.va.iter().zip(&da).map(|(v, d)| v + d).collect(),
        };
        let opts = PfOptions::default();
        let pf = newton_pf(net, inst, &seed, &opts).unwrap();
        prop_assert!(pf.converged);
        prop_assert!(pf.residual_inf <= opts.tol);
        prop_assert!(balance_inf(net, inst, &pf.solution) <= 10.0 * opts.tol);
        for (k, g) in net.generators.iter().enumerate() {
            if g.bus != net.slack_bus {
                prop_assert_eq!(pf.solution.pg[k], seed.pg[k]);
            }
        }
        for (i, gens) in net.gens_at_bus.iter().enumerate() {
            if !gens.is_empty() {
                prop_assert_eq!(pf.solution.vm[i], seed.vm[i]);
            }
        }
        let again = newton_pf(net, inst, &seed, &opts).unwrap();
        prop_assert_eq!(again.solution, pf.solution);
        prop_assert_eq!(again.iterations, pf.iterations);
    }
}
