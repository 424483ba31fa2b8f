mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use compact_opf::acopf;
use compact_opf::datagen::{generate, perturb, split, Dataset, PerturbConfig, Record};
use compact_opf::ipm::{DualSolution, IpmConfig};
use proptest::prelude::*;

fn case14_dataset() -> &'static Dataset {
    static D: OnceLock<Dataset> = OnceLock::new();
    D.get_or_init(|| {
        let net = common::case("case14");
        generate(&net, &PerturbConfig { seed: 5, ..PerturbConfig::default() }, 24, &IpmConfig::default(), 0).unwrap()
    })
}

fn synthetic(n: usize) -> Dataset {
    let net = common::case("case14");
    let records = (0..n)
        .map(|k| Record {
            instance_id: k,
            x: vec![k as f64; acopf::dim_x(&net)],
            y: vec![0.5 * k as f64; acopf::dim_y(&net)],
            dual: vec![0.25; DualSolution::dim(&net)],
            objective: k as f64,
            iterations: 1,
        })
        .collect();
    Dataset::empty(&net).with_records(records)
}

fn ids(ds: &Dataset) -> Vec<usize> {
    ds.records.iter().map(|r| r.instance_id).collect()
}

#[test]
fn stored_solutions_are_feasible() {
    let net = common::case("case14");
    let ds = case14_dataset();
    let tol = IpmConfig::default().tol;
    assert_eq!(ds.len() + ds.header.skipped, 24);
    for r in &ds.records {
        let inst = acopf::decode_x(&net, &r.x).unwrap();
        let sol = acopf::decode_y(&net, &r.y).unwrap();
        let v = acopf::violations(&net, &inst, &sol).unwrap();
        assert!(v.max_overall <= 10.0 * tol, "instance {}: {v:?}", r.instance_id);
        assert!((acopf::objective(&net, &sol).unwrap() - r.objective).abs() <= 1e-9 * r.objective);
    }
}

#[test]
fn regeneration_is_bit_exact_for_any_worker_count() {
    let net = common::case("case14");
    let cfg = PerturbConfig { seed: 5, ..PerturbConfig::default() };
    let again = generate(&net, &cfg, 24, &IpmConfig::default(), 1).unwrap();
    assert_eq!(again.to_jsonl(), case14_dataset().to_jsonl());
    let ids = ids(&again);
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn twenty_two_records_split_twenty_to_two() {
    let (a, b) = split(&synthetic(22), 10.0 / 11.0, 0).unwrap();
    assert_eq!((a.len(), b.len()), (20, 2));
    assert!(split(&synthetic(22), 1.0, 0).is_err());
    assert!(split(&synthetic(22), 0.0, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn active_multipliers_stay_in_window(seed in any::<u64>(), k in 0usize..10_000) {
        let net = common::case("case30");
        let cfg = PerturbConfig { seed, ..PerturbConfig::default() };
        let inst = perturb(&net, &cfg, k).unwrap();
        for (l, (&pd, &qd)) in net.loads.iter().zip(inst.pd.iter().zip(&inst.qd)) {
            if l.pd_base != 0.0 {
                let m = pd / l.pd_base;
                prop_assert!((0.85 - 1e-12..=1.15 + 1e-12).contains(&m), "multiplier {m}");
            } else {
                prop_assert_eq!(pd, 0.0);
            }
            if l.qd_base != 0.0 {
                let m = qd / l.qd_base;
                prop_assert!((0.8 - 1e-12..=1.0 + 1e-12).contains(&m), "reactive multiplier {m}");
            }
        }
        prop_assert_eq!(perturb(&net, &cfg, k).unwrap(), inst);
    }

    #[test]
    fn split_partitions_records(n in 2usize..200, frac in 0.01f64..0.99, seed in any::<u64>()) {
        let ds = synthetic(n);
        let (a, b) = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(a.len(), (frac * n as f64).round() as usize);
        prop_assert_eq!(a.len() + b.len(), n);
        let sa: BTreeSet<usize> = ids(&a).into_iter().collect();
        let sb: BTreeSet<usize> = ids(&b).into_iter().collect();
        prop_assert!(sa.is_disjoint(&sb));
        prop_assert_eq!(sa.union(&sb).count(), n);
        let (a2, b2) = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(ids(&a2), ids(&a));
        prop_assert_eq!(ids(&b2), ids(&b));
        prop_assert_eq!(&a.header.network_fingerprint, &ds.header.network_fingerprint);
    }

    #[test]
    fn jsonl_round_trip_is_exact(n in 0usize..20, scale in -1e6f64..1e6) {
        let mut ds = synthetic(n);
        for r in &mut ds.records {
            r.x.iter_mut().for_each(|v| *v = *v * scale / 3.0);
        }
        let back = Dataset::from_jsonl(ds.to_jsonl().as_bytes()).unwrap();
        prop_assert_eq!(back.records, ds.records);
    }
}
