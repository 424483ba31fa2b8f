use super::model::OpfModel;
use super::*;
use crate::grid::Network;

fn case30() -> Network {
    let path = format!("{}/../../data/case30.m", env!("CARGO_MANIFEST_DIR"));
    Network::load(std::path::Path::new(&path)).unwrap()
}

/// A deterministic interior point away from any symmetry.
fn probe_point(model: &OpfModel) -> Vec<f64> {
    (0..model.n)
        .map(|k| {
            let wiggle = ((k * 37 % 11) as f64 - 5.0) * 0.01;
            if model.lo[k].is_finite() {
                0.5 * (model.lo[k] + model.hi[k]) + wiggle * (model.hi[k] - model.lo[k]) * 0.5
            } else {
                wiggle
            }
        })
        .collect()
}

#[test]
fn constraint_jacobians_match_central_differences() {
    let net = case30();
    let inst = Instance::baseline(&net);
    let model = OpfModel::new(&net, &inst);
    let x = probe_point(&model);
    let ev = model.eval(&x);
    let mut jc = vec![vec![0.0; model.n]; model.m];
    for &(r, v, val) in &ev.jac_c {
        jc[r][v] += val;
    }
    let h = 1e-6;
    for v in 0..model.n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[v] += h;
        xm[v] -= h;
        let (ep, em) = (model.eval(&xp), model.eval(&xm));
        for r in 0..model.m {
            let fd = (ep.c[r] - em.c[r]) / (2.0 * h);
            assert!((fd - jc[r][v]).abs() <= 1e-6 * (1.0 + fd.abs()), "c row {r} var {v}: {fd} vs {}", jc[r][v]);
        }
        for (t, row) in ev.jac_h.iter().enumerate() {
            let an: f64 = row.iter().filter(|(k, _)| *k == v).map(|(_, g)| g).sum();
            let fd = (ep.h[t] - em.h[t]) / (2.0 * h);
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "h row {t} var {v}: {fd} vs {an}");
        }
        let cost = |x: &[f64]| -> f64 {
            net.generators.iter().enumerate().map(|(k, g)| model.obj_scale * g.cost.eval(x[model.pg_idx[k]])).sum()
        };
        let fd = (cost(&xp) - cost(&xm)) / (2.0 * h);
        assert!((fd - ev.grad_f[v]).abs() <= 1e-6 * (1.0 + fd.abs()));
    }
}

#[test]
fn lagrangian_hessian_matches_differences_of_gradient() {
    let net = case30();
    let inst = Instance::baseline(&net);
    let model = OpfModel::new(&net, &inst);
    let x = probe_point(&model);
    let ev = model.eval(&x);
    let lam: Vec<f64> = (0..model.m).map(|r| ((r * 13 % 7) as f64 - 3.0) * 0.7).collect();
    let nu: Vec<f64> = (0..ev.h.len()).map(|t| 0.1 + (t % 5) as f64 * 0.3).collect();
    let zeros_w = vec![0.0; nu.len()];
    let zeros_s = vec![0.0; model.n];
    let k = model.assemble_kkt(&x, &ev, &lam, &nu, &zeros_w, &zeros_s);
    let h = 1e-6;
    for v in 0..model.n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[v] += h;
        xm[v] -= h;
        let gp = model.lagrangian_grad(&model.eval(&xp), &lam, &nu);
        let gm = model.lagrangian_grad(&model.eval(&xm), &lam, &nu);
        for u in 0..model.n {
            let fd = (gp[u] - gm[u]) / (2.0 * h);
            let an = k.get(model.pos_x[u], model.pos_x[v]);
            assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "H[{u},{v}]: {fd} vs {an}");
        }
    }
}

#[test]
fn kkt_ordering_is_a_permutation() {
    let net = case30();
    let model = OpfModel::new(&net, &Instance::baseline(&net));
    let mut all: Vec<usize> = model.pos_x.iter().chain(&model.pos_c).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..model.n + model.m).collect::<Vec<_>>());
}

#[test]
fn objective_scale_caps_largest_marginal_cost() {
    let net = case30();
    let s = objective_scale(&net);
    assert!(s > 0.0 && s <= 1.0);
}
