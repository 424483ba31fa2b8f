#![allow(dead_code)]

use std::path::PathBuf;

use compact_opf::acopf::{self, Instance, Solution};
use compact_opf::grid::Network;
use compact_opf::ipm::{self, SolveResult};

pub fn data_path(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(file)
}

pub fn case(name: &str) -> Network {
    Network::load(data_path(&format!("{name}.m"))).expect("bundled case parses")
}

/// Objectives of the reduced model from an independent solver
/// (`scripts/reference_opf.py`, tolerances 1e-10).
pub const REFERENCE_OBJECTIVE_CASE14: f64 = 8083.152707725116;
pub const REFERENCE_OBJECTIVE_CASE30: f64 = 581.2316388652378;
pub const REFERENCE_OBJECTIVE_CASE118: f64 = 129725.77063533574;

#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

/// Primal coordinates: angles at non-slack buses, then vm, pg, qg.
fn flatten(net: &Network, sol: &Solution) -> Vec<f64> {
    let mut x: Vec<f64> = (0..net.n_bus()).filter(|&i| i != net.slack_bus).map(|i| sol.va[i]).collect();
    x.extend(&sol.vm);
    x.extend(&sol.pg);
    x.extend(&sol.qg);
    x
}

fn unflatten(net: &Network, x: &[f64]) -> Solution {
    let nb = net.n_bus();
    let ng = net.n_gen();
    let mut va = vec![0.0; nb];
    let mut k = 0;
    for (i, a) in va.iter_mut().enumerate() {
        if i != net.slack_bus {
            *a = x[k];
            k += 1;
        }
    }
    let vm = x[k..k + nb].to_vec();
    k += nb;
    let pg = x[k..k + ng].to_vec();
    let qg = x[k + ng..k + 2 * ng].to_vec();
    Solution { pg, qg, vm, va }
}

/// Lagrangian without the bound terms:
/// `f + λ_pᵀdp + λ_qᵀdq + Σ μ_e (pf_e² + qf_e² − s̄_e²)`.
fn lagrangian(net: &Network, inst: &Instance, sol: &Solution, res: &SolveResult) -> f64 {
    let f = acopf::objective(net, sol).unwrap();
    let (dp, dq) = acopf::balance_residuals(net, inst, sol).unwrap();
    let flows = acopf::branch_flows(net, sol).unwrap();
    let mut l = f;
    for i in 0..net.n_bus() {
        l += res.duals.lam_p[i] * dp[i] + res.duals.lam_q[i] * dq[i];
    }
    for (k, br) in net.branches.iter().enumerate() {
        if let Some(s) = br.s_max {
            for end in 0..2 {
                let e = flows[k][end];
                l += res.duals.mu_thermal[2 * k + end] * (e.pf * e.pf + e.qf * e.qf - s * s);
            }
        }
    }
    l
}

/// Recomputes the first-order optimality residuals from the reported primal
/// and dual values, using central differences of the model functions and the
/// solver's documented scaling (objective scale and multiplier-based
/// normalization with cap 100).
pub fn kkt_residuals(net: &Network, inst: &Instance, res: &SolveResult) -> KktResiduals {
    let sol = &res.solution;
    let x0 = flatten(net, sol);
    let h = 1e-6;
    let mut grad = vec![0.0; x0.len()];
    for k in 0..x0.len() {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[k] += h;
        xm[k] -= h;
        let lp = lagrangian(net, inst, &unflatten(net, &xp), res);
        let lm = lagrangian(net, inst, &unflatten(net, &xm), res);
        grad[k] = (lp - lm) / (2.0 * h);
    }
    // Bound multipliers act on [pg; qg; vm].
    let nb = net.n_bus();
    let ng = net.n_gen();
    let off_vm = nb - 1;
    let off_pg = off_vm + nb;
    let off_qg = off_pg + ng;
    let mut bounded = Vec::new();
    for (k, g) in net.generators.iter().enumerate() {
        bounded.push((off_pg + k, g.pg_min, g.pg_max));
    }
    for (k, g) in net.generators.iter().enumerate() {
        bounded.push((off_qg + k, g.qg_min, g.qg_max));
    }
    for (i, b) in net.buses.iter().enumerate() {
        bounded.push((off_vm + i, b.v_min, b.v_max));
    }
    let d = &res.duals;
    let mut compl = 0.0f64;
    for (j, &(k, lo, hi)) in bounded.iter().enumerate() {
        grad[k] += d.z_upper[j] - d.z_lower[j];
        compl = compl.max((d.z_lower[j] * (x0[k] - lo)).abs());
        compl = compl.max((d.z_upper[j] * (hi - x0[k])).abs());
    }
    let flows = acopf::branch_flows(net, sol).unwrap();
    let mut thermal_excess = 0.0f64;
    for (k, br) in net.branches.iter().enumerate() {
        if let Some(s) = br.s_max {
            for end in 0..2 {
                let e = flows[k][end];
                let g = e.pf * e.pf + e.qf * e.qf - s * s;
                thermal_excess = thermal_excess.max(g);
                compl = compl.max((d.mu_thermal[2 * k + end] * g).abs());
            }
        }
    }

    let scale = ipm::objective_scale(net);
    let lam_sum: f64 = d.lam_p.iter().chain(&d.lam_q).map(|v| v.abs()).sum::<f64>() * scale;
    let z_sum: f64 = d.z_lower.iter().chain(&d.z_upper).chain(&d.mu_thermal).sum::<f64>() * scale;
    let n_thermal = net.branches.iter().filter(|b| b.s_max.is_some()).count() * 2;
    let n_z = 2 * bounded.len() + n_thermal;
    let s_d = ((lam_sum + z_sum) / (2 * nb + n_z) as f64).max(100.0) / 100.0;
    let s_c = (z_sum / n_z as f64).max(100.0) / 100.0;

    let stationarity = scale * grad.iter().fold(0.0f64, |m, v| m.max(v.abs())) / s_d;
    let viol = acopf::violations(net, inst, sol).unwrap();
    let feasibility = viol.max_balance.max(viol.max_bound).max(thermal_excess.max(0.0));
    KktResiduals { stationarity, feasibility, complementarity: scale * compl / s_c }
}
