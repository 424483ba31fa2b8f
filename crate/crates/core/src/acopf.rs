//! AC-OPF evaluation: objective, branch flows, balance residuals, constraint
//! violations and the flat vector encodings used for learning.
//!
//! Layouts are fixed: `x = [pd; qd]` (by load) and `y = [pg; qg; vm; va]`
//! (by generator, then by bus).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Network;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcopfError {
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("optimality gap undefined for a zero reference objective")]
    ZeroReference,
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), AcopfError> {
    if expected == got {
        Ok(())
    } else {
        Err(AcopfError::Dimension { what, expected, got })
    }
}

/// Load realization: active and reactive demand by load, in p.u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub pd: Vec<f64>,
    pub qd: Vec<f64>,
}

impl Instance {
    pub fn baseline(net: &Network) -> Self {
        Self {
            pd: net.loads.iter().map(|l| l.pd_base).collect(),
            qd: net.loads.iter().map(|l| l.qd_base).collect(),
        }
    }

    pub fn check(&self, net: &Network) -> Result<(), AcopfError> {
        check_len("instance pd", net.n_load(), self.pd.len())?;
        check_len("instance qd", net.n_load(), self.qd.len())
    }

    /// Demand aggregated per bus.
    pub fn bus_demand(&self, net: &Network) -> (Vec<f64>, Vec<f64>) {
        let mut pd = vec![0.0; net.n_bus()];
        let mut qd = vec![0.0; net.n_bus()];
        for (k, l) in net.loads.iter().enumerate() {
            pd[l.bus] += self.pd[k];
            qd[l.bus] += self.qd[k];
        }
        (pd, qd)
    }
}

/// Primal point of the AC-OPF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
}

impl Solution {
    pub fn check(&self, net: &Network) -> Result<(), AcopfError> {
        check_len("solution pg", net.n_gen(), self.pg.len())?;
        check_len("solution qg", net.n_gen(), self.qg.len())?;
        check_len("solution vm", net.n_bus(), self.vm.len())?;
        check_len("solution va", net.n_bus(), self.va.len())
    }

    /// Flat voltage profile with generation at zero.
    pub fn flat(net: &Network) -> Self {
        Self {
            pg: vec![0.0; net.n_gen()],
            qg: vec![0.0; net.n_gen()],
            vm: vec![1.0; net.n_bus()],
            va: vec![0.0; net.n_bus()],
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.pg, &self.qg, &self.vm, &self.va].iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BranchFlow {
    pub pf: f64,
    pub qf: f64,
}

/// Power leaving bus `i` towards bus `j` over a series admittance `g + jb`,
/// with `dtheta = θi − θj`.
#[inline]
pub fn flow(g: f64, b: f64, vi: f64, vj: f64, dtheta: f64) -> BranchFlow {
    let (s, c) = dtheta.sin_cos();
    let vv = vi * vj;
    BranchFlow {
        pf: g * vi * vi - vv * (b * s + g * c),
        qf: -b * vi * vi - vv * (g * s - b * c),
    }
}

/// Value, gradient and Hessian of one flow component with respect to the
/// local variables `(θi, θj, vi, vj)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowDerivs {
    pub val: f64,
    pub grad: [f64; 4],
    pub hess: [[f64; 4]; 4],
}

/// Analytic first and second derivatives of `(pf, qf)` from [`flow`].
pub fn flow_derivatives(g: f64, b: f64, vi: f64, vj: f64, dtheta: f64) -> (FlowDerivs, FlowDerivs) {
    let (s, c) = dtheta.sin_cos();
    // a = b sinθ + g cosθ, bb = g sinθ − b cosθ; da/dθ = −bb, dbb/dθ = a
    let a = b * s + g * c;
    let bb = g * s - b * c;
    let vv = vi * vj;

    let mut p = FlowDerivs { val: g * vi * vi - vv * a, ..Default::default() };
    p.grad = [vv * bb, -vv * bb, 2.0 * g * vi - vj * a, -vi * a];
    p.hess = [
        [vv * a, -vv * a, vj * bb, vi * bb],
        [-vv * a, vv * a, -vj * bb, -vi * bb],
        [vj * bb, -vj * bb, 2.0 * g, -a],
        [vi * bb, -vi * bb, -a, 0.0],
    ];

    let mut q = FlowDerivs { val: -b * vi * vi - vv * bb, ..Default::default() };
    q.grad = [-vv * a, vv * a, -2.0 * b * vi - vj * bb, -vi * bb];
    q.hess = [
        [vv * bb, -vv * bb, -vj * a, -vi * a],
        [-vv * bb, vv * bb, vj * a, vi * a],
        [-vj * a, vj * a, -2.0 * b, -bb],
        [-vi * a, vi * a, -bb, 0.0],
    ];
    (p, q)
}

/// Generation cost in $.
pub fn objective(net: &Network, sol: &Solution) -> Result<f64, AcopfError> {
    check_len("solution pg", net.n_gen(), sol.pg.len())?;
    Ok(net.generators.iter().zip(&sol.pg).map(|(g, &p)| g.cost.eval(p)).sum())
}

/// Flows at both ends of every branch: `[from→to, to→from]`.
pub fn branch_flows(net: &Network, sol: &Solution) -> Result<Vec<[BranchFlow; 2]>, AcopfError> {
    check_len("solution vm", net.n_bus(), sol.vm.len())?;
    check_len("solution va", net.n_bus(), sol.va.len())?;
    Ok(net
        .branches
        .iter()
        .map(|br| {
            let (i, j) = (br.from, br.to);
            let dt = sol.va[i] - sol.va[j];
            [
                flow(br.g, br.b, sol.vm[i], sol.vm[j], dt),
                flow(br.g, br.b, sol.vm[j], sol.vm[i], -dt),
            ]
        })
        .collect())
}

/// Nodal residuals `dp_i = Σ pf_ij − Σ pg_k + pd_i` (and likewise for `q`).
pub fn balance_residuals(
    net: &Network,
    inst: &Instance,
    sol: &Solution,
) -> Result<(Vec<f64>, Vec<f64>), AcopfError> {
    inst.check(net)?;
    sol.check(net)?;
    let (mut dp, mut dq) = inst.bus_demand(net);
    for (br, f) in net.branches.iter().zip(branch_flows(net, sol)?) {
        dp[br.from] += f[0].pf;
        dq[br.from] += f[0].qf;
        dp[br.to] += f[1].pf;
        dq[br.to] += f[1].qf;
    }
    for (k, g) in net.generators.iter().enumerate() {
        dp[g.bus] -= sol.pg[k];
        dq[g.bus] -= sol.qg[k];
    }
    Ok((dp, dq))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ViolationReport {
    pub max_bound: f64,
    pub max_thermal: f64,
    pub max_thermal_mva: f64,
    pub max_balance: f64,
    pub max_overall: f64,
}

impl ViolationReport {
    pub const CSV_HEADER: &'static str = "instance_id,max_bound,max_thermal_pu,max_thermal_mva,max_balance,max_overall";

    pub fn csv_row(&self, instance_id: usize) -> String {
        format!(
            "{instance_id},{:e},{:e},{:e},{:e},{:e}",
            self.max_bound, self.max_thermal, self.max_thermal_mva, self.max_balance, self.max_overall
        )
    }
}

#[inline]
fn excess(v: f64, lo: f64, hi: f64) -> f64 {
    (lo - v).max(v - hi).max(0.0)
}

/// Largest bound excess over generator limits and voltage magnitudes.
pub fn bound_violation(net: &Network, sol: &Solution) -> f64 {
    let mut m = 0.0f64;
    for (k, g) in net.generators.iter().enumerate() {
        m = m.max(excess(sol.pg[k], g.pg_min, g.pg_max));
        m = m.max(excess(sol.qg[k], g.qg_min, g.qg_max));
    }
    for (i, b) in net.buses.iter().enumerate() {
        m = m.max(excess(sol.vm[i], b.v_min, b.v_max));
    }
    m
}

/// Largest apparent-power excess (p.u.) over both ends of rated branches.
pub fn thermal_violation(net: &Network, flows: &[[BranchFlow; 2]]) -> f64 {
    net.branches
        .iter()
        .zip(flows)
        .filter_map(|(br, f)| br.s_max.map(|s| (s, f)))
        .flat_map(|(s, f)| f.iter().map(move |e| (e.pf.hypot(e.qf) - s).max(0.0)))
        .fold(0.0, f64::max)
}

pub fn violations(net: &Network, inst: &Instance, sol: &Solution) -> Result<ViolationReport, AcopfError> {
    let (dp, dq) = balance_residuals(net, inst, sol)?;
    let flows = branch_flows(net, sol)?;
    let max_bound = bound_violation(net, sol);
    let max_thermal = thermal_violation(net, &flows);
    let max_balance = dp.iter().chain(&dq).fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ViolationReport {
        max_bound,
        max_thermal,
        max_thermal_mva: max_thermal * net.base_mva,
        max_balance,
        max_overall: max_bound.max(max_thermal).max(max_balance),
    })
}

/// `100·|f_pred − f_opt| / |f_opt|`.
pub fn optimality_gap(f_pred: f64, f_opt: f64) -> Result<f64, AcopfError> {
    if f_opt == 0.0 {
        return Err(AcopfError::ZeroReference);
    }
    Ok(100.0 * (f_pred - f_opt).abs() / f_opt.abs())
}

pub fn dim_x(net: &Network) -> usize {
    2 * net.n_load()
}

pub fn dim_y(net: &Network) -> usize {
    2 * net.n_gen() + 2 * net.n_bus()
}

pub fn encode_x(inst: &Instance) -> Vec<f64> {
    [inst.pd.as_slice(), inst.qd.as_slice()].concat()
}

pub fn decode_x(net: &Network, x: &[f64]) -> Result<Instance, AcopfError> {
    let nl = net.n_load();
    check_len("x vector", 2 * nl, x.len())?;
    Ok(Instance { pd: x[..nl].to_vec(), qd: x[nl..].to_vec() })
}

pub fn encode_y(sol: &Solution) -> Vec<f64> {
    [sol.pg.as_slice(), &sol.qg, &sol.vm, &sol.va].concat()
}

pub fn decode_y(net: &Network, y: &[f64]) -> Result<Solution, AcopfError> {
    let (ng, nb) = (net.n_gen(), net.n_bus());
    check_len("y vector", dim_y(net), y.len())?;
    Ok(Solution {
        pg: y[..ng].to_vec(),
        qg: y[ng..2 * ng].to_vec(),
        vm: y[2 * ng..2 * ng + nb].to_vec(),
        va: y[2 * ng + nb..].to_vec(),
    })
}
