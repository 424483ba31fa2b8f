//! Newton-Raphson power flow seeded by a predicted solution.
//!
//! Non-slack buses carrying generators are PV buses: their voltage magnitude
//! and active injection are fixed to the seed. Buses without generators are
//! PQ. The slack bus fixes its voltage (angle zero) and absorbs the active
//! mismatch.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acopf::{self, flow_derivatives, AcopfError, Instance, Solution, ViolationReport};
use crate::datagen::Dataset;
use crate::grid::Network;
use crate::linalg::{norm_inf, Lu, Mat};
use crate::train::{Predictor, TrainError};

#[derive(Debug, Error)]
pub enum RestoreError {
    #[error("power flow did not converge")]
    NotConverged,
    #[error("invalid power-flow settings: {0}")]
    Config(String),
    #[error(transparent)]
    Acopf(#[from] AcopfError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfResult {
    pub solution: Solution,
    pub iterations: usize,
    pub converged: bool,
    /// Largest mismatch over the solved equations (p.u.).
    pub residual_inf: f64,
    pub elapsed: f64,
    /// Why the iteration stopped early, if it did.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 30 }
    }
}

/// Index maps from buses to unknowns.
struct Layout {
    /// Angle unknown of each bus (`None` at the slack).
    theta: Vec<Option<usize>>,
    /// Magnitude unknown of each bus (`Some` only at PQ buses).
    vm: Vec<Option<usize>>,
    /// Equation rows: active balance at non-slack buses, then reactive at PQ.
    p_row: Vec<Option<usize>>,
    q_row: Vec<Option<usize>>,
    n: usize,
}

impl Layout {
    fn new(net: &Network) -> Self {
        let nb = net.n_bus();
        let mut theta = vec![None; nb];
        let mut vm = vec![None; nb];
        let mut k = 0;
        for (i, t) in theta.iter_mut().enumerate() {
            if i != net.slack_bus {
                *t = Some(k);
                k += 1;
            }
        }
        for (i, v) in vm.iter_mut().enumerate() {
            if i != net.slack_bus && net.gens_at_bus[i].is_empty() {
                *v = Some(k);
                k += 1;
            }
        }
        Self { p_row: theta.clone(), q_row: vm.clone(), theta, vm, n: k }
    }
}

/// Net injections and their Jacobian at `(va, vm)`.
fn injections(net: &Network, va: &[f64], vm: &[f64], lay: Option<&Layout>) -> (Vec<f64>, Vec<f64>, Option<Mat<f64>>) {
    let nb = net.n_bus();
    let mut p = vec![0.0; nb];
    let mut q = vec![0.0; nb];
    let mut jac = lay.map(|l| Mat::zeros(l.n, l.n));
    for br in &net.branches {
        let (i, j) = (br.from, br.to);
        let dt = va[i] - va[j];
        for (a, c, d) in [(i, j, dt), (j, i, -dt)] {
            let (fp, fq) = flow_derivatives(br.g, br.b, vm[a], vm[c], d);
            p[a] += fp.val;
            q[a] += fq.val;
            if let (Some(l), Some(jm)) = (lay, jac.as_mut()) {
                // Local variable order: (θa, θc, va, vc).
                let cols = [l.theta[a], l.theta[c], l.vm[a], l.vm[c]];
                for (row, grad) in [(l.p_row[a], fp.grad), (l.q_row[a], fq.grad)] {
                    let Some(r) = row else { continue };
                    for (col, g) in cols.iter().zip(grad) {
                        if let Some(cc) = col {
                            jm[(r, *cc)] += g;
                        }
                    }
                }
            }
        }
    }
    (p, q, jac)
}

/// Solves the power-flow equations with voltages at PV/slack buses and
/// active injections at non-slack buses taken from `seed`.
pub fn newton_pf(net: &Network, inst: &Instance, seed: &Solution, opts: &PfOptions) -> Result<PfResult, RestoreError> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(RestoreError::Config("need tol > 0 and max_iter >= 1".into()));
    }
    inst.check(net)?;
    seed.check(net)?;
    if !seed.is_finite() {
        return Err(RestoreError::Config("seed has non-finite entries".into()));
    }
    let start = Instant::now();
    let lay = Layout::new(net);
    let (pd, qd) = inst.bus_demand(net);
    let nb = net.n_bus();
    let s = net.slack_bus;
    let mut p_spec = vec![0.0; nb];
    for (k, g) in net.generators.iter().enumerate() {
        p_spec[g.bus] += seed.pg[k];
    }
    for i in 0..nb {
        p_spec[i] -= pd[i];
    }

    let mut va: Vec<f64> = seed.va.iter().map(|&a| a - seed.va[s]).collect();
    let mut vm = seed.vm.clone();
    let mismatch = |va: &[f64], vm: &[f64], with_jac: bool| {
        let (p, q, jac) = injections(net, va, vm, with_jac.then_some(&lay));
        let mut f = vec![0.0; lay.n];
        for i in 0..nb {
            if let Some(r) = lay.p_row[i] {
                f[r] = p[i] - p_spec[i];
            }
            if let Some(r) = lay.q_row[i] {
                f[r] = q[i] + qd[i];
            }
        }
        (f, jac)
    };

    let mut best = (f64::INFINITY, va.clone(), vm.clone());
    let mut iterations = 0;
    let mut failure = None;
    loop {
        let (f, jac) = mismatch(&va, &vm, true);
        let res = norm_inf(&f);
        if res.is_finite() && res < best.0 {
            best = (res, va.clone(), vm.clone());
        }
        if res <= opts.tol {
            break;
        }
        if !res.is_finite() {
            failure = Some(format!("mismatch became non-finite after {iterations} iterations"));
            break;
        }
        if iterations >= opts.max_iter {
            failure = Some(format!("no convergence within {} iterations", opts.max_iter));
            break;
        }
        let lu = match Lu::factor(jac.expect("jacobian requested")) {
            Ok(lu) => lu,
            Err(e) => {
                failure = Some(format!("singular Jacobian at iteration {iterations}: {e}"));
                break;
            }
        };
        let dx = lu.solve(&f);
        for i in 0..nb {
            if let Some(c) = lay.theta[i] {
                va[i] -= dx[c];
            }
            if let Some(c) = lay.vm[i] {
                vm[i] -= dx[c];
            }
        }
        iterations += 1;
    }
    let (residual_inf, va, vm) = best;
    let converged = failure.is_none() && residual_inf <= opts.tol;
    let solution = recover_generation(net, seed, &pd, &qd, va, vm);
    Ok(PfResult { solution, iterations, converged, residual_inf, elapsed: start.elapsed().as_secs_f64(), failure })
}

/// Fills in slack active power and generator reactive power from the bus
/// balances; shares are proportional to each unit's limit range width.
fn recover_generation(net: &Network, seed: &Solution, pd: &[f64], qd: &[f64], va: Vec<f64>, vm: Vec<f64>) -> Solution {
    let (p, q, _) = injections(net, &va, &vm, None);
    let mut pg = seed.pg.clone();
    let mut qg = seed.qg.clone();
    let s = net.slack_bus;
    let share = |gens: &[usize], width: &dyn Fn(usize) -> f64, total: f64, out: &mut Vec<f64>, base: &dyn Fn(usize) -> f64| {
        let widths: Vec<f64> = gens.iter().map(|&k| width(k).max(0.0)).collect();
        let sum: f64 = widths.iter().sum();
        let assigned: f64 = gens.iter().map(|&k| base(k)).sum();
        for (&k, &w) in gens.iter().zip(&widths) {
            let frac = if sum > 0.0 { w / sum } else { 1.0 / gens.len() as f64 };
            out[k] = base(k) + frac * (total - assigned);
        }
    };
    let slack_gens = &net.gens_at_bus[s];
    if !slack_gens.is_empty() {
        let seed_pg = seed.pg.clone();
        share(slack_gens, &|k| net.generators[k].pg_max - net.generators[k].pg_min, p[s] + pd[s], &mut pg, &|k| seed_pg[k]);
    }
    for (i, gens) in net.gens_at_bus.iter().enumerate() {
        if !gens.is_empty() {
            share(gens, &|k| net.generators[k].qg_max - net.generators[k].qg_min, q[i] + qd[i], &mut qg, &|_| 0.0);
        }
    }
    Solution { pg, qg, vm, va }
}

/// Engineering violations left after a converged power flow (bound in
/// p.u., thermal in MVA).
pub fn restored_violations(net: &Network, inst: &Instance, pf: &PfResult) -> Result<ViolationReport, RestoreError> {
    if !pf.converged {
        return Err(RestoreError::NotConverged);
    }
    Ok(acopf::violations(net, inst, &pf.solution)?)
}

pub const PF_CSV_HEADER: &str = "instance_id,converged,iterations,bound_pu,thermal_mva,balance_pu,elapsed_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfRecord {
    pub instance_id: usize,
    pub converged: bool,
    pub iterations: usize,
    pub residual_inf: f64,
    pub violations: Option<ViolationReport>,
    pub elapsed: f64,
}

impl PfRecord {
    pub fn csv_row(&self) -> String {
        let (b, t, bal) = match &self.violations {
            Some(v) => (format!("{:e}", v.max_bound), format!("{:e}", v.max_thermal_mva), format!("{:e}", v.max_balance)),
            None => (String::new(), String::new(), String::new()),
        };
        format!("{},{},{},{b},{t},{bal},{:e}", self.instance_id, self.converged, self.iterations, self.elapsed)
    }
}

pub fn pf_csv(records: &[PfRecord]) -> String {
    let mut s = String::from(PF_CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Seeds a power flow with the model's prediction for every test record.
pub fn restore_dataset<P: Predictor + ?Sized>(
    net: &Network,
    test: &Dataset,
    model: &P,
    opts: &PfOptions,
) -> Result<Vec<PfRecord>, RestoreError> {
    if model.fingerprint() != test.header.network_fingerprint || net.fingerprint() != test.header.network_fingerprint {
        return Err(TrainError::Fingerprint { model: model.fingerprint().into(), data: test.header.network_fingerprint.clone() }.into());
    }
    test.records
        .par_iter()
        .map(|rec| {
            let inst = acopf::decode_x(net, &rec.x)?;
            let seed = acopf::decode_y(net, &model.predict_f64(&rec.x)?)?;
            let pf = newton_pf(net, &inst, &seed, opts)?;
            let violations = if pf.converged { Some(restored_violations(net, &inst, &pf)?) } else { None };
            Ok(PfRecord {
                instance_id: rec.instance_id,
                converged: pf.converged,
                iterations: pf.iterations,
                residual_inf: pf.residual_inf,
                violations,
                elapsed: pf.elapsed,
            })
        })
        .collect()
}

/// One row of the restoration table: mean bound violation (p.u.), mean
/// thermal violation (MVA) and mean time over converged instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestoreSummary {
    pub instances: usize,
    pub converged: usize,
    pub mean_bound_pu: f64,
    pub mean_thermal_mva: f64,
    pub mean_time_s: f64,
}

impl RestoreSummary {
    pub const CSV_HEADER: &'static str = "method,bound_pu,thermal_mva,time_s,converged,instances";

    pub fn from_records(records: &[PfRecord]) -> Self {
        let ok: Vec<&ViolationReport> = records.iter().filter_map(|r| r.violations.as_ref()).collect();
        let n = ok.len().max(1) as f64;
        Self {
            instances: records.len(),
            converged: ok.len(),
            mean_bound_pu: ok.iter().map(|v| v.max_bound).sum::<f64>() / n,
            mean_thermal_mva: ok.iter().map(|v| v.max_thermal_mva).sum::<f64>() / n,
            mean_time_s: records.iter().filter(|r| r.converged).map(|r| r.elapsed).sum::<f64>() / n,
        }
    }

    pub fn csv_row(&self, method: &str) -> String {
        format!(
            "{method},{:e},{:e},{:e},{},{}",
            self.mean_bound_pu, self.mean_thermal_mva, self.mean_time_s, self.converged, self.instances
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{parse_matpower, tests::TWO_BUS};

    #[test]
    fn jacobian_matches_central_differences() {
        let path = format!("{}/../../data/case14.m", env!("CARGO_MANIFEST_DIR"));
        let net = Network::load(path).unwrap();
        let lay = Layout::new(&net);
        let va: Vec<f64> = (0..net.n_bus()).map(|i| if i == net.slack_bus { 0.0 } else { -0.01 * i as f64 }).collect();
        let vm: Vec<f64> = (0..net.n_bus()).map(|i| 1.0 + 0.003 * (i % 4) as f64).collect();
        let (_, _, jac) = injections(&net, &va, &vm, Some(&lay));
        let jac = jac.unwrap();
        let h = 1e-7;
        let eval = |va: &[f64], vm: &[f64]| {
            let (p, q, _) = injections(&net, va, vm, None);
            let mut f = vec![0.0; lay.n];
            for i in 0..net.n_bus() {
                if let Some(r) = lay.p_row[i] {
                    f[r] = p[i];
                }
                if let Some(r) = lay.q_row[i] {
                    f[r] = q[i];
                }
            }
            f
        };
        for i in 0..net.n_bus() {
            for (which, col) in [(0, lay.theta[i]), (1, lay.vm[i])] {
                let Some(c) = col else { continue };
                let (mut ap, mut am, mut mp, mut mm) = (va.clone(), va.clone(), vm.clone(), vm.clone());
                if which == 0 {
                    ap[i] += h;
                    am[i] -= h;
                } else {
                    mp[i] += h;
                    mm[i] -= h;
                }
                let (fp, fm) = (eval(&ap, &mp), eval(&am, &mm));
                for r in 0..lay.n {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    assert!((fd - jac[(r, c)]).abs() < 1e-5 * (1.0 + fd.abs()), "J[{r},{c}] {fd} vs {}", jac[(r, c)]);
                }
            }
        }
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let net = parse_matpower(TWO_BUS).unwrap();
        let inst = Instance::baseline(&net);
        let seed = Solution::flat(&net);
        assert!(newton_pf(&net, &inst, &seed, &PfOptions { tol: 0.0, max_iter: 5 }).is_err());
        assert!(newton_pf(&net, &inst, &seed, &PfOptions { tol: 1e-8, max_iter: 0 }).is_err());
    }

    #[test]
    fn two_bus_with_pq_load_converges() {
        let net = parse_matpower(TWO_BUS).unwrap();
        let inst = Instance::baseline(&net);
        let pf = newton_pf(&net, &inst, &Solution::flat(&net), &PfOptions::default()).unwrap();
        assert!(pf.converged, "{pf:?}");
        let (dp, dq) = acopf::balance_residuals(&net, &inst, &pf.solution).unwrap();
        assert!(dp.iter().chain(&dq).all(|r| r.abs() <= 1e-8));
        assert!(pf.solution.vm[1] < 1.0);
    }
}
