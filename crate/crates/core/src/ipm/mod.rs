//! Primal-dual interior-point solver for the reduced AC-OPF.
//!
//! Bounds on `pg`, `qg` and `vm` are handled with log barriers, thermal limits
//! as `h(x) + s = 0` with a positive slack, and the slack angle is fixed at
//! zero. Each iteration solves the condensed primal-dual system with an
//! envelope `LDLᵀ` factorization and corrects the inertia by adding `δ·I` to
//! the Hessian block.

mod model;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acopf::{AcopfError, Instance, Solution};
use crate::grid::Network;
use crate::linalg::{norm_inf, EnvelopeLdl};
use model::{Eval, OpfModel};

#[derive(Debug, Error)]
pub enum IpmError {
    #[error(transparent)]
    Dimension(#[from] AcopfError),
    #[error("invalid start point: {0}")]
    InvalidStart(&'static str),
    #[error("invalid solver config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Flat,
    Primal,
    PrimalDual,
}

/// Multipliers in the layout used by datasets and warm starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lam_p: Vec<f64>,
    pub lam_q: Vec<f64>,
    /// One entry per directed branch end, `2k` = from end, `2k+1` = to end;
    /// zero for unrated branches.
    pub mu_thermal: Vec<f64>,
    /// Lower/upper bound multipliers over `[pg; qg; vm]`.
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
}

impl DualSolution {
    pub fn zeros(net: &Network) -> Self {
        let nz = 2 * net.n_gen() + net.n_bus();
        Self {
            lam_p: vec![0.0; net.n_bus()],
            lam_q: vec![0.0; net.n_bus()],
            mu_thermal: vec![0.0; 2 * net.n_branch()],
            z_lower: vec![0.0; nz],
            z_upper: vec![0.0; nz],
        }
    }

    pub fn dim(net: &Network) -> usize {
        2 * net.n_bus() + 2 * net.n_branch() + 2 * (2 * net.n_gen() + net.n_bus())
    }

    pub fn check(&self, net: &Network) -> Result<(), AcopfError> {
        let nz = 2 * net.n_gen() + net.n_bus();
        let dims = [
            ("lam_p", net.n_bus(), self.lam_p.len()),
            ("lam_q", net.n_bus(), self.lam_q.len()),
            ("mu_thermal", 2 * net.n_branch(), self.mu_thermal.len()),
            ("z_lower", nz, self.z_lower.len()),
            ("z_upper", nz, self.z_upper.len()),
        ];
        for (what, expected, got) in dims {
            if expected != got {
                return Err(AcopfError::Dimension { what, expected, got });
            }
        }
        Ok(())
    }

    /// Flattened `[lam_p; lam_q; mu_thermal; z_lower; z_upper]`.
    pub fn encode(&self) -> Vec<f64> {
        [&self.lam_p, &self.lam_q, &self.mu_thermal, &self.z_lower, &self.z_upper]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn decode(net: &Network, v: &[f64]) -> Result<Self, AcopfError> {
        let expected = Self::dim(net);
        if v.len() != expected {
            return Err(AcopfError::Dimension { what: "dual vector", expected, got: v.len() });
        }
        let nb = net.n_bus();
        let ne = 2 * net.n_branch();
        let nz = 2 * net.n_gen() + nb;
        let mut it = v.iter().copied();
        let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<f64>>();
        Ok(Self {
            lam_p: take(nb),
            lam_q: take(nb),
            mu_thermal: take(ne),
            z_lower: take(nz),
            z_upper: take(nz),
        })
    }

    /// Range of the encoded vector holding sign-constrained multipliers.
    pub fn nonnegative_range(net: &Network) -> std::ops::Range<usize> {
        2 * net.n_bus()..Self::dim(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartPoint {
    pub kind: StartKind,
    pub primal: Option<Solution>,
    pub duals: Option<DualSolution>,
    pub mu0: f64,
}

impl StartPoint {
    pub fn primal(sol: Solution, mu0: f64) -> Self {
        Self { kind: StartKind::Primal, primal: Some(sol), duals: None, mu0 }
    }

    pub fn primal_dual(sol: Solution, duals: DualSolution, mu0: f64) -> Self {
        Self { kind: StartKind::PrimalDual, primal: Some(sol), duals: Some(duals), mu0 }
    }

    fn validate(&self) -> Result<(), IpmError> {
        if !(self.mu0 > 0.0 && self.mu0.is_finite()) {
            return Err(IpmError::InvalidStart("mu0 must be positive"));
        }
        if self.kind != StartKind::Flat && self.primal.is_none() {
            return Err(IpmError::InvalidStart("warm start without primal values"));
        }
        if self.kind == StartKind::PrimalDual && self.duals.is_none() {
            return Err(IpmError::InvalidStart("primal-dual start without duals"));
        }
        Ok(())
    }
}

/// Starting point with `pg`, `qg`, `vm` at their lower limits and zero angles.
pub fn flat_start(net: &Network) -> StartPoint {
    let sol = Solution {
        pg: net.generators.iter().map(|g| g.pg_min).collect(),
        qg: net.generators.iter().map(|g| g.qg_min).collect(),
        vm: net.buses.iter().map(|b| b.v_min).collect(),
        va: vec![0.0; net.n_bus()],
    };
    StartPoint { kind: StartKind::Flat, primal: Some(sol), duals: None, mu0: IpmConfig::default().mu_init_flat }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpmConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub mu_init_flat: f64,
    pub mu_init_warm: f64,
    pub fraction_to_boundary: f64,
    /// Record a per-iteration trace in the result.
    pub trace: bool,
}

impl Default for IpmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 300,
            mu_init_flat: 0.1,
            mu_init_warm: 1e-3,
            fraction_to_boundary: 0.995,
            trace: false,
        }
    }
}

impl IpmConfig {
    pub fn validate(&self) -> Result<(), IpmError> {
        if !(self.tol > 0.0) {
            return Err(IpmError::InvalidConfig("tol must be positive"));
        }
        if !(self.fraction_to_boundary > 0.0 && self.fraction_to_boundary < 1.0) {
            return Err(IpmError::InvalidConfig("fraction_to_boundary must lie in (0, 1)"));
        }
        if !(self.mu_init_flat > 0.0 && self.mu_init_warm > 0.0) {
            return Err(IpmError::InvalidConfig("initial barrier parameters must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterTrace {
    pub iter: usize,
    pub mu: f64,
    pub primal_inf: f64,
    pub dual_inf: f64,
    pub step_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub solution: Solution,
    pub duals: DualSolution,
    pub objective: f64,
    pub iterations: usize,
    pub elapsed: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<IterTrace>,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

pub const TRACE_CSV_HEADER: &str = "iter,mu,primal_inf,dual_inf,step_len";

pub fn trace_csv(trace: &[IterTrace]) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for t in trace {
        out.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", t.iter, t.mu, t.primal_inf, t.dual_inf, t.step_len));
    }
    out
}

/// Objective scaling used internally; reported duals are unscaled.
pub fn objective_scale(net: &Network) -> f64 {
    OpfModel::new(net, &Instance::baseline(net)).obj_scale
}

const MIN_MULTIPLIER: f64 = 1e-8;
const ERROR_SCALE_MAX: f64 = 100.0;
const KAPPA_EPS: f64 = 10.0;
const KAPPA_SIGMA: f64 = 1e10;
const DELTA_MIN: f64 = 1e-8;
const DELTA_MAX: f64 = 1e40;
const PIVOT_TOL: f64 = 1e-30;

/// Primal-dual iterate. Bound multipliers are stored per variable and are
/// zero where the bound is infinite.
#[derive(Debug, Clone)]
struct Iterate {
    x: Vec<f64>,
    s: Vec<f64>,
    lam: Vec<f64>,
    nu: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
}

struct Errors {
    total: f64,
    primal: f64,
    dual: f64,
}

pub fn solve(net: &Network, inst: &Instance, start: &StartPoint, cfg: &IpmConfig) -> Result<SolveResult, IpmError> {
    cfg.validate()?;
    start.validate()?;
    inst.check(net)?;
    if let Some(p) = &start.primal {
        p.check(net)?;
    }
    if let Some(d) = &start.duals {
        d.check(net)?;
    }
    let model = OpfModel::new(net, inst);
    let mut it = initial_iterate(&model, start);
    let lambda_pos = model.is_lambda_position();
    let tau = cfg.fraction_to_boundary;
    let mut mu = start.mu0;

    let clock = Instant::now();
    let mut trace = Vec::new();
    let mut best: Option<(f64, Iterate)> = None;
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut last_delta = 0.0;

    loop {
        let ev = model.eval(&it.x);
        let e0 = errors(&model, &ev, &it, 0.0);
        if !e0.total.is_finite() {
            status = SolveStatus::NumericalFailure;
            break;
        }
        if best.as_ref().is_none_or(|(e, _)| e0.total < *e) {
            best = Some((e0.total, it.clone()));
        }
        if e0.total <= cfg.tol {
            status = SolveStatus::Optimal;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        let mu_min = cfg.tol / 10.0;
        while mu > mu_min && errors(&model, &ev, &it, mu).total <= KAPPA_EPS * mu {
            mu = (0.2 * mu).max(mu_min);
        }

        let Some((step, delta)) = newton_step(&model, &ev, &it, mu, &lambda_pos) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        if delta > 0.0 {
            last_delta = delta;
        }
        let alpha_p = max_step(&model, &it.x, &step.x, &it.s, &step.s, tau);
        let alpha_d = max_dual_step(&model, &it, &step, tau);
        apply_step(&model, &mut it, &step, alpha_p, alpha_d, mu);
        iterations += 1;
        if cfg.trace {
            trace.push(IterTrace { iter: iterations, mu, primal_inf: e0.primal, dual_inf: e0.dual, step_len: alpha_p });
        }
    }
    log::debug!("ipm finished: {status:?} after {iterations} iterations (last delta {last_delta:e})");

    if status != SolveStatus::Optimal {
        if let Some((_, b)) = best {
            it = b;
        }
    }
    let elapsed = clock.elapsed().as_secs_f64();
    let (solution, duals) = extract(&model, &it);
    let objective = crate::acopf::objective(net, &solution)?;
    Ok(SolveResult { status, solution, duals, objective, iterations, elapsed, trace })
}

fn interior_margin(lo: f64, hi: f64) -> f64 {
    let range = hi - lo;
    if range.is_finite() {
        1e-4f64.max(1e-2 * range)
    } else {
        1e-4
    }
}

fn initial_iterate(model: &OpfModel, start: &StartPoint) -> Iterate {
    let net = model.net;
    let flat = flat_start(net);
    let p = start.primal.as_ref().or(flat.primal.as_ref()).expect("flat start has primal values");
    let mut x = vec![0.0; model.n];
    let va_ref = p.va[net.slack_bus];
    for (i, slot) in model.va_idx.iter().enumerate() {
        if let Some(k) = slot {
            x[*k] = p.va[i] - va_ref;
        }
    }
    for i in 0..net.n_bus() {
        x[model.vm_idx[i]] = p.vm[i];
    }
    for k in 0..net.n_gen() {
        x[model.pg_idx[k]] = p.pg[k];
        x[model.qg_idx[k]] = p.qg[k];
    }
    for &v in &model.bounded {
        let (lo, hi) = (model.lo[v], model.hi[v]);
        let margin = interior_margin(lo, hi);
        x[v] = if hi - lo <= 2.0 * margin { 0.5 * (lo + hi) } else { x[v].clamp(lo + margin, hi - margin) };
    }

    let ev = model.eval(&x);
    let s: Vec<f64> = model
        .thermal
        .iter()
        .zip(&ev.h)
        .map(|(t, &h)| (-h).max(1e-4f64.max(1e-2 * t.s2)))
        .collect();

    let mu0 = start.mu0;
    let mut lam = vec![0.0; model.m];
    let mut nu: Vec<f64> = s.iter().map(|&si| mu0 / si).collect();
    let mut zl = vec![0.0; model.n];
    let mut zu = vec![0.0; model.n];
    for &v in &model.bounded {
        zl[v] = mu0 / (x[v] - model.lo[v]);
        zu[v] = mu0 / (model.hi[v] - x[v]);
    }

    if let (StartKind::PrimalDual, Some(d)) = (start.kind, start.duals.as_ref()) {
        let nb = net.n_bus();
        let sc = model.obj_scale;
        for i in 0..nb {
            lam[i] = sc * d.lam_p[i];
            lam[nb + i] = sc * d.lam_q[i];
        }
        for (r, t) in model.thermal.iter().enumerate() {
            nu[r] = (sc * d.mu_thermal[2 * t.branch + t.end]).max(MIN_MULTIPLIER);
        }
        for (k, &v) in model.bounded.iter().enumerate() {
            zl[v] = (sc * d.z_lower[k]).max(MIN_MULTIPLIER);
            zu[v] = (sc * d.z_upper[k]).max(MIN_MULTIPLIER);
        }
    }
    Iterate { x, s, lam, nu, zl, zu }
}

fn errors(model: &OpfModel, ev: &Eval, it: &Iterate, mu: f64) -> Errors {
    let mut grad = model.lagrangian_grad(ev, &it.lam, &it.nu);
    let mut compl: f64 = 0.0;
    let mut z_sum = 0.0;
    for &v in &model.bounded {
        grad[v] += it.zu[v] - it.zl[v];
        compl = compl.max((it.zl[v] * (it.x[v] - model.lo[v]) - mu).abs());
        compl = compl.max((it.zu[v] * (model.hi[v] - it.x[v]) - mu).abs());
        z_sum += it.zl[v] + it.zu[v];
    }
    let nu_sum: f64 = it.nu.iter().sum();
    for (n, s) in it.nu.iter().zip(&it.s) {
        compl = compl.max((n * s - mu).abs());
    }
    let lam_sum: f64 = it.lam.iter().map(|l| l.abs()).sum();
    let n_z = 2 * model.bounded.len() + it.nu.len();
    let s_d = ((lam_sum + z_sum + nu_sum) / (model.m + n_z).max(1) as f64).max(ERROR_SCALE_MAX) / ERROR_SCALE_MAX;
    let s_c = ((z_sum + nu_sum) / n_z.max(1) as f64).max(ERROR_SCALE_MAX) / ERROR_SCALE_MAX;

    let hs = ev.h.iter().zip(&it.s).map(|(h, s)| (h + s).abs()).fold(0.0, f64::max);
    let primal = norm_inf(&ev.c).max(hs);
    let dual = norm_inf(&grad) / s_d;
    Errors { total: primal.max(dual).max(compl / s_c), primal, dual }
}

struct Step {
    x: Vec<f64>,
    s: Vec<f64>,
    lam: Vec<f64>,
    nu: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
}

/// Solves the condensed Newton system, returning the step and the Hessian
/// regularization that was needed.
fn newton_step(model: &OpfModel, ev: &Eval, it: &Iterate, mu: f64, lambda_pos: &[bool]) -> Option<(Step, f64)> {
    let n = model.n;
    let w: Vec<f64> = it.nu.iter().zip(&it.s).map(|(n, s)| n / s).collect();
    let mut sigma = vec![0.0; n];
    let mut rhs_x = vec![0.0; n];
    for &v in &model.bounded {
        let dl = it.x[v] - model.lo[v];
        let du = model.hi[v] - it.x[v];
        sigma[v] = it.zl[v] / dl + it.zu[v] / du;
        rhs_x[v] = mu / dl - mu / du;
    }
    let nu_eff: Vec<f64> =
        it.nu.iter().zip(&it.s).zip(&ev.h).map(|((n, s), h)| n + (mu + n * h) / s).collect();
    let g = model.lagrangian_grad(ev, &it.lam, &nu_eff);
    for (r, gv) in rhs_x.iter_mut().zip(&g) {
        *r -= gv;
    }
    let rhs_c: Vec<f64> = ev.c.iter().map(|c| -c).collect();
    let rhs = model.to_kkt(&rhs_x, &rhs_c);

    let base = model.assemble_kkt(&it.x, ev, &it.lam, &it.nu, &w, &sigma);
    let mut delta_w = 0.0;
    let mut delta_c = 0.0;
    let sol = loop {
        let mut k = base.clone();
        for (p, &is_lam) in lambda_pos.iter().enumerate() {
            if is_lam {
                if delta_c > 0.0 {
                    k.add(p, p, -delta_c);
                }
            } else if delta_w > 0.0 {
                k.add(p, p, delta_w);
            }
        }
        let f = k.factor(PIVOT_TOL);
        let inertia = f.inertia();
        if inertia.zero > 0 && delta_c == 0.0 {
            delta_c = 1e-8 * mu.powf(0.25);
            continue;
        }
        if inertia.zero == 0 && inertia.positive == n && inertia.negative == model.m {
            if let Some(sol) = refined_solve(&k, &f, &rhs) {
                break sol;
            }
        }
        delta_w = if delta_w == 0.0 { DELTA_MIN } else { 10.0 * delta_w };
        if delta_w > DELTA_MAX {
            return None;
        }
    };

    let (dx, dlam) = model.unpermute(&sol);
    let jdx = model.jac_h_times(ev, &dx);
    let mut ds = vec![0.0; it.s.len()];
    let mut dnu = vec![0.0; it.s.len()];
    for r in 0..it.s.len() {
        ds[r] = -(ev.h[r] + it.s[r]) - jdx[r];
        dnu[r] = mu / it.s[r] - it.nu[r] - w[r] * ds[r];
    }
    let mut dzl = vec![0.0; n];
    let mut dzu = vec![0.0; n];
    for &v in &model.bounded {
        let dl = it.x[v] - model.lo[v];
        let du = model.hi[v] - it.x[v];
        dzl[v] = mu / dl - it.zl[v] - it.zl[v] / dl * dx[v];
        dzu[v] = mu / du - it.zu[v] + it.zu[v] / du * dx[v];
    }
    let step = Step { x: dx, s: ds, lam: dlam, nu: dnu, zl: dzl, zu: dzu };
    let finite = step.x.iter().chain(&step.lam).chain(&step.s).all(|v| v.is_finite());
    finite.then_some((step, delta_w))
}

fn refined_solve(k: &crate::linalg::EnvelopeMatrix<f64>, f: &EnvelopeLdl<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    let mut sol = f.solve(rhs).ok()?;
    let kx = k.matvec(&sol);
    let res: Vec<f64> = rhs.iter().zip(&kx).map(|(b, a)| b - a).collect();
    if let Ok(corr) = f.solve(&res) {
        for (s, c) in sol.iter_mut().zip(&corr) {
            *s += c;
        }
    }
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

fn max_step(model: &OpfModel, x: &[f64], dx: &[f64], s: &[f64], ds: &[f64], tau: f64) -> f64 {
    let mut alpha: f64 = 1.0;
    for &v in &model.bounded {
        if dx[v] < 0.0 {
            alpha = alpha.min(-tau * (x[v] - model.lo[v]) / dx[v]);
        } else if dx[v] > 0.0 {
            alpha = alpha.min(tau * (model.hi[v] - x[v]) / dx[v]);
        }
    }
    for (si, dsi) in s.iter().zip(ds) {
        if *dsi < 0.0 {
            alpha = alpha.min(-tau * si / dsi);
        }
    }
    alpha
}

fn max_dual_step(model: &OpfModel, it: &Iterate, step: &Step, tau: f64) -> f64 {
    let mut alpha: f64 = 1.0;
    let mut limit = |z: f64, dz: f64| {
        if dz < 0.0 {
            alpha = alpha.min(-tau * z / dz);
        }
    };
    for &v in &model.bounded {
        limit(it.zl[v], step.zl[v]);
        limit(it.zu[v], step.zu[v]);
    }
    for (n, dn) in it.nu.iter().zip(&step.nu) {
        limit(*n, *dn);
    }
    alpha
}

fn apply_step(model: &OpfModel, it: &mut Iterate, step: &Step, ap: f64, ad: f64, mu: f64) {
    for (x, d) in it.x.iter_mut().zip(&step.x) {
        *x += ap * d;
    }
    for (s, d) in it.s.iter_mut().zip(&step.s) {
        *s += ap * d;
    }
    for (l, d) in it.lam.iter_mut().zip(&step.lam) {
        *l += ap * d;
    }
    let safeguard = |z: f64, slack: f64| z.clamp(mu / (KAPPA_SIGMA * slack), KAPPA_SIGMA * mu / slack);
    for (r, (n, d)) in it.nu.iter_mut().zip(&step.nu).enumerate() {
        *n = safeguard(*n + ad * d, it.s[r]);
    }
    for &v in &model.bounded {
        it.zl[v] = safeguard(it.zl[v] + ad * step.zl[v], it.x[v] - model.lo[v]);
        it.zu[v] = safeguard(it.zu[v] + ad * step.zu[v], model.hi[v] - it.x[v]);
    }
}

fn extract(model: &OpfModel, it: &Iterate) -> (Solution, DualSolution) {
    let net = model.net;
    let nb = net.n_bus();
    let va = (0..nb).map(|i| model.va_idx[i].map_or(0.0, |k| it.x[k])).collect();
    let sol = Solution {
        pg: model.pg_idx.iter().map(|&v| it.x[v]).collect(),
        qg: model.qg_idx.iter().map(|&v| it.x[v]).collect(),
        vm: model.vm_idx.iter().map(|&v| it.x[v]).collect(),
        va,
    };
    let inv = 1.0 / model.obj_scale;
    let mut duals = DualSolution::zeros(net);
    for i in 0..nb {
        duals.lam_p[i] = inv * it.lam[i];
        duals.lam_q[i] = inv * it.lam[nb + i];
    }
    for (r, t) in model.thermal.iter().enumerate() {
        duals.mu_thermal[2 * t.branch + t.end] = inv * it.nu[r];
    }
    for (k, &v) in model.bounded.iter().enumerate() {
        duals.z_lower[k] = inv * it.zl[v];
        duals.z_upper[k] = inv * it.zu[v];
    }
    (sol, duals)
}

#[cfg(test)]
mod tests;
