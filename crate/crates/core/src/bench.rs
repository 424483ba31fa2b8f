//! Warm-start benchmark: flat-start solves against solves started from
//! predicted (or previously solved) primal and dual points.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acopf::{self, AcopfError};
use crate::datagen::Dataset;
use crate::grid::Network;
use crate::ipm::{self, DualSolution, IpmConfig, IpmError, SolveStatus, StartPoint};
use crate::train::{Predictor, TrainError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("model '{label}' was trained on network {model}, test data is from {data}")]
    Fingerprint { label: String, model: String, data: String },
    #[error("invalid benchmark config: {0}")]
    Config(String),
    #[error("trace parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Ipm(#[from] IpmError),
    #[error(transparent)]
    Acopf(#[from] AcopfError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub const FLAT: &str = "Flat";
pub const FLAT_CONTROL: &str = "Flat(control)";
pub const SELF_P: &str = "WS:AC-OPF(P)";
pub const SELF_PD: &str = "WS:AC-OPF(P+D)";

/// A learned warm-start source: a primal predictor and optionally a dual one.
#[derive(Clone, Copy)]
pub struct ModelFamily<'a> {
    /// Label used in method names, e.g. `Compact` gives `WS:Compact(P)`.
    pub label: &'a str,
    pub primal: &'a dyn Predictor,
    pub dual: Option<&'a dyn Predictor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub ipm: IpmConfig,
    /// Initial barrier parameter of primal-dual warm starts.
    pub mu0_pd: f64,
    pub self_warm_start: bool,
    /// Repeat the flat solve as a control method.
    pub flat_control: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { ipm: IpmConfig::default(), mu0_pd: 1e-3, self_warm_start: true, flat_control: false }
    }
}

/// One solve of one instance by one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub instance_id: usize,
    pub method: String,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Solver time only.
    pub elapsed: f64,
    /// Time to produce the start point (model inference or the first solve).
    pub inference: f64,
}

impl TraceRow {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    /// Mean solve seconds for the flat start; mean elapsed ratio otherwise.
    pub time: f64,
    pub mean_iter_ratio: f64,
    pub median_iter_ratio: f64,
    pub mean_iterations: f64,
    pub mean_inference: f64,
    /// Optimal solves counted in the ratios.
    pub solved: usize,
    /// Non-optimal solves on instances whose flat start was optimal.
    pub failed: usize,
}

impl MethodRow {
    pub fn success_rate(&self) -> f64 {
        let n = self.solved + self.failed;
        if n == 0 {
            0.0
        } else {
            self.solved as f64 / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartReport {
    pub methods: Vec<MethodRow>,
    /// Instances dropped because the flat-start solve was not optimal.
    pub flat_failures: usize,
    pub instances: usize,
    pub trace: Vec<TraceRow>,
}

pub const REPORT_CSV_HEADER: &str =
    "method,time,mean_iter_ratio,median_iter_ratio,mean_iterations,mean_inference_s,solved,failed,success_rate";
pub const TRACE_CSV_HEADER: &str = "instance_id,method,status,iterations,elapsed_s,inference_s,iter_ratio,elapsed_ratio";

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Flat-start row of each instance, keyed by instance id.
fn flat_rows(trace: &[TraceRow]) -> std::collections::BTreeMap<usize, &TraceRow> {
    trace.iter().filter(|r| r.method == FLAT).map(|r| (r.instance_id, r)).collect()
}

impl WarmStartReport {
    /// Aggregates a per-instance trace; method order follows first appearance.
    pub fn from_trace(trace: Vec<TraceRow>) -> Self {
        let flat = flat_rows(&trace);
        let mut order: Vec<&str> = Vec::new();
        for r in &trace {
            if !order.contains(&r.method.as_str()) {
                order.push(&r.method);
            }
        }
        let methods = order
            .iter()
            .map(|&m| {
                let mut iter_ratio = Vec::new();
                let mut time = Vec::new();
                let mut iters = Vec::new();
                let mut inference = Vec::new();
                let mut failed = 0;
                for r in trace.iter().filter(|r| r.method == m) {
                    let Some(f) = flat.get(&r.instance_id).filter(|f| f.is_optimal()) else { continue };
                    if !r.is_optimal() {
                        failed += 1;
                        continue;
                    }
                    iter_ratio.push(r.iterations as f64 / f.iterations as f64);
                    time.push(if m == FLAT { r.elapsed } else { r.elapsed / f.elapsed });
                    iters.push(r.iterations as f64);
                    inference.push(r.inference);
                }
                MethodRow {
                    method: m.to_string(),
                    time: mean(&time),
                    mean_iter_ratio: mean(&iter_ratio),
                    median_iter_ratio: median(&mut iter_ratio.clone()),
                    mean_iterations: mean(&iters),
                    mean_inference: mean(&inference),
                    solved: iter_ratio.len(),
                    failed,
                }
            })
            .collect();
        let flat_failures = flat.values().filter(|f| !f.is_optimal()).count();
        Self { methods, flat_failures, instances: flat.len(), trace }
    }

    pub fn method(&self, name: &str) -> Option<&MethodRow> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn report_csv(&self) -> String {
        let mut s = String::from(REPORT_CSV_HEADER);
        s.push('\n');
        for m in &self.methods {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{},{},{:e}\n",
                m.method,
                m.time,
                m.mean_iter_ratio,
                m.median_iter_ratio,
                m.mean_iterations,
                m.mean_inference,
                m.solved,
                m.failed,
                m.success_rate()
            ));
        }
        s
    }

    pub fn trace_csv(&self) -> String {
        let flat = flat_rows(&self.trace);
        let mut s = String::from(TRACE_CSV_HEADER);
        s.push('\n');
        for r in &self.trace {
            let (ir, er) = match flat.get(&r.instance_id) {
                Some(f) => (r.iterations as f64 / f.iterations as f64, r.elapsed / f.elapsed),
                None => (f64::NAN, f64::NAN),
            };
            s.push_str(&format!(
                "{},{},{},{},{:e},{:e},{:e},{:e}\n",
                r.instance_id,
                r.method,
                status_name(r.status),
                r.iterations,
                r.elapsed,
                r.inference,
                ir,
                er
            ));
        }
        s
    }
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::MaxIter => "max_iter",
        SolveStatus::NumericalFailure => "numerical_failure",
    }
}

/// Reads back the raw columns of a trace CSV; ratio columns are ignored.
pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>, BenchError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRACE_CSV_HEADER => {}
        _ => return Err(BenchError::Parse { line: 1, msg: "unexpected header".into() }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| BenchError::Parse { line: i + 1, msg: msg.to_string() };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err("expected 8 fields"));
        }
        let status = match f[2] {
            "optimal" => SolveStatus::Optimal,
            "max_iter" => SolveStatus::MaxIter,
            "numerical_failure" => SolveStatus::NumericalFailure,
            _ => return Err(err("unknown status")),
        };
        out.push(TraceRow {
            instance_id: f[0].parse().map_err(|_| err("bad instance id"))?,
            method: f[1].to_string(),
            status,
            iterations: f[3].parse().map_err(|_| err("bad iteration count"))?,
            elapsed: f[4].parse().map_err(|_| err("bad elapsed"))?,
            inference: f[5].parse().map_err(|_| err("bad inference time"))?,
        });
    }
    Ok(out)
}

/// Number of optimal solves finishing within each time limit, one column
/// per method.
pub fn solved_within_curve(report: &WarmStartReport, time_grid: &[f64]) -> String {
    let names: Vec<&str> = report.methods.iter().map(|m| m.method.as_str()).collect();
    let mut s = String::from("t");
    for n in &names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for &t in time_grid {
        s.push_str(&format!("{t:e}"));
        for n in &names {
            let c = report.trace.iter().filter(|r| r.method == *n && r.is_optimal() && r.elapsed <= t).count();
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
    }
    s
}

/// `n` evenly spaced limits from zero to the slowest solve in the trace.
pub fn default_time_grid(report: &WarmStartReport, n: usize) -> Vec<f64> {
    let max = report.trace.iter().map(|r| r.elapsed).fold(0.0, f64::max);
    if n < 2 {
        return vec![max];
    }
    (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect()
}

fn row(instance_id: usize, method: &str, res: &ipm::SolveResult, inference: f64) -> TraceRow {
    TraceRow {
        instance_id,
        method: method.to_string(),
        status: res.status,
        iterations: res.iterations,
        elapsed: res.elapsed,
        inference,
    }
}

/// Solves every test instance from a flat start and from each enabled warm
/// start. Methods of one instance run back to back; instances run in
/// parallel on the current rayon pool.
pub fn run_suite(
    net: &Network,
    test: &Dataset,
    families: &[ModelFamily<'_>],
    cfg: &BenchConfig,
) -> Result<WarmStartReport, BenchError> {
    cfg.ipm.validate()?;
    if !(cfg.mu0_pd > 0.0 && cfg.mu0_pd.is_finite()) {
        return Err(BenchError::Config("mu0_pd must be positive".into()));
    }
    let data_fp = &test.header.network_fingerprint;
    if net.fingerprint() != *data_fp {
        return Err(BenchError::Fingerprint { label: "network".into(), model: net.fingerprint(), data: data_fp.clone() });
    }
    for f in families {
        for p in std::iter::once(f.primal).chain(f.dual) {
            if p.fingerprint() != data_fp {
                return Err(BenchError::Fingerprint {
                    label: f.label.into(),
                    model: p.fingerprint().into(),
                    data: data_fp.clone(),
                });
            }
        }
    }
    let names: Vec<(String, String)> =
        families.iter().map(|f| (format!("WS:{}(P)", f.label), format!("WS:{}(P+D)", f.label))).collect();
    let flat = StartPoint { mu0: cfg.ipm.mu_init_flat, ..ipm::flat_start(net) };

    let per_instance = |rec: &crate::datagen::Record| -> Result<Vec<TraceRow>, BenchError> {
        let inst = acopf::decode_x(net, &rec.x)?;
        let mut rows = Vec::new();
        let base = ipm::solve(net, &inst, &flat, &cfg.ipm)?;
        rows.push(row(rec.instance_id, FLAT, &base, 0.0));
        if cfg.flat_control {
            let r = ipm::solve(net, &inst, &flat, &cfg.ipm)?;
            rows.push(row(rec.instance_id, FLAT_CONTROL, &r, 0.0));
        }
        if cfg.self_warm_start {
            let sp = StartPoint::primal(base.solution.clone(), cfg.ipm.mu_init_flat);
            rows.push(row(rec.instance_id, SELF_P, &ipm::solve(net, &inst, &sp, &cfg.ipm)?, base.elapsed));
            let spd = StartPoint::primal_dual(base.solution.clone(), base.duals.clone(), cfg.mu0_pd);
            rows.push(row(rec.instance_id, SELF_PD, &ipm::solve(net, &inst, &spd, &cfg.ipm)?, base.elapsed));
        }
        for (f, (p_name, pd_name)) in families.iter().zip(&names) {
            let clock = Instant::now();
            let primal = acopf::decode_y(net, &f.primal.predict_f64(&rec.x)?)?;
            let t_primal = clock.elapsed().as_secs_f64();
            let sp = StartPoint::primal(primal.clone(), cfg.ipm.mu_init_flat);
            rows.push(row(rec.instance_id, p_name, &ipm::solve(net, &inst, &sp, &cfg.ipm)?, t_primal));
            if let Some(d) = f.dual {
                let clock = Instant::now();
                let duals = DualSolution::decode(net, &d.predict_f64(&rec.x)?)?;
                let t_dual = clock.elapsed().as_secs_f64();
                let spd = StartPoint::primal_dual(primal, duals, cfg.mu0_pd);
                rows.push(row(rec.instance_id, pd_name, &ipm::solve(net, &inst, &spd, &cfg.ipm)?, t_primal + t_dual));
            }
        }
        Ok(rows)
    };
    let per: Vec<Result<Vec<TraceRow>, BenchError>> = test.records.par_iter().map(per_instance).collect();
    let mut trace = Vec::new();
    for r in per {
        trace.extend(r?);
    }
    Ok(WarmStartReport::from_trace(trace))
}
