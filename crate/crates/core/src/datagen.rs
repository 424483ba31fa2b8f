//! Perturbed-load instance generation and JSONL dataset persistence.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acopf::{self, Instance};
use crate::grid::Network;
use crate::ipm::{self, DualSolution, IpmConfig};
use crate::linalg::Mat;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid perturbation config: {0}")]
    InvalidConfig(&'static str),
    #[error("no admissible load draw after {MAX_REDRAWS} redraws for instance {0}; gauss_sigma too large for active_spread")]
    RejectionFailure(usize),
    #[error("split fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("dataset line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("dataset record {id} has inconsistent dimensions")]
    Dimension { id: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Solver(#[from] ipm::IpmError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    pub active_spread: f64,
    pub corr: f64,
    pub gauss_sigma: f64,
    pub reactive_low: f64,
    pub reactive_high: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self { active_spread: 0.15, corr: 0.5, gauss_sigma: 0.05, reactive_low: 0.8, reactive_high: 1.0, seed: 0 }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(self.active_spread > 0.0 && self.active_spread < 1.0) {
            return Err(DatagenError::InvalidConfig("active_spread must lie in (0, 1)"));
        }
        if !(self.corr >= 0.0 && self.corr < 1.0) {
            return Err(DatagenError::InvalidConfig("corr must lie in [0, 1)"));
        }
        if !(self.gauss_sigma >= 0.0 && self.gauss_sigma.is_finite()) {
            return Err(DatagenError::InvalidConfig("gauss_sigma must be non-negative"));
        }
        if !(self.reactive_low <= self.reactive_high) {
            return Err(DatagenError::InvalidConfig("reactive_low must not exceed reactive_high"));
        }
        Ok(())
    }
}

fn instance_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Active multipliers: equicorrelated Gaussian around 1, redrawn as a whole
/// vector until every entry lies inside the spread window.
fn active_multipliers(rng: &mut ChaCha8Rng, n: usize, cfg: &PerturbConfig, k: usize) -> Result<Vec<f64>, DatagenError> {
    let shared = cfg.corr.sqrt();
    let own = (1.0 - cfg.corr).sqrt();
    let (lo, hi) = (1.0 - cfg.active_spread, 1.0 + cfg.active_spread);
    let mut m = vec![0.0; n];
    for _ in 0..MAX_REDRAWS {
        let g0: f64 = rng.sample(StandardNormal);
        for mi in m.iter_mut() {
            let gi: f64 = rng.sample(StandardNormal);
            *mi = 1.0 + cfg.gauss_sigma * (shared * g0 + own * gi);
        }
        if m.iter().all(|&v| (lo..=hi).contains(&v)) {
            return Ok(m);
        }
    }
    Err(DatagenError::RejectionFailure(k))
}

/// Instance `k` of the perturbation stream; a pure function of `(cfg.seed, k)`.
pub fn perturb(net: &Network, cfg: &PerturbConfig, k: usize) -> Result<Instance, DatagenError> {
    cfg.validate()?;
    let mut rng = instance_rng(cfg.seed, k);
    let m = active_multipliers(&mut rng, net.n_load(), cfg, k)?;
    let span = cfg.reactive_high - cfg.reactive_low;
    let mut inst = Instance::baseline(net);
    for (i, load) in net.loads.iter().enumerate() {
        inst.pd[i] = m[i] * load.pd_base;
        let u = cfg.reactive_low + span * rng.random::<f64>();
        inst.qd[i] = u * load.qd_base;
    }
    Ok(inst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub instance_id: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dual: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub network_fingerprint: String,
    pub dim_x: usize,
    pub dim_y: usize,
    pub dim_dual: usize,
    pub n_records: usize,
    pub requested: usize,
    pub skipped: usize,
    #[serde(default)]
    pub perturb: Option<PerturbConfig>,
    #[serde(default)]
    pub solver: Option<IpmConfig>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn empty(net: &Network) -> Self {
        Self {
            header: DatasetHeader {
                format_version: DATASET_FORMAT_VERSION,
                network_fingerprint: net.fingerprint(),
                dim_x: acopf::dim_x(net),
                dim_y: acopf::dim_y(net),
                dim_dual: DualSolution::dim(net),
                n_records: 0,
                requested: 0,
                skipped: 0,
                perturb: None,
                solver: None,
                warnings: Vec::new(),
            },
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Same header, different records.
    pub fn with_records(&self, records: Vec<Record>) -> Self {
        let mut header = self.header.clone();
        header.n_records = records.len();
        Self { header, records }
    }

    fn stack(&self, dim: usize, f: impl Fn(&Record) -> &[f64]) -> Mat<f64> {
        let mut data = Vec::with_capacity(self.records.len() * dim);
        for r in &self.records {
            data.extend_from_slice(f(r));
        }
        Mat::from_vec(self.records.len(), dim, data)
    }

    pub fn x_matrix(&self) -> Mat<f64> {
        self.stack(self.header.dim_x, |r| &r.x)
    }

    pub fn y_matrix(&self) -> Mat<f64> {
        self.stack(self.header.dim_y, |r| &r.y)
    }

    pub fn dual_matrix(&self) -> Mat<f64> {
        self.stack(self.header.dim_dual, |r| &r.dual)
    }

    pub fn check_dims(&self) -> Result<(), DatagenError> {
        let h = &self.header;
        for r in &self.records {
            if r.x.len() != h.dim_x || r.y.len() != h.dim_y || r.dual.len() != h.dim_dual {
                return Err(DatagenError::Dimension { id: r.instance_id });
            }
        }
        Ok(())
    }

    /// Header line then one record per line; numbers carry 17 significant digits.
    pub fn to_jsonl(&self) -> String {
        let mut header = self.header.clone();
        header.n_records = self.records.len();
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            write_record(&mut out, r);
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), DatagenError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(self.to_jsonl().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, DatagenError> {
        let mut lines = reader.lines().enumerate();
        let header: DatasetHeader = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?)
                .map_err(|e| DatagenError::Format { line: 1, msg: e.to_string() })?,
            None => return Err(DatagenError::Format { line: 1, msg: "missing header".into() }),
        };
        let mut records = Vec::with_capacity(header.n_records);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: Record =
                serde_json::from_str(&line).map_err(|e| DatagenError::Format { line: i + 1, msg: e.to_string() })?;
            records.push(r);
        }
        if records.len() != header.n_records {
            return Err(DatagenError::Format {
                line: records.len() + 1,
                msg: format!("header announces {} records, found {}", header.n_records, records.len()),
            });
        }
        let ds = Self { header, records };
        ds.check_dims()?;
        Ok(ds)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, DatagenError> {
        Self::from_jsonl(BufReader::new(std::fs::File::open(path)?))
    }
}

fn write_numbers(out: &mut String, v: &[f64]) {
    out.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{x:.16e}").expect("write to string");
    }
    out.push(']');
}

fn write_record(out: &mut String, r: &Record) {
    write!(out, "{{\"instance_id\":{},\"x\":", r.instance_id).expect("write to string");
    write_numbers(out, &r.x);
    out.push_str(",\"y\":");
    write_numbers(out, &r.y);
    out.push_str(",\"dual\":");
    write_numbers(out, &r.dual);
    write!(out, ",\"objective\":{:.16e},\"iterations\":{}}}", r.objective, r.iterations).expect("write to string");
}

/// Runs `f` on a pool capped at `workers` threads (0 = rayon default).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R, DatagenError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| DatagenError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Perturbs and solves instances `0..n` from flat start. Records are ordered
/// by instance index; non-optimal solves are skipped and counted.
pub fn generate(
    net: &Network,
    cfg: &PerturbConfig,
    n: usize,
    solver: &IpmConfig,
    workers: usize,
) -> Result<Dataset, DatagenError> {
    cfg.validate()?;
    let start = ipm::flat_start(net);
    let start = ipm::StartPoint { mu0: solver.mu_init_flat, ..start };
    let solve_one = |k: usize| -> Result<Option<Record>, DatagenError> {
        let inst = perturb(net, cfg, k)?;
        let res = ipm::solve(net, &inst, &start, solver)?;
        if !res.is_optimal() {
            log::debug!("instance {k}: {:?} after {} iterations", res.status, res.iterations);
            return Ok(None);
        }
        Ok(Some(Record {
            instance_id: k,
            x: acopf::encode_x(&inst),
            y: acopf::encode_y(&res.solution),
            dual: res.duals.encode(),
            objective: res.objective,
            iterations: res.iterations,
        }))
    };
    let results: Vec<Result<Option<Record>, DatagenError>> =
        with_workers(workers, || (0..n).into_par_iter().map(solve_one).collect())?;

    let mut records = Vec::with_capacity(n);
    for r in results {
        if let Some(rec) = r? {
            records.push(rec);
        }
    }
    let skipped = n - records.len();
    let mut ds = Dataset::empty(net);
    ds.header.requested = n;
    ds.header.skipped = skipped;
    ds.header.perturb = Some(cfg.clone());
    ds.header.solver = Some(solver.clone());
    if skipped > 0 {
        log::warn!("{skipped} of {n} instances did not reach optimality and were skipped");
    }
    if n > 0 && skipped * 10 > n {
        ds.header.warnings.push(format!("skip rate {skipped}/{n} exceeds 10%"));
    }
    ds.header.n_records = records.len();
    ds.records = records;
    Ok(ds)
}

/// Deterministic shuffled split; the first part gets `round(frac·n)` records.
pub fn split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset), DatagenError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DatagenError::InvalidFraction(train_frac));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_frac * ds.len() as f64).round() as usize;
    let pick = |ix: &[usize]| ds.with_records(ix.iter().map(|&i| ds.records[i].clone()).collect());
    Ok((pick(&idx[..n_train]), pick(&idx[n_train..])))
}
