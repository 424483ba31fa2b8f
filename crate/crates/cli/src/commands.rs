//! Subcommand bodies. Each returns the files it read and wrote.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use compact_opf::bench::{self, BenchConfig, ModelFamily};
use compact_opf::datagen::{self, Dataset};
use compact_opf::grid::Network;
use compact_opf::restore::{self, RestoreSummary};
use compact_opf::spectra;
use compact_opf::train::{self, EpochLog, Predictor, TrainEvent, TrainMode, TrainTarget};
use compact_opf::{CompactModel64, DirectModel64};
use serde_json::Value;

use crate::config::RunConfig;

pub struct Files {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

fn need<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| anyhow!("missing {what}"))
}

fn load_network(cfg: &RunConfig) -> Result<(Network, PathBuf)> {
    let path = need(&cfg.case, "--case")?;
    let net = Network::load(path).with_context(|| format!("loading case {}", path.display()))?;
    Ok((net, path.clone()))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::read_jsonl(path).with_context(|| format!("reading dataset {}", path.display()))
}

/// Writes `text` and reads it back to confirm the bytes landed.
fn write_checked(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    let back = std::fs::read_to_string(path).with_context(|| format!("re-reading {}", path.display()))?;
    ensure!(back == text, "output {} did not read back intact", path.display());
    Ok(())
}

fn check_network(net: &Network, ds: &Dataset, path: &Path) -> Result<()> {
    ensure!(
        net.fingerprint() == ds.header.network_fingerprint,
        "dataset {} was generated on a different network",
        path.display()
    );
    Ok(())
}

pub enum LoadedModel {
    Compact(CompactModel64),
    Direct(DirectModel64),
}

impl LoadedModel {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
        let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))?;
        let m = match v.get("kind").and_then(Value::as_str) {
            Some("compact") => LoadedModel::Compact(CompactModel64::from_json(&text)?),
            Some("direct") => LoadedModel::Direct(DirectModel64::from_json(&text)?),
            other => bail!("model {} has unknown kind {other:?}", path.display()),
        };
        Ok(m)
    }

    pub fn predictor(&self) -> &dyn Predictor {
        match self {
            LoadedModel::Compact(m) => m,
            LoadedModel::Direct(m) => m,
        }
    }

    pub fn target(&self) -> TrainTarget {
        match self {
            LoadedModel::Compact(_) => TrainTarget::Primal,
            LoadedModel::Direct(m) => m.target,
        }
    }

    pub fn label(&self) -> String {
        match self {
            LoadedModel::Compact(_) => TrainMode::Compact.label().to_string(),
            LoadedModel::Direct(m) if m.target == TrainTarget::Dual => format!("{}-Dual", m.mode.label()),
            LoadedModel::Direct(m) => m.mode.label().to_string(),
        }
    }

    fn to_json(&self) -> String {
        match self {
            LoadedModel::Compact(m) => m.to_json(),
            LoadedModel::Direct(m) => m.to_json(),
        }
    }
}

pub fn gen(cfg: &RunConfig) -> Result<Files> {
    let (net, case) = load_network(cfg)?;
    let out = need(&cfg.out, "--out")?;
    let ds = datagen::generate(&net, &cfg.perturb, cfg.gen.n, &cfg.ipm, cfg.workers)?;
    let text = ds.to_jsonl();
    write_checked(out, &text)?;
    let back = load_dataset(out)?;
    ensure!(back.len() == ds.len(), "dataset {} lost records on re-read", out.display());
    log::info!("{} records written, {} skipped", ds.len(), ds.header.skipped);
    Ok(Files { inputs: vec![case], outputs: vec![out.clone()] })
}

pub fn split(cfg: &RunConfig) -> Result<Files> {
    let input = need(&cfg.dataset, "--dataset")?;
    let train_out = need(&cfg.split.train_out, "--train-out")?;
    let test_out = need(&cfg.split.test_out, "--test-out")?;
    let ds = load_dataset(input)?;
    let (a, b) = datagen::split(&ds, cfg.split.train_frac, cfg.split.seed)?;
    write_checked(train_out, &a.to_jsonl())?;
    write_checked(test_out, &b.to_jsonl())?;
    Ok(Files { inputs: vec![input.clone()], outputs: vec![train_out.clone(), test_out.clone()] })
}

pub fn pca(cfg: &RunConfig) -> Result<Files> {
    let input = need(&cfg.dataset, "--dataset")?;
    let out = need(&cfg.out, "--out")?;
    let ds = load_dataset(input)?;
    let decomp = spectra::fit_exact_pca(&ds.y_matrix(), &cfg.pca.options)?;
    let rows = spectra::evr_curve(&decomp, &cfg.pca.ratios)?;
    write_checked(out, &spectra::evr_csv(&rows))?;
    Ok(Files { inputs: vec![input.clone()], outputs: vec![out.clone()] })
}

/// Loss log path next to a model file.
pub fn loss_log_path(model: &Path) -> PathBuf {
    model.with_extension("loss.csv")
}

pub fn train(cfg: &RunConfig) -> Result<Files> {
    let input = need(&cfg.dataset, "--dataset")?;
    let out = need(&cfg.out, "--out")?;
    let ds = load_dataset(input)?;
    let mut inputs = vec![input.clone()];
    let mut log: Vec<EpochLog> = Vec::new();
    let observer = |e: &TrainEvent| {
        if let TrainEvent::Epoch(l) = e {
            log.push(*l);
        }
    };
    let model = match (cfg.train.target, cfg.train.mode) {
        (TrainTarget::Dual, _) => {
            let (net, case) = load_network(cfg)?;
            check_network(&net, &ds, input)?;
            inputs.push(case);
            LoadedModel::Direct(train::train_dual_observed(&ds, &net, &cfg.train, observer)?)
        }
        (TrainTarget::Primal, TrainMode::Compact) => {
            LoadedModel::Compact(train::train_compact_observed(&ds, &cfg.train, observer)?)
        }
        (TrainTarget::Primal, _) => LoadedModel::Direct(train::train_conventional_observed(&ds, &cfg.train, observer)?),
    };
    let text = model.to_json();
    write_checked(out, &text)?;
    let back = LoadedModel::read(out)?;
    ensure!(back.to_json() == text, "model {} does not round-trip", out.display());
    let log_path = loss_log_path(out);
    write_checked(&log_path, &train::loss_csv(&log))?;
    log::info!("{} trained, {} parameters", model.label(), model.predictor().n_params());
    Ok(Files { inputs, outputs: vec![out.clone(), log_path] })
}

pub const DUAL_CSV_HEADER: &str = "method,mean_l1,zero_baseline_l1,instances";

pub fn eval(cfg: &RunConfig) -> Result<Files> {
    let (net, case) = load_network(cfg)?;
    let input = need(&cfg.dataset, "--dataset")?;
    let model_path = need(&cfg.model, "--model")?;
    let out = need(&cfg.out, "--out")?;
    let ds = load_dataset(input)?;
    check_network(&net, &ds, input)?;
    let model = LoadedModel::read(model_path)?;
    let text = match model.target() {
        TrainTarget::Primal => {
            let rep = compact_opf::datagen::with_workers(cfg.workers, || train::evaluate(model.predictor(), &ds, &net))??;
            format!("{}\n{}\n", train::MetricsReport::CSV_HEADER, rep.csv_row(&model.label()))
        }
        TrainTarget::Dual => {
            let d = train::evaluate_dual(model.predictor(), &ds)?;
            format!("{DUAL_CSV_HEADER}\n{},{:e},{:e},{}\n", model.label(), d.mean_l1, d.zero_baseline_l1, ds.len())
        }
    };
    write_checked(out, &text)?;
    Ok(Files { inputs: vec![case, input.clone(), model_path.clone()], outputs: vec![out.clone()] })
}

pub fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.csv")
}

pub fn restore(cfg: &RunConfig) -> Result<Files> {
    let (net, case) = load_network(cfg)?;
    let input = need(&cfg.dataset, "--dataset")?;
    let model_path = need(&cfg.model, "--model")?;
    let out = need(&cfg.out, "--out")?;
    let ds = load_dataset(input)?;
    check_network(&net, &ds, input)?;
    let model = LoadedModel::read(model_path)?;
    ensure!(model.target() == TrainTarget::Primal, "restore needs a primal model");
    let recs = datagen::with_workers(cfg.workers, || restore::restore_dataset(&net, &ds, model.predictor(), &cfg.pf))??;
    write_checked(out, &restore::pf_csv(&recs))?;
    let s = RestoreSummary::from_records(&recs);
    let sum_path = summary_path(out);
    write_checked(&sum_path, &format!("{}\n{}\n", RestoreSummary::CSV_HEADER, s.csv_row(&model.label())))?;
    log::info!("{}/{} power flows converged", s.converged, s.instances);
    Ok(Files { inputs: vec![case, input.clone(), model_path.clone()], outputs: vec![out.clone(), sum_path] })
}

pub fn warmstart(cfg: &RunConfig) -> Result<Files> {
    let (net, case) = load_network(cfg)?;
    let input = need(&cfg.dataset, "--dataset")?;
    let out = need(&cfg.out, "--out")?;
    let ds = load_dataset(input)?;
    check_network(&net, &ds, input)?;
    let ws = &cfg.warmstart;
    let mut inputs = vec![case, input.clone()];
    let mut load = |p: &Option<PathBuf>| -> Result<Option<LoadedModel>> {
        match p {
            None => Ok(None),
            Some(p) => {
                inputs.push(p.clone());
                LoadedModel::read(p).map(Some)
            }
        }
    };
    let shared_dual = load(&ws.dual)?;
    let specs = [
        ("Compact", load(&ws.compact)?, load(&ws.compact_dual)?),
        ("CONVL-Small", load(&ws.convl_small)?, load(&ws.convl_small_dual)?),
        ("CONVL-Large", load(&ws.convl_large)?, load(&ws.convl_large_dual)?),
    ];
    let mut families = Vec::new();
    for (label, primal, dual) in &specs {
        let Some(primal) = primal else {
            ensure!(dual.is_none(), "dual model for {label} given without a primal model");
            continue;
        };
        ensure!(primal.target() == TrainTarget::Primal, "{label} primal model predicts duals");
        let dual = dual.as_ref().or(shared_dual.as_ref());
        if let Some(d) = dual {
            ensure!(d.target() == TrainTarget::Dual, "dual model for {label} predicts primals");
        }
        families.push(ModelFamily { label, primal: primal.predictor(), dual: dual.map(LoadedModel::predictor) });
    }
    let bcfg = BenchConfig {
        ipm: cfg.ipm.clone(),
        mu0_pd: ws.mu0_pd,
        self_warm_start: ws.self_warm_start,
        flat_control: ws.flat_control,
    };
    let report = datagen::with_workers(cfg.workers, || bench::run_suite(&net, &ds, &families, &bcfg))??;
    let grid = bench::default_time_grid(&report, ws.curve_points);
    let paths = [out.join("report.csv"), out.join("trace.csv"), out.join("curve.csv")];
    write_checked(&paths[0], &report.report_csv())?;
    write_checked(&paths[1], &report.trace_csv())?;
    write_checked(&paths[2], &bench::solved_within_curve(&report, &grid))?;
    Ok(Files { inputs, outputs: paths.to_vec() })
}
