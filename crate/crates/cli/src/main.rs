//! `opf-compact`: dataset generation, PCA spectra, training, evaluation,
//! power-flow restoration and the warm-start benchmark.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use config::RunConfig;
use manifest::Manifest;

pub const WORKERS_ENV: &str = "OPF_COMPACT_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "opf-compact", version, about = "Compact learning for AC optimal power flow")]
struct Cli {
    /// JSON run configuration; flags and `--section.key=value` overrides win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for instance-level work (default: $OPF_COMPACT_WORKERS, else all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Perturb loads and solve AC-OPF instances into a JSONL dataset.
    Gen(GenArgs),
    /// Shuffle a dataset into train and test parts.
    Split(SplitArgs),
    /// Explained-variance ratios of the solution matrix.
    Pca(PcaArgs),
    /// Train a compact, conventional or dual model.
    Train(TrainArgs),
    /// Optimality gap and violations (or dual L1 error) on a dataset.
    Eval(EvalArgs),
    /// Newton power flow seeded by a model's predictions.
    Restore(EvalArgs),
    /// Flat start against warm-started interior-point solves.
    Warmstart(WarmstartArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    case: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Perturbation seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_out: Option<PathBuf>,
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PcaArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comma-separated principal-component ratios.
    #[arg(long)]
    ratios: Option<String>,
    /// Center only instead of standardizing columns.
    #[arg(long)]
    centered: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Network case, needed for dual models.
    #[arg(long)]
    case: Option<PathBuf>,
    /// compact, convl_small or convl_large.
    #[arg(long)]
    mode: Option<String>,
    /// primal or dual.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    case: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WarmstartArgs {
    #[arg(long)]
    case: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    compact: Option<PathBuf>,
    #[arg(long)]
    convl_small: Option<PathBuf>,
    #[arg(long)]
    convl_large: Option<PathBuf>,
    /// Dual model shared by all families.
    #[arg(long)]
    dual: Option<PathBuf>,
    #[arg(long)]
    compact_dual: Option<PathBuf>,
    #[arg(long)]
    convl_small_dual: Option<PathBuf>,
    #[arg(long)]
    convl_large_dual: Option<PathBuf>,
    /// Output directory for report, trace and curve CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
}

/// Collects `(key, value)` pairs for the flags that were given.
#[derive(Default)]
struct Flags(Vec<(String, String)>);

impl Flags {
    fn put<V: ToString>(&mut self, key: &str, v: &Option<V>) {
        if let Some(v) = v {
            self.0.push((key.to_string(), v.to_string()));
        }
    }

    fn path(&mut self, key: &str, v: &Option<PathBuf>) {
        if let Some(v) = v {
            self.0.push((key.to_string(), v.display().to_string()));
        }
    }
}

fn command_flags(cmd: &Command) -> (&'static str, Flags) {
    let mut f = Flags::default();
    let name = match cmd {
        Command::Gen(a) => {
            f.path("case", &a.case);
            f.put("gen.n", &a.n);
            f.put("perturb.seed", &a.seed);
            f.path("out", &a.out);
            "gen"
        }
        Command::Split(a) => {
            f.path("dataset", &a.dataset);
            f.put("split.train_frac", &a.train_frac);
            f.put("split.seed", &a.seed);
            f.path("split.train_out", &a.train_out);
            f.path("split.test_out", &a.test_out);
            "split"
        }
        Command::Pca(a) => {
            f.path("dataset", &a.dataset);
            f.put("pca.ratios", &a.ratios);
            if a.centered {
                f.0.push(("pca.options.standardize".into(), "false".into()));
            }
            f.path("out", &a.out);
            "pca"
        }
        Command::Train(a) => {
            f.path("dataset", &a.dataset);
            f.path("case", &a.case);
            f.put("train.mode", &a.mode);
            f.put("train.target", &a.target);
            f.put("train.max_epochs", &a.epochs);
            f.put("train.seed", &a.seed);
            f.path("out", &a.out);
            "train"
        }
        Command::Eval(a) | Command::Restore(a) => {
            f.path("case", &a.case);
            f.path("dataset", &a.dataset);
            f.path("model", &a.model);
            f.path("out", &a.out);
            if matches!(cmd, Command::Eval(_)) {
                "eval"
            } else {
                "restore"
            }
        }
        Command::Warmstart(a) => {
            f.path("case", &a.case);
            f.path("dataset", &a.dataset);
            f.path("warmstart.compact", &a.compact);
            f.path("warmstart.convl_small", &a.convl_small);
            f.path("warmstart.convl_large", &a.convl_large);
            f.path("warmstart.dual", &a.dual);
            f.path("warmstart.compact_dual", &a.compact_dual);
            f.path("warmstart.convl_small_dual", &a.convl_small_dual);
            f.path("warmstart.convl_large_dual", &a.convl_large_dual);
            f.path("out", &a.out);
            "warmstart"
        }
        Command::Replay(_) => "replay",
    };
    (name, f)
}

/// Splits `--section.key=value` overrides out of the argument list.
fn take_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((k, v)) if k.contains('.') => overrides.push((k.to_string(), v.to_string())),
            _ => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

fn manifest_path(command: &str, cfg: &RunConfig) -> Result<PathBuf> {
    let primary = match command {
        "split" => cfg.split.train_out.clone(),
        _ => cfg.out.clone(),
    }
    .context("no output path")?;
    Ok(if command == "warmstart" {
        primary.join("manifest.json")
    } else {
        let mut s = primary.into_os_string();
        s.push(".manifest.json");
        PathBuf::from(s)
    })
}

fn execute(command: &str, cfg: &RunConfig) -> Result<commands::Files> {
    match command {
        "gen" => commands::gen(cfg),
        "split" => commands::split(cfg),
        "pca" => commands::pca(cfg),
        "train" => commands::train(cfg),
        "eval" => commands::eval(cfg),
        "restore" => commands::restore(cfg),
        "warmstart" => commands::warmstart(cfg),
        other => anyhow::bail!("unknown command '{other}'"),
    }
}

fn run_and_record(command: &str, config_file: Value, overrides: Vec<(String, String)>, cfg: &RunConfig) -> Result<()> {
    let files = execute(command, cfg)?;
    let path = manifest_path(command, cfg)?;
    Manifest::new(command, config_file, overrides, cfg, &files.inputs, &files.outputs)?.write(&path)?;
    for o in &files.outputs {
        log::info!("wrote {}", o.display());
    }
    Ok(())
}

fn replay(path: &Path, workers: Option<usize>) -> Result<()> {
    let m = Manifest::read(path)?;
    m.check_inputs()?;
    let mut cfg = m.config.clone();
    if let Some(w) = workers {
        cfg.workers = w;
    }
    run_and_record(&m.command, m.config_file.clone(), m.overrides.clone(), &cfg)
}

fn run(argv: Vec<String>) -> Result<()> {
    let (argv, dotted) = take_overrides(argv)?;
    let cli = Cli::try_parse_from(argv)?;
    if let Command::Replay(r) = &cli.command {
        return replay(&r.manifest, cli.workers);
    }
    let (name, flags) = command_flags(&cli.command);
    let config_file = match &cli.config {
        Some(p) => config::load_json(Some(p))?,
        None => Value::Null,
    };
    let mut value = if config_file.is_null() { config::load_json(None)? } else { config_file.clone() };
    let mut overrides = Vec::new();
    if let Ok(w) = std::env::var(WORKERS_ENV) {
        if value.get("workers").is_none() || config_file.is_null() {
            overrides.push(("workers".to_string(), w));
        }
    }
    overrides.extend(dotted);
    overrides.extend(flags.0);
    if let Some(w) = cli.workers {
        overrides.push(("workers".to_string(), w.to_string()));
    }
    for (k, v) in &overrides {
        config::apply_override(&mut value, k, v)?;
    }
    let cfg = config::resolve(value)?;
    run_and_record(name, config_file, overrides, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(ce) = e.downcast_ref::<clap::Error>() {
                if matches!(ce.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                    print!("{ce}");
                    return ExitCode::SUCCESS;
                }
                let text = ce.to_string();
                eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
                return ExitCode::from(2);
            }
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
