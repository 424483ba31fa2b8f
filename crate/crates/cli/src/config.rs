//! Run configuration: a JSON file plus dotted-key overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use compact_opf::datagen::PerturbConfig;
use compact_opf::ipm::IpmConfig;
use compact_opf::restore::PfOptions;
use compact_opf::spectra::PcaOptions;
use compact_opf::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// MATPOWER case file.
    pub case: Option<PathBuf>,
    /// Input dataset (JSONL).
    pub dataset: Option<PathBuf>,
    /// Primary output path (a directory for `warmstart`).
    pub out: Option<PathBuf>,
    /// Model file for `eval` and `restore`.
    pub model: Option<PathBuf>,
    pub workers: usize,
    pub gen: GenOptions,
    pub split: SplitOptions,
    pub pca: PcaSection,
    pub perturb: PerturbConfig,
    pub ipm: IpmConfig,
    pub train: TrainConfig,
    pub pf: PfOptions,
    pub warmstart: WarmstartOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenOptions {
    pub n: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self { n: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitOptions {
    pub train_frac: f64,
    pub seed: u64,
    pub train_out: Option<PathBuf>,
    pub test_out: Option<PathBuf>,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self { train_frac: 1000.0 / 1200.0, seed: 0, train_out: None, test_out: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaSection {
    pub ratios: Vec<f64>,
    pub options: PcaOptions,
}

impl Default for PcaSection {
    fn default() -> Self {
        Self { ratios: vec![0.01, 0.05, 0.10, 0.20], options: PcaOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmstartOptions {
    pub compact: Option<PathBuf>,
    pub convl_small: Option<PathBuf>,
    pub convl_large: Option<PathBuf>,
    /// Dual predictor shared by every model family without its own.
    pub dual: Option<PathBuf>,
    pub compact_dual: Option<PathBuf>,
    pub convl_small_dual: Option<PathBuf>,
    pub convl_large_dual: Option<PathBuf>,
    pub mu0_pd: f64,
    pub self_warm_start: bool,
    pub flat_control: bool,
    pub curve_points: usize,
}

impl Default for WarmstartOptions {
    fn default() -> Self {
        Self {
            compact: None,
            convl_small: None,
            convl_large: None,
            dual: None,
            compact_dual: None,
            convl_small_dual: None,
            convl_large_dual: None,
            mu0_pd: 1e-3,
            self_warm_start: true,
            flat_control: false,
            curve_points: 50,
        }
    }
}

/// Reads a config file; a missing path gives the defaults.
pub fn load_json(path: Option<&Path>) -> Result<Value> {
    match path {
        None => Ok(serde_json::to_value(RunConfig::default())?),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            // Reject unknown keys early.
            serde_json::from_value::<RunConfig>(v.clone()).with_context(|| format!("invalid config {}", p.display()))?;
            Ok(v)
        }
    }
}

/// Parses an override value: JSON if it parses, a bare string otherwise.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `key` (dotted path) in `cfg`; the key must exist in the schema.
pub fn apply_override(cfg: &mut Value, key: &str, raw: &str) -> Result<()> {
    let schema = serde_json::to_value(RunConfig::default())?;
    let mut probe = &schema;
    for part in key.split('.') {
        probe = match probe.get(part) {
            Some(v) => v,
            None => bail!("unknown config key '{key}'"),
        };
    }
    let mut value = parse_value(raw);
    // Path-like string fields stay strings even when they look like numbers.
    if (probe.is_string() || (probe.is_null() && !value.is_null())) && !value.is_string() && !value.is_array() {
        value = Value::String(raw.to_string());
    }
    if probe.is_array() && value.is_string() {
        let items: Result<Vec<Value>> = raw
            .split(',')
            .map(|s| serde_json::from_str(s.trim()).with_context(|| format!("bad list item '{s}' for '{key}'")))
            .collect();
        value = Value::Array(items?);
    }
    let mut node = cfg;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = node.as_object_mut().context("config root must be an object")?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .with_context(|| format!("cannot set '{key}'"))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn resolve(v: Value) -> Result<RunConfig> {
    serde_json::from_value(v).context("invalid configuration after overrides")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let mut v = load_json(None).unwrap();
        apply_override(&mut v, "train.batch_size", "64").unwrap();
        apply_override(&mut v, "case", "data/case14.m").unwrap();
        apply_override(&mut v, "out", "123").unwrap();
        apply_override(&mut v, "pca.ratios", "0.1,0.2").unwrap();
        apply_override(&mut v, "train.mode", "convl_large").unwrap();
        let c = resolve(v).unwrap();
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.case.unwrap(), PathBuf::from("data/case14.m"));
        assert_eq!(c.out.unwrap(), PathBuf::from("123"));
        assert_eq!(c.pca.ratios, [0.1, 0.2]);
        assert_eq!(c.train.mode, compact_opf::train::TrainMode::ConvlLarge);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = load_json(None).unwrap();
        assert!(apply_override(&mut v, "train.batchsize", "64").is_err());
        assert!(apply_override(&mut v, "nope", "1").is_err());
    }
}
