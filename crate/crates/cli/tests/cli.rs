use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use compact_opf::datagen::Dataset;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_opf-compact"));
    c.env("RUST_LOG", "error").env_remove("OPF_COMPACT_WORKERS");
    c
}

fn case(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fail(dir: &Path, args: &[&str]) -> String {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic is not one line: {err}");
    err
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn gen(dir: &Path, n: &str, out: &str) {
    let c = case("case14.m");
    run(dir, &["gen", "--case", c.to_str().unwrap(), "--n", n, "--seed", "7", "--out", out]);
}

#[test]
fn gen_writes_requested_records_minus_skips() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "100", "ds.jsonl");
    let ds = Dataset::read_jsonl(&dir.path().join("ds.jsonl")).unwrap();
    assert_eq!(ds.header.requested, 100);
    assert_eq!(ds.len() + ds.header.skipped, 100);
    assert_eq!(ds.header.perturb.as_ref().unwrap().seed, 7);
    let m = manifest(&dir.path().join("ds.jsonl.manifest.json"));
    assert_eq!(m["command"], "gen");
    assert_eq!(m["seeds"]["perturb"], 7);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn pca_writes_one_row_per_ratio() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "60", "ds.jsonl");
    run(dir.path(), &["pca", "--dataset", "ds.jsonl", "--ratios", "0.01,0.05,0.10,0.20", "--out", "evr.csv"]);
    let csv = std::fs::read_to_string(dir.path().join("evr.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0], "ratio,k,evr_percent");
    let evr: Vec<f64> = rows[1..].iter().map(|r| r.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(evr.windows(2).all(|w| w[0] <= w[1]));
}

/// Runs the pipeline, then replays every manifest and compares bytes.
#[test]
fn replay_from_manifest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let c14 = case("case14.m");
    let c14 = c14.to_str().unwrap();
    gen(d, "80", "ds.jsonl");
    run(d, &["split", "--dataset", "ds.jsonl", "--train-out", "tr.jsonl", "--test-out", "te.jsonl", "--train-frac", "0.75"]);
    run(d, &["pca", "--dataset", "tr.jsonl", "--out", "evr.csv"]);
    run(d, &["train", "--dataset", "tr.jsonl", "--epochs", "5", "--out", "c.json", "--train.batch_size=16"]);
    run(d, &["eval", "--case", c14, "--dataset", "te.jsonl", "--model", "c.json", "--out", "m.csv"]);
    run(d, &["restore", "--case", c14, "--dataset", "te.jsonl", "--model", "c.json", "--out", "pf.csv"]);

    let cfg = manifest(&d.join("c.json.manifest.json"));
    assert_eq!(cfg["config"]["train"]["batch_size"], 16);

    let outputs = ["ds.jsonl", "tr.jsonl", "te.jsonl", "evr.csv", "c.json", "c.loss.csv", "m.csv"];
    let before: Vec<Vec<u8>> = outputs.iter().map(|o| std::fs::read(d.join(o)).unwrap()).collect();
    let pf_before = std::fs::read_to_string(d.join("pf.csv")).unwrap();
    for m in [
        "ds.jsonl.manifest.json",
        "tr.jsonl.manifest.json",
        "evr.csv.manifest.json",
        "c.json.manifest.json",
        "m.csv.manifest.json",
        "pf.csv.manifest.json",
    ] {
        run(d, &["replay", "--manifest", m]);
    }
    for (o, b) in outputs.iter().zip(&before) {
        assert_eq!(&std::fs::read(d.join(o)).unwrap(), b, "{o} changed on replay");
    }
    // Power-flow timings differ between runs; everything else must match.
    let strip = |s: &str| s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
    assert_eq!(strip(&std::fs::read_to_string(d.join("pf.csv")).unwrap()), strip(&pf_before));
}

#[test]
fn replay_rejects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "30", "ds.jsonl");
    run(dir.path(), &["pca", "--dataset", "ds.jsonl", "--out", "evr.csv"]);
    gen(dir.path(), "31", "ds.jsonl");
    let err = fail(dir.path(), &["replay", "--manifest", "evr.csv.manifest.json"]);
    assert!(err.contains("changed"), "{err}");
}

#[test]
fn warmstart_writes_report_trace_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let c14 = case("case14.m");
    let c14 = c14.to_str().unwrap();
    gen(d, "40", "ds.jsonl");
    run(d, &["train", "--dataset", "ds.jsonl", "--epochs", "3", "--out", "c.json"]);
    run(d, &["train", "--dataset", "ds.jsonl", "--case", c14, "--target", "dual", "--epochs", "3", "--out", "dual.json"]);
    run(d, &["warmstart", "--case", c14, "--dataset", "ds.jsonl", "--compact", "c.json", "--dual", "dual.json", "--out", "ws", "--warmstart.flat_control=true"]);
    let report = std::fs::read_to_string(d.join("ws/report.csv")).unwrap();
    let methods: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        methods,
        ["Flat", "Flat(control)", "WS:AC-OPF(P)", "WS:AC-OPF(P+D)", "WS:Compact(P)", "WS:Compact(P+D)"]
    );
    let control = report.lines().find(|l| l.starts_with("Flat(control),")).unwrap();
    let f: Vec<&str> = control.split(',').collect();
    assert_eq!(f[2], "1e0", "control iteration ratio: {control}");
    let trace = std::fs::read_to_string(d.join("ws/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 40 * 6);
    let curve = std::fs::read_to_string(d.join("ws/curve.csv")).unwrap();
    assert!(curve.starts_with("t,Flat,"));
    assert!(d.join("ws/manifest.json").exists());
}

#[test]
fn workers_come_from_environment_unless_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let c = case("case14.m");
    let c = c.to_str().unwrap();
    let out = bin()
        .current_dir(dir.path())
        .env("OPF_COMPACT_WORKERS", "2")
        .args(["gen", "--case", c, "--n", "5", "--out", "a.jsonl"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(&dir.path().join("a.jsonl.manifest.json"))["config"]["workers"], 2);
    let out = bin()
        .current_dir(dir.path())
        .env("OPF_COMPACT_WORKERS", "2")
        .args(["gen", "--case", c, "--n", "5", "--workers", "1", "--out", "b.jsonl"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(&dir.path().join("b.jsonl.manifest.json"))["config"]["workers"], 1);
    assert_eq!(
        std::fs::read(dir.path().join("a.jsonl")).unwrap(),
        std::fs::read(dir.path().join("b.jsonl")).unwrap()
    );
}

#[test]
fn config_file_is_used_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let c = case("case14.m");
    let cfg = serde_json::json!({ "case": c, "gen": { "n": 7 }, "perturb": { "seed": 3 }, "out": "from_file.jsonl" });
    std::fs::write(dir.path().join("run.json"), cfg.to_string()).unwrap();
    run(dir.path(), &["gen", "--config", "run.json", "--seed", "4"]);
    let ds = Dataset::read_jsonl(&dir.path().join("from_file.jsonl")).unwrap();
    assert_eq!(ds.header.requested, 7);
    assert_eq!(ds.header.perturb.unwrap().seed, 4);
    let m = manifest(&dir.path().join("from_file.jsonl.manifest.json"));
    assert_eq!(m["config_file"]["gen"]["n"], 7);
}

#[test]
fn errors_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let c14 = case("case14.m");
    let c30 = case("case30.m");
    fail(d, &["gen", "--bogus"]);
    let e = fail(d, &["gen", "--case", "missing.m", "--out", "x.jsonl"]);
    assert!(e.contains("missing.m"), "{e}");
    let e = fail(d, &["gen", "--case", c14.to_str().unwrap(), "--out", "x.jsonl", "--train.nope=1"]);
    assert!(e.contains("train.nope"), "{e}");
    fail(d, &["gen", "--case", c14.to_str().unwrap()]);
    std::fs::write(d.join("bad.json"), "{\"unknown_section\": 1}").unwrap();
    fail(d, &["gen", "--config", "bad.json"]);

    gen(d, "30", "ds14.jsonl");
    run(d, &["gen", "--case", c30.to_str().unwrap(), "--n", "30", "--out", "ds30.jsonl"]);
    run(d, &["train", "--dataset", "ds30.jsonl", "--epochs", "2", "--out", "m30.json"]);
    let e = fail(d, &["eval", "--case", c14.to_str().unwrap(), "--dataset", "ds14.jsonl", "--model", "m30.json", "--out", "m.csv"]);
    assert!(e.to_lowercase().contains("fingerprint") || e.contains("network"), "{e}");
    let e = fail(d, &["eval", "--case", c30.to_str().unwrap(), "--dataset", "ds14.jsonl", "--model", "m30.json", "--out", "m.csv"]);
    assert!(e.contains("different network"), "{e}");
    assert!(!d.join("m.csv").exists());
}
