use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &[&str] = &[
    "train_size=40",
    "eval_size=20",
    "train.epochs=1",
    "train.model.d_model=16",
    "train.model.n_heads=2",
    "train.model.d_ff=16",
    "train.model.d_hidden=16",
];

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

fn csr_lab(args: &[&str], out: &Path, sets: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_csr-lab"));
    cmd.args(args).arg("--out").arg(out).env("CSR_LAB_WORKERS", "1");
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.output().expect("binary runs")
}

fn with_config(command: &str, extra: &[&str]) -> Vec<String> {
    let mut v = vec![
        command.to_string(),
        "--config".into(),
        default_config().display().to_string(),
    ];
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run_dir(out: &Path, command: &str) -> PathBuf {
    let dirs: Vec<PathBuf> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(command))
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn args(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn gen_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cmd = with_config("gen", &["--seeds", "1,2"]);
    for out in [a.path(), b.path()] {
        let o = csr_lab(&args(&cmd), out, TINY);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ra, rb) = (run_dir(a.path(), "gen"), run_dir(b.path(), "gen"));
    let ha = json(&ra.join("manifest_hashes.json"));
    assert_eq!(ha, json(&rb.join("manifest_hashes.json")));
    assert_eq!(ha["datasets"].as_object().unwrap().len(), 4);
    assert_eq!(json(&ra.join("summary.json"))["status"], "PASS");
    let resolved = json(&ra.join("config.resolved.json"));
    assert_eq!(resolved["config"]["train_size"], 40);
    assert_eq!(resolved["seeds"], serde_json::json!([1, 2]));
}

#[test]
fn train_then_evaluate_a_checkpoint() {
    let out = tempfile::tempdir().unwrap();
    let o = csr_lab(&args(&with_config("train", &["--seeds", "3"])), out.path(), TINY);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let train = run_dir(out.path(), "train");
    let ckpt = train.join("cells/train-seed3/checkpoint_final.json");
    assert!(ckpt.is_file());
    let hashes = json(&train.join("manifest_hashes.json"));
    assert!(hashes["checkpoints"]["train-seed3"].is_string());

    let ckpt = ckpt.display().to_string();
    let o = csr_lab(
        &args(&with_config("eval", &["--seeds", "3", "--checkpoint", &ckpt])),
        out.path(),
        TINY,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let eval = run_dir(out.path(), "eval");
    let metrics = json(&eval.join("metrics.json"));
    let acc = metrics[0][1]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(eval.join("probes-seed3.csv").is_file());
}

#[test]
fn unknown_command_is_a_usage_error() {
    let out = tempfile::tempdir().unwrap();
    let o = csr_lab(&args(&with_config("frobnicate", &[])), out.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_override_key_is_a_config_error() {
    let out = tempfile::tempdir().unwrap();
    let o = csr_lab(&args(&with_config("gen", &[])), out.path(), &["train.no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = tempfile::tempdir().unwrap();
    let o = csr_lab(&["gen", "--config", "/nonexistent/lab.json"], out.path(), &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn refused_dominance_exits_with_check_failure() {
    let out = tempfile::tempdir().unwrap();
    let o = csr_lab(
        &args(&with_config("check-dominance", &["--seeds", "1"])),
        out.path(),
        &[TINY, &["checks.dominance_samples=20"]].concat(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&run_dir(out.path(), "check-dominance").join("summary.json"));
    assert_eq!(summary["status"], "FAIL");
}
