use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("bench runs")
}

fn ok(args: &[&str]) -> String {
    let out = bench(args);
    assert!(
        out.status.success(),
        "bench {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn forge_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["forge", "--seed", "5", "--count", "3", "--out", s(&a)]);
    ok(&["forge", "--seed", "5", "--count", "3", "--out", s(&b)]);
    ok(&["forge", "--seed", "6", "--count", "3", "--out", s(&c)]);
    let sum = |d: &Path| read_json(&d.join("manifest.json"))["checksum"].clone();
    assert_eq!(sum(&a), sum(&b));
    assert_ne!(sum(&a), sum(&c));
}

#[test]
fn run_then_report_from_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("set");
    ok(&["forge", "--seed", "3", "--count", "4", "--out", s(&set)]);
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        json!({
            "problem_set": "set",
            "agent": {"kind": "voxel-oracle"},
            "condition": "c1-reset",
            "n_runs": 2,
            "seed": 9
        })
        .to_string(),
    )
    .unwrap();
    let transcripts = dir.path().join("transcripts");
    let report_path = dir.path().join("report.json");
    let md = ok(&[
        "run", "--config", s(&config), "--out", s(&report_path), "--transcripts", s(&transcripts),
    ]);
    assert!(md.contains("voxel-oracle"), "{md}");
    let report = read_json(&report_path);
    assert_eq!(report["mean_accuracy"], 1.0);
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);
    assert_eq!(report["provenance"]["seed"], 9);
    assert!(report["provenance"]["dataset_checksum"].is_string());

    let rescored: Value = serde_json::from_str(&ok(&[
        "report", s(&transcripts), "--format", "json", "--dataset", s(&set),
    ]))
    .unwrap();
    assert_eq!(rescored["runs"], report["runs"]);
    assert_eq!(
        rescored["provenance"]["dataset_checksum"],
        report["provenance"]["dataset_checksum"]
    );
    let strip = |v: &Value| -> Vec<Value> {
        v["outcomes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| {
                let mut o = o.clone();
                o.as_object_mut().unwrap().remove("transcript");
                o
            })
            .collect()
    };
    assert_eq!(strip(&rescored), strip(&report));

    let csv = ok(&["report", s(&report_path), "--format", "csv"]);
    assert_eq!(csv.lines().count(), 1 + 8);
}

#[test]
fn reset_agent_abstains_without_reset() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("set");
    ok(&["forge", "--seed", "3", "--count", "2", "--out", s(&set)]);
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        json!({
            "problem_set": s(&set),
            "agent": {"kind": "reset-match"},
            "condition": "c3-incremental",
            "loop": {"min_iterations": 1, "max_iterations": 4}
        })
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("r.json");
    ok(&["run", "--config", s(&config), "--out", s(&out), "--format", "json"]);
    let r = read_json(&out);
    assert_eq!(r["runs"][0]["failed"], 2);
    assert_eq!(r["runs"][0]["wrong"], 0);
    assert!(r["mean_accuracy"].is_null());
}

#[test]
fn sweep_truth_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("sweep");
    ok(&["sweep", "--out", s(&pairs), "--objects", "1", "--step", "90"]);
    let out = dir.path().join("euler.json");
    ok(&[
        "verify-euler", "--pairs", s(&pairs), "--preds", s(&pairs.join("truth.json")), "--out",
        s(&out),
    ]);
    let r = read_json(&out);
    assert_eq!(r["rows"].as_array().unwrap().len(), 12);
    assert_eq!(r["matches"], 12);
    assert_eq!(r["fails"], 0);
    let md = ok(&["report", s(&out)]);
    assert!(md.contains(r["pairs_checksum"].as_str().unwrap()));
}

#[test]
fn ground_truth_probe_agent_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("probes");
    ok(&["make-probes", "--out", s(&pairs), "--objects", "1", "--angle", "15"]);
    let out = dir.path().join("probe.json");
    ok(&["probes", "--agent", "ground-truth", "--pairs", s(&pairs), "--out", s(&out)]);
    let r = read_json(&out);
    assert_eq!(r["rows"].as_array().unwrap().len(), 6);
    assert_eq!(r["direction_accuracy"], 1.0);
    assert_eq!(r["angle_mae"], 0.0);
}

#[test]
fn bad_inputs_fail_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = bench(&["run", "--config", s(&missing)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let out = bench(&["report", s(dir.path())]);
    assert!(!out.status.success());

    let out = bench(&["report", s(&missing), "--format", "pdf"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("pdf"));
}

#[test]
fn shipped_configs_and_dataset_load() {
    use imagery_core::dataset::{compute_checksum, load_problem_set, read_manifest};
    use imagery_core::eval::RunConfig;

    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for entry in std::fs::read_dir(root.join("configs")).unwrap() {
        let path = entry.unwrap().path();
        let cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(&path).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.loop_config().validate().unwrap();
    }
    let dir = root.join("data/default-set");
    let set = load_problem_set(&dir).unwrap();
    assert_eq!(set.len(), 40);
    set.audit().unwrap();
    let manifest = read_manifest(&dir).unwrap();
    assert_eq!(compute_checksum(&dir, &manifest).unwrap(), manifest.checksum);
}
