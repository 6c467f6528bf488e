use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ctr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctr"))
        .args(args)
        .current_dir(dir)
        .env("CTR_THREADS", "2")
        .output()
        .expect("ctr runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A small planted dataset and a config per model kind in a temp dir.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"n_fields": 6, "cardinality": 20, "buckets": 256, "d_true": 4, "m_true": 2,
        "task": "multi_space", "temperature": 1.0, "n_records": 20000, "seed": 3}"#;
    std::fs::write(dir.path().join("synth.json"), spec).unwrap();
    for kind in ["tfnet", "fm"] {
        let cfg = format!(
            r#"{{"model": {{"kind": "{kind}", "d": 8, "m": 2, "tower_sh": [16], "tower_xv": [16]}},
            "train": {{"lr": 0.003, "batch_size": 128, "epochs": 4, "seed": 11}},
            "data": {{"synthetic": "synth.json", "valid_rows": 4000}},
            "output_dir": "runs/{kind}"}}"#
        );
        std::fs::write(dir.path().join(format!("{kind}.json")), cfg).unwrap();
    }
    dir
}

fn artifacts(dir: &Path) -> [PathBuf; 3] {
    ["model.snap", "train_log.csv", "report.json"].map(|f| dir.join(f))
}

fn eval_json(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = ctr(dir, args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_str(&stdout(&out)).unwrap()
}

#[test]
fn train_evaluate_predict_end_to_end() {
    let ws = workspace();
    let root = ws.path();
    for kind in ["tfnet", "fm"] {
        let out = ctr(root, &["train", &format!("{kind}.json")]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        for a in artifacts(&root.join("runs").join(kind)) {
            assert!(a.exists(), "{} missing", a.display());
        }
    }
    let log = std::fs::read_to_string(root.join("runs/tfnet/train_log.csv")).unwrap();
    assert!(log.starts_with("step,loss,val_auc,val_logloss,gc_sparsity\n"));

    let out = ctr(root, &["gen-synth", "synth.json", "data.csv"]);
    assert!(out.status.success());
    assert!(root.join("data.schema.json").exists());

    let tf = "runs/tfnet/model.snap";
    let fm = "runs/fm/model.snap";
    let same = eval_json(root, &["evaluate", tf, "data.csv", "--baseline", tf, "--json"]);
    assert_eq!(same["ri_auc"].as_f64(), Some(0.0));
    let vs_fm = eval_json(root, &["evaluate", tf, "data.csv", "--baseline", fm, "--json"]);
    assert!(vs_fm["ri_auc"].as_f64().unwrap() > 0.0, "{vs_fm}");

    let table = stdout(&ctr(root, &["evaluate", tf, "data.csv", "--baseline", fm]));
    assert!(table.contains("RI-AUC"), "{table}");

    for out_file in ["p1.txt", "p2.txt"] {
        let out = ctr(root, &["predict", tf, "data.csv", out_file]);
        assert!(out.status.success());
    }
    let p1 = std::fs::read_to_string(root.join("p1.txt")).unwrap();
    assert_eq!(p1, std::fs::read_to_string(root.join("p2.txt")).unwrap());
    assert_eq!(p1.lines().count(), 20000);
    assert!(p1.lines().all(|l| {
        let p: f64 = l.parse().unwrap();
        p > 0.0 && p < 1.0
    }));
}

#[test]
fn same_seed_gives_identical_snapshots_and_seed_flag_changes_them() {
    let ws = workspace();
    let root = ws.path();
    for (out, seed) in [("a", "11"), ("b", "11"), ("c", "12")] {
        let o = ctr(root, &["--seed", seed, "train", "fm.json", "--out", out]);
        assert!(o.status.success());
    }
    let read = |d: &str| std::fs::read(root.join(d).join("model.snap")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let log = |d: &str| std::fs::read(root.join(d).join("train_log.csv")).unwrap();
    assert_eq!(log("a"), log("b"));
}

#[test]
fn missing_data_fails_without_a_snapshot() {
    let ws = workspace();
    let root = ws.path();
    let cfg = r#"{"model": {"kind": "lr"}, "data": {"format": "criteo_tsv", "train": "nope.txt"},
        "output_dir": "runs/missing"}"#;
    std::fs::write(root.join("missing.json"), cfg).unwrap();
    let out = ctr(root, &["train", "missing.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.txt"));
    assert!(!root.join("runs/missing/model.snap").exists());
}

#[test]
fn invalid_config_exits_2() {
    let ws = workspace();
    let root = ws.path();
    std::fs::write(root.join("bad.json"), r#"{"model": {"kind": "fm", "dim": 4}, "data": {}}"#).unwrap();
    let out = ctr(root, &["train", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!root.join("runs").exists());
}

#[test]
fn schema_mismatch_exits_2() {
    let ws = workspace();
    let root = ws.path();
    assert!(ctr(root, &["train", "fm.json"]).status.success());
    let other = r#"{"n_fields": 4, "cardinality": 10, "buckets": 64, "d_true": 2, "m_true": 2,
        "task": "multi_space", "temperature": 1.0, "n_records": 2000, "seed": 1}"#;
    std::fs::write(root.join("other.json"), other).unwrap();
    let cfg = r#"{"model": {"kind": "fm", "d": 4}, "train": {"epochs": 1},
        "data": {"synthetic": "other.json", "valid_rows": 500}, "output_dir": "runs/other"}"#;
    std::fs::write(root.join("other_fm.json"), cfg).unwrap();
    assert!(ctr(root, &["train", "other_fm.json"]).status.success());
    let out = ctr(root, &["evaluate", "runs/fm/model.snap", "x.csv", "--baseline", "runs/other/model.snap"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gradcheck_single_model() {
    let out = ctr(Path::new("."), &["gradcheck", "--model", "tfnet-minus"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("gradcheck passed"), "{text}");
}
