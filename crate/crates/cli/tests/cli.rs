use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};
use skiplab::data::{cross_polytope_dataset, save_dataset, TargetSpec};
use skiplab::netcore::sample_init;
use skiplab::trainer::lambda_hat;
use skiplab::ActivationKind;
use tempfile::TempDir;

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Sandbox { dir: tempfile::tempdir().unwrap() }
    }

    fn runs(&self) -> PathBuf {
        self.dir.path().join("runs")
    }

    fn write_config(&self, file: &str, cfg: &Value) -> PathBuf {
        let path = self.dir.path().join(file);
        std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
        path
    }

    fn run(&self, args: &[&str], config: &Path) -> i32 {
        self.run_in(&self.runs(), args, config)
    }

    fn run_in(&self, runs: &Path, args: &[&str], config: &Path) -> i32 {
        let out = Command::new(env!("CARGO_BIN_EXE_skiplab"))
            .args(args)
            .arg("--config")
            .arg(config)
            .env("RUNS_DIR", runs)
            .output()
            .unwrap();
        out.status.code().unwrap()
    }

    fn run_entries(&self) -> Vec<String> {
        match std::fs::read_dir(self.runs()) {
            Ok(rd) => rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect(),
            Err(_) => Vec::new(),
        }
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn base(name: &str, depth: usize) -> Value {
    json!({
        "name": name,
        "model": "skipnet",
        "d": 4, "m": 5, "depth": depth, "seed": 0,
        "dataset": { "source": "cross_polytope", "target": { "kind": "relu-coordinate" } },
        "train": { "eta_rule": "lambda_scaled", "kappa": 0.5, "steps": 400, "record_every": 50 }
    })
}

fn csv_column(path: &Path, col: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == col).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

fn assert_same_tree(a: &Path, b: &Path) {
    let mut names: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut other: Vec<_> = std::fs::read_dir(b).unwrap().map(|e| e.unwrap().file_name()).collect();
    other.sort();
    assert_eq!(names, other);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn train_writes_a_complete_run_directory() {
    let sb = Sandbox::new();
    let cfg = sb.write_config("c.json", &base("t", 20));
    assert_eq!(sb.run(&["train"], &cfg), 0);
    let dir = sb.runs().join("t-train");
    for f in ["config.json", "dataset_ref.json", "data.csv", "data.json", "trajectory.csv", "diagnostics.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let header = std::fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert!(header.starts_with("step,time,risk,max_dev_a,max_dev_r,max_dev_B,max_dev_C\n"));
    let risks = csv_column(&dir.join("trajectory.csv"), "risk");
    assert!(risks.windows(2).all(|w| w[1] <= w[0]));
    let diag = read_json(&dir.join("diagnostics.json"));
    assert!(diag["lambda_hat"].as_f64().unwrap() > 0.0);
    assert!(diag["test_risk"].as_f64().is_some());
}

#[test]
fn rerun_from_config_copy_is_byte_identical() {
    let sb = Sandbox::new();
    let cfg = sb.write_config("c.json", &base("r", 12));
    assert_eq!(sb.run(&["train", "--seed-override", "7"], &cfg), 0);
    let first = sb.runs().join("r-train");
    assert_eq!(read_json(&first.join("config.json"))["seed"], 7);
    let again = sb.dir.path().join("again");
    assert_eq!(sb.run_in(&again, &["train"], &first.join("config.json")), 0);
    assert_same_tree(&first, &again.join("r-train"));
}

#[test]
fn large_step_size_exits_with_divergence() {
    let sb = Sandbox::new();
    let data = cross_polytope_dataset(4, TargetSpec::relu_first_coordinate(), 0).unwrap();
    let p0 = sample_init(4, 5, 400, 0).unwrap();
    let lam = lambda_hat(&p0, &data, ActivationKind::Relu).unwrap();
    let mut cfg = base("dv", 400);
    cfg["train"] = json!({ "eta": 1e4 * lam / 400.0, "steps": 300, "record_every": 10 });
    let path = sb.write_config("c.json", &cfg);
    assert_eq!(sb.run(&["train"], &path), 2);
    let diag = read_json(&sb.runs().join("dv-train/diagnostics.json"));
    assert_eq!(diag["error"], "divergence");
    assert!(diag["risk"].as_f64().unwrap() > 1e6);
}

#[test]
fn missing_dataset_file_leaves_no_residue() {
    let sb = Sandbox::new();
    let mut cfg = base("m", 10);
    cfg["dataset"] = json!({ "source": "file", "path": "absent.csv" });
    let path = sb.write_config("c.json", &cfg);
    assert_eq!(sb.run(&["train"], &path), 3);
    assert!(sb.run_entries().is_empty());
}

#[test]
fn dataset_file_is_resolved_against_the_config() {
    let sb = Sandbox::new();
    let data = cross_polytope_dataset(4, TargetSpec::relu_first_coordinate(), 0).unwrap();
    save_dataset(&data, &sb.dir.path().join("points.csv")).unwrap();
    let mut cfg = base("f", 10);
    cfg["dataset"] = json!({ "source": "file", "path": "points.csv" });
    let path = sb.write_config("c.json", &cfg);
    assert_eq!(sb.run(&["train"], &path), 0);
    let copy = read_json(&sb.runs().join("f-train/config.json"));
    assert!(Path::new(copy["dataset"]["path"].as_str().unwrap()).is_absolute());
}

#[test]
fn malformed_configs_are_validation_errors() {
    let sb = Sandbox::new();
    let mut unknown = base("u", 10);
    unknown["colour"] = json!("blue");
    let mut bad_train = base("b", 10);
    bad_train["train"]["steps"] = json!(0);
    let mut bad_mode = base("x", 10);
    bad_mode["model"] = json!("resnet-frozenV");
    bad_mode["resnet"] = json!({ "mode": "plain-gd" });
    for (i, cfg) in [unknown, bad_train, bad_mode].iter().enumerate() {
        let path = sb.write_config(&format!("c{i}.json"), cfg);
        assert_eq!(sb.run(&["train"], &path), 3, "config {i}");
    }
    let path = sb.dir.path().join("garbage.json");
    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(sb.run(&["train"], &path), 3);
    assert!(sb.run_entries().is_empty());
}

#[test]
fn verify_passes_on_a_gated_config_and_reports_zero_deviation() {
    let sb = Sandbox::new();
    let mut cfg = base("v", 100);
    cfg["verify"] = json!({ "probe": { "c": 1.0, "n_probes": 10, "n_inputs": 5 } });
    let path = sb.write_config("c.json", &cfg);
    assert_eq!(sb.run(&["verify"], &path), 0);
    let out = read_json(&sb.runs().join("v-verify/verify.json"));
    assert_eq!(out["all_pass"], true);
    assert_eq!(out["reports"].as_array().unwrap().len(), 14);
    for k in ["a", "r", "B", "C"] {
        assert_eq!(out["deviation"][k], 0.0);
    }
}

#[test]
fn verify_below_the_depth_gate_is_rejected() {
    let sb = Sandbox::new();
    let mut cfg = base("g", 50);
    cfg["verify"] = json!({ "probe": { "c": 1.0, "n_probes": 5, "n_inputs": 2 }, "checks": ["gradient"] });
    let path = sb.write_config("c.json", &cfg);
    assert_eq!(sb.run(&["verify"], &path), 3);
    assert!(sb.run_entries().is_empty());
}

#[test]
fn couple_starts_from_zero_gap() {
    let sb = Sandbox::new();
    let mut cfg = base("c", 16);
    cfg["train"]["steps"] = json!(200);
    cfg["couple"] = json!({ "n_test": 1000 });
    let path = sb.write_config("c.json", &cfg);
    assert_eq!(sb.run(&["couple"], &path), 0);
    let csv = sb.runs().join("c-couple/coupling_L16.csv");
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("t,a_gap,f_gap_theta,f_gap_traj\n"));
    for col in ["a_gap", "f_gap_theta", "f_gap_traj"] {
        assert_eq!(csv_column(&csv, col)[0], 0.0);
    }
}

#[test]
fn couple_depth_sweep_emits_one_curve_per_depth() {
    let sb = Sandbox::new();
    let cfg = json!({
        "name": "fig",
        "model": "resnet",
        "d": 5, "m": 1, "depth": 2, "seed": 0,
        "dataset": { "source": "sphere", "n": 10, "seed": 0, "target": { "kind": "relu-coordinate" } },
        "train": { "eta": 0.05, "steps": 50, "record_every": 10 },
        "couple": { "depths": [2, 10, 100], "n_test": 1000 }
    });
    let path = sb.write_config("c.json", &cfg);
    assert_eq!(sb.run(&["couple"], &path), 0);
    for l in [2, 10, 100] {
        let csv = sb.runs().join(format!("fig-couple/coupling_L{l}.csv"));
        assert_eq!(csv_column(&csv, "f_gap_traj")[0], 0.0);
        assert_eq!(csv_column(&csv, "t").len(), 6);
    }
}

#[test]
fn couple_rejects_mismatched_seeds() {
    let sb = Sandbox::new();
    let mut cfg = base("s", 12);
    cfg["couple"] = json!({ "n_test": 1000, "rf_seed": 3 });
    let path = sb.write_config("c.json", &cfg);
    assert_eq!(sb.run(&["couple"], &path), 3);
    assert!(sb.run_entries().is_empty());
}

#[test]
fn sweep_rejects_an_empty_grid() {
    let sb = Sandbox::new();
    let mut cfg = base("e", 12);
    cfg["sweep"] = json!({ "depths": [], "seeds": [0] });
    let path = sb.write_config("c.json", &cfg);
    assert_eq!(sb.run(&["sweep"], &path), 3);
    assert!(sb.run_entries().is_empty());
}

#[test]
fn sweep_is_reproducible_and_independent_of_jobs() {
    let sb = Sandbox::new();
    let mut cfg = base("w", 8);
    cfg["train"]["steps"] = json!(100);
    cfg["sweep"] = json!({ "depths": [8, 16], "seeds": [0, 1], "n_test": 1000 });
    let path = sb.write_config("c.json", &cfg);
    assert_eq!(sb.run(&["sweep", "--jobs", "3"], &path), 0);
    let first = sb.runs().join("w-sweep");
    let text = std::fs::read_to_string(first.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("depth,seed,lambda_hat,eta,steps,final_train_risk,early_step,"));
    let summary = read_json(&first.join("sweep_summary.json"));
    assert!(summary["exponents"]["sup_f_gap_vs_depth"].as_f64().is_some());
    let again = sb.dir.path().join("again");
    assert_eq!(sb.run_in(&again, &["sweep", "--jobs", "1"], &first.join("config.json")), 0);
    assert_same_tree(&first, &again.join("w-sweep"));
}
