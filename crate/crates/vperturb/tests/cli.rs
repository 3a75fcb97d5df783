mod common;

use common::{csv_rows, ok, Workspace, DIAGONAL, FIXED, QUADRATIC};
use vperturb::trajectory::read_trajectory;

#[test]
fn train_writes_replay_consistent_trajectory() {
    let ws = Workspace::new();
    let cfg = ws.write_config("c.toml", &format!("{QUADRATIC}{FIXED}"));
    ok(&ws.run(Some(&cfg), &["train"]));
    let text = ws.read("run.trajectory.jsonl");
    let traj = read_trajectory(&text).unwrap();
    assert_eq!(traj.horizon(), 12);
    assert_eq!(text.lines().count(), 12);
    assert_eq!(traj.replay_defect(), 0.0);
    ok(&ws.run(Some(&cfg), &["train"]));
    assert_eq!(ws.read("run.trajectory.jsonl"), text);
}

#[test]
fn missing_horizon_is_a_config_error_naming_the_key() {
    let ws = Workspace::new();
    let cfg = ws.write_config("c.toml", &QUADRATIC.replace("T = 12", ""));
    let out = ws.run(Some(&cfg), &["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sgd.T"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let ws = Workspace::new();
    let cfg = ws.write_config("c.toml", &QUADRATIC.replace("batch = 8", "batch = 8\nlearning_rate = 1"));
    assert_eq!(ws.run(Some(&cfg), &["train"]).status.code(), Some(2));
}

#[test]
fn synchronized_fixed_schedule_has_zero_cost() {
    let ws = Workspace::new();
    let cfg = ws.write_config("c.toml", &format!("{QUADRATIC}{FIXED}"));
    ok(&ws.run(Some(&cfg), &["train"]));
    ok(&ws.run(Some(&cfg), &["diagnose"]));
    let rows = csv_rows(&ws.read("run.proxies.csv"));
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| r["C_hat"].parse::<f64>().unwrap() == 0.0));
    let header = ws.read("run.proxies.csv");
    let first_data = header.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(first_data, "t,V_hat,V_mode,Gamma_hat,C_hat,tr_sigma_t,tr_sigma_1t,eta");
    for key in ["tool_version", "config_hash", "trajectory_hash", "seeds"] {
        assert!(header.contains(&format!("# {key}:")), "{key}");
    }
}

#[test]
fn ghost_reference_has_positive_costs() {
    let ws = Workspace::new();
    let cfg = ws.write_config("c.toml", &format!("{QUADRATIC}{DIAGONAL}"));
    ok(&ws.run(Some(&cfg), &["train"]));
    ok(&ws.run(Some(&cfg), &["diagnose"]));
    let costs: Vec<f64> = csv_rows(&ws.read("run.proxies.csv")).iter().map(|r| r["C_hat"].parse().unwrap()).collect();
    assert!(costs.iter().all(|c| *c >= 0.0));
    assert!(costs.iter().any(|c| *c > 0.0));
    let summary: serde_json::Value = serde_json::from_str(&ws.read("run.summary.json")).unwrap();
    assert_eq!(summary["metadata"]["certificate"], "ghost_adaptive");
    assert!(summary["B_hat"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["config"]["reference"]["mode"], "auto");
    assert_eq!(summary["provenance"]["seeds"]["ghost"], 4);
}

#[test]
fn checkpoint_list_selects_rows() {
    let ws = Workspace::new();
    let text = format!("{}{FIXED}", QUADRATIC.replace("[proxies]", "[proxies]\ncheckpoints = \"1,5,10\""));
    let cfg = ws.write_config("c.toml", &text);
    ok(&ws.run(Some(&cfg), &["train"]));
    ok(&ws.run(Some(&cfg), &["diagnose"]));
    let rows = csv_rows(&ws.read("run.proxies.csv"));
    let ts: Vec<&str> = rows.iter().map(|r| r["t"].as_str()).collect();
    assert_eq!(ts, ["1", "5", "10"]);
}

#[test]
fn json_format_replaces_csv() {
    let ws = Workspace::new();
    let cfg = ws.write_config("c.toml", &format!("{QUADRATIC}{FIXED}"));
    ok(&ws.run(Some(&cfg), &["train"]));
    ok(&ws.run(Some(&cfg), &["--format", "json", "diagnose"]));
    let v: serde_json::Value = serde_json::from_str(&ws.read("run.proxies.json")).unwrap();
    assert_eq!(v["checkpoints"].as_array().unwrap().len(), 11);
    assert!(!ws.path("run.proxies.csv").exists());
}

#[test]
fn fluctuation_mode_without_subbatches_is_a_config_error() {
    let ws = Workspace::new();
    let text = format!(
        "{}{FIXED}",
        QUADRATIC
            .replace("subbatches = 2", "subbatches = 0")
            .replace("[proxies]", "[proxies]\ndeviation_mode = \"fluc\"")
    );
    let cfg = ws.write_config("c.toml", &text);
    ok(&ws.run(Some(&cfg), &["train"]));
    let out = ws.run(Some(&cfg), &["diagnose"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn dimension_mismatch_is_a_data_error() {
    let ws = Workspace::new();
    let cfg = ws.write_config("c.toml", &format!("{QUADRATIC}{FIXED}"));
    ok(&ws.run(Some(&cfg), &["train"]));
    let other = QUADRATIC
        .replace("a = [[1.0, 0.0, 0.0], [0.0, 1.5, 0.0], [0.0, 0.0, 2.0]]", "a = [[1.0, 0.0], [0.0, 2.0]]")
        .replace("[0.5, 0.5, 0.5]", "[0.5, 0.5]")
        .replace("[1.0, 1.0, 1.0]", "[1.0, 1.0]");
    let cfg2 = ws.write_config("c2.toml", &format!("{other}{FIXED}"));
    let traj = ws.path("run.trajectory.jsonl");
    let out = ws.run(Some(&cfg2), &["diagnose", "--trajectory", traj.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_trajectory_is_a_data_error() {
    let ws = Workspace::new();
    let cfg = ws.write_config("c.toml", &format!("{QUADRATIC}{FIXED}"));
    assert_eq!(ws.run(Some(&cfg), &["diagnose"]).status.code(), Some(3));
}

#[test]
fn bound_variants() {
    let ws = Workspace::new();
    let cfg = ws.write_config("c.toml", &format!("{QUADRATIC}{DIAGONAL}"));
    ok(&ws.run(Some(&cfg), &["train"]));
    ok(&ws.run(Some(&cfg), &["diagnose"]));
    let out = ws.run(Some(&cfg), &["bound"]);
    ok(&out);
    let general: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let report = &general["report"];
    let total = report["total"].as_f64().unwrap();
    assert!((total - report["sqrt_term"].as_f64().unwrap() - report["penalty"].as_f64().unwrap()).abs() < 1e-12);
    let out = ws.run(Some(&cfg), &["bound", "--variant", "synchronized"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("admissibility"));
    let summary = ws.path("run.summary.json");
    let out = ws.run(None, &["bound", "--summary", summary.to_str().unwrap(), "--penalty", "smoothness"]);
    ok(&out);
    let smooth: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(smooth["inputs"]["penalty_control"], "smoothness");
    let traj = ws.path("run.trajectory.jsonl");
    let out =
        ws.run(Some(&cfg), &["bound", "--penalty", "curvature", "--rho", "0", "--trajectory", traj.to_str().unwrap()]);
    ok(&out);
}

#[test]
fn synchronized_bound_accepts_certified_summary() {
    let ws = Workspace::new();
    let cfg = ws.write_config("c.toml", &format!("{QUADRATIC}{FIXED}"));
    ok(&ws.run(Some(&cfg), &["train"]));
    ok(&ws.run(Some(&cfg), &["diagnose"]));
    let sync: serde_json::Value =
        serde_json::from_slice(&ws.run(Some(&cfg), &["bound", "--variant", "synchronized"]).stdout).unwrap();
    let general: serde_json::Value = serde_json::from_slice(&ws.run(Some(&cfg), &["bound"]).stdout).unwrap();
    assert_eq!(sync["report"]["total"], general["report"]["total"]);
}

#[test]
fn compare_shares_one_trajectory() {
    let ws = Workspace::new();
    let text = format!(
        "{QUADRATIC}{FIXED}\n[[compare]]\nkind = \"fixed_isotropic\"\nsigma = 0.1\n\n[[compare]]\nkind = \"adaptive_scalar\"\nsigma0 = 0.1\nc = 1.0\n"
    );
    let cfg = ws.write_config("c.toml", &text);
    ok(&ws.run(Some(&cfg), &["train"]));
    ok(&ws.run(Some(&cfg), &["compare"]));
    let rows = csv_rows(&ws.read("run.compare.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["schedule"], "fixed_isotropic");
    assert_eq!(rows[1]["schedule"], "adaptive_scalar");
    assert_eq!(rows[0]["trajectory_hash"], rows[1]["trajectory_hash"]);
    assert_eq!(rows[0]["cov_sum"].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn compare_is_independent_of_thread_count() {
    let ws = Workspace::new();
    let text = format!(
        "{QUADRATIC}{FIXED}\n[[compare]]\nkind = \"fixed_isotropic\"\nsigma = 0.1\n\n[[compare]]\nkind = \"adaptive_diagonal\"\nsigma0 = 0.1\nc = 1.0\n\n[[compare]]\nkind = \"lowrank_ridge\"\nrank = 1\nrho = 0.1\n"
    );
    let cfg = ws.write_config("c.toml", &text);
    ok(&ws.run(Some(&cfg), &["train"]));
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_vperturb"))
            .env("VPERTURB_THREADS", threads)
            .args(["--config", cfg.to_str().unwrap(), "--out", ws.dir.path().to_str().unwrap(), "compare"])
            .output()
            .unwrap();
        ok(&out);
        outputs.push(ws.read("run.compare.csv"));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn compare_rejects_mismatched_dimensions() {
    let ws = Workspace::new();
    let text =
        format!("{QUADRATIC}{FIXED}\n[[compare]]\nkind = \"fixed_dense\"\nmatrices = [[[1.0, 0.0], [0.0, 1.0]]]\n");
    let cfg = ws.write_config("c.toml", &text);
    ok(&ws.run(Some(&cfg), &["train"]));
    let out = ws.run(Some(&cfg), &["compare"]);
    assert!(!out.status.success());
}

#[test]
fn verify_quick_passes() {
    let ws = Workspace::new();
    let out = ws.run(None, &["verify", "--quick", "--seed", "1"]);
    ok(&out);
    let v: serde_json::Value = serde_json::from_str(&ws.read("verify.json")).unwrap();
    assert_eq!(v["all_passed"], true);
}

#[test]
fn seed_override_changes_the_run() {
    let ws = Workspace::new();
    let cfg = ws.write_config("c.toml", &format!("{QUADRATIC}{FIXED}"));
    ok(&ws.run(Some(&cfg), &["train"]));
    let a = ws.read("run.trajectory.jsonl");
    ok(&ws.run(Some(&cfg), &["--seed-override", "99", "train"]));
    let b = ws.read("run.trajectory.jsonl");
    assert_ne!(a, b);
    assert_eq!(read_trajectory(&b).unwrap().meta.seed, 99);
}
