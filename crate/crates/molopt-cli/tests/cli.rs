//! End-to-end checks of the command-line surface: subcommands, file
//! formats, exit codes.

use std::path::Path;
use std::process::Command;

fn molopt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_molopt"))
}

fn write_tiny_config(path: &Path, seed: u64) {
    let cfg = serde_json::json!({
        "version": 1,
        "seed": seed,
        "task": {
            "properties": [{
                "name": "heavyatoms",
                "direction": "maximize",
                "weight": 1.0,
                "single_threshold": 12.0,
                "multi_improvement": 3.0
            }],
            "mode": "single",
            "similarity_threshold": 0.4,
            "horizon": 3
        },
        "training": {
            "iterations": 2,
            "num_leads": 4,
            "rollouts_per_lead": 4,
            "pgpo": { "learning_rate": 0.01, "minibatch_size": 8 }
        },
        "inference": {
            "num_eval_leads": 4,
            "evolve": { "budget": 30, "generations": 3, "rollouts_per_parent": 4, "horizon": 3 }
        },
        "leads": { "min_heavy_atoms": 3, "max_heavy_atoms": 10 }
    });
    std::fs::write(path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
}

#[test]
fn selftest_passes() {
    let out = molopt().arg("selftest").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("all checks passed"));
}

#[test]
fn missing_config_is_exit_code_one() {
    let out = molopt()
        .args(["train", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_config_is_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"version\": 9}").unwrap();
    let out = molopt()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flag_is_exit_code_one() {
    let out = molopt().args(["train", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn full_pipeline_train_optimize_eval_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    write_tiny_config(&cfg_path, 5);

    // train -> checkpoint
    let train_out = dir.path().join("train");
    let out = molopt()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&train_out)
        .args(["--workers", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(train_out.join("checkpoint.json").exists());
    assert!(train_out.join("train_diagnostics.ndjson").exists());

    // leads file
    let leads_path = dir.path().join("leads.smi");
    std::fs::write(&leads_path, "CCO\nCCN\nCCCO\n").unwrap();

    // optimize -> results
    let opt_out = dir.path().join("opt");
    let out = molopt()
        .args(["optimize", "--config"])
        .arg(&cfg_path)
        .arg("--checkpoint")
        .arg(train_out.join("checkpoint.json"))
        .arg("--leads")
        .arg(&leads_path)
        .arg("--out")
        .arg(&opt_out)
        .args(["--workers", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results_path = opt_out.join("results.ndjson");
    assert!(results_path.exists());
    assert!(opt_out.join("metrics.json").exists());
    assert!(opt_out.join("summary.csv").exists());
    let results_text = std::fs::read_to_string(&results_path).unwrap();
    assert_eq!(results_text.trim_end().lines().count(), 3);

    // eval reproduces the stored metrics
    let out = molopt()
        .args(["eval", "--config"])
        .arg(&cfg_path)
        .arg("--results")
        .arg(&results_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let printed: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("eval prints metrics JSON");
    let stored: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(opt_out.join("metrics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(printed, stored);

    // plot-data emits a CSV curve
    let curve_path = dir.path().join("curve.csv");
    let out = molopt()
        .args(["plot-data", "--results"])
        .arg(&results_path)
        .arg("--out")
        .arg(&curve_path)
        .args(["--budget", "30"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let curve = std::fs::read_to_string(&curve_path).unwrap();
    assert!(curve.starts_with("oracle_calls,success_rate\n"));
    assert_eq!(curve.trim_end().lines().count(), 32); // header + 0..=30
}

#[test]
fn optimize_writes_generation_run_logs_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    write_tiny_config(&cfg_path, 13);
    let leads_path = dir.path().join("leads.smi");
    std::fs::write(&leads_path, "CCO\nCCN\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = molopt()
        .args(["optimize", "--config"])
        .arg(&cfg_path)
        .arg("--leads")
        .arg(&leads_path)
        .arg("--out")
        .arg(&out_dir)
        .arg("--run-logs")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for idx in 0..2 {
        let path = out_dir.join(format!("run_logs/run_log_{idx:04}.ndjson"));
        let text = std::fs::read_to_string(&path).unwrap();
        for line in text.lines() {
            let record: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(record.get("generation").is_some());
            assert!(record.get("pool").is_some());
        }
    }
}

#[test]
fn optimize_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    write_tiny_config(&cfg_path, 9);
    let leads_path = dir.path().join("leads.smi");
    std::fs::write(&leads_path, "CCO\nCCN\n").unwrap();

    let run = |workers: &str, out_name: &str| -> Vec<u8> {
        let out_dir = dir.path().join(out_name);
        let out = molopt()
            .args(["optimize", "--config"])
            .arg(&cfg_path)
            .arg("--leads")
            .arg(&leads_path)
            .arg("--out")
            .arg(&out_dir)
            .args(["--workers", workers])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(out_dir.join("results.ndjson")).unwrap()
    };
    assert_eq!(run("1", "w1"), run("4", "w4"));
}
