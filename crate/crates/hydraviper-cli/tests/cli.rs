//! CLI behaviour: determinism of written outputs, sweep/ablate row
//! cardinality, tree inspection, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hydraviper"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let config = serde_json::json!({
        "environment": {
            "type": "coord_targets",
            "grid_side": 3,
            "n_agents": 2,
            "collision_penalty": -1.0,
            "horizon": 6,
            "discount": 0.95
        },
        "iterations": 3,
        "k_train": 3,
        "b_train": 8,
        "b_valid": 12,
        "max_depth": 3,
        "seeds": [0, 1],
        "output_dir": dir.join("out").to_str().unwrap()
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn run_twice_produces_byte_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("out");

    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--seed", "3"])
        .output()
        .unwrap();
    assert_success(&out);
    let first_report = fs::read(out_dir.join("report.csv")).unwrap();
    let first_ucb = fs::read(out_dir.join("ucb_log.csv")).unwrap();

    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--seed", "3"])
        .output()
        .unwrap();
    assert_success(&out);
    assert_eq!(first_report, fs::read(out_dir.join("report.csv")).unwrap());
    assert_eq!(first_ucb, fs::read(out_dir.join("ucb_log.csv")).unwrap());

    // One row per (seed, team) plus the header; trees are written per agent.
    let text = String::from_utf8(first_report).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(out_dir.join("tree_seed3_agent0.txt").exists());
    assert!(out_dir.join("tree_seed3_agent1.txt").exists());
    assert!(out_dir.join("timings.csv").exists());
}

#[test]
fn sweep_emits_values_times_seeds_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--param", "max_depth", "--values", "2,3,4,5"])
        .output()
        .unwrap();
    assert_success(&out);
    let text = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    // 4 values x 2 seeds x 1 team + header.
    assert_eq!(text.lines().count(), 1 + 8);
    assert!(text.starts_with("swept_param,swept_value,"));
}

#[test]
fn ablate_emits_the_full_flag_grid() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = bin()
        .args(["ablate", "--config"])
        .arg(&config)
        .args(["--seed", "5"])
        .output()
        .unwrap();
    assert_success(&out);
    let text = fs::read_to_string(dir.path().join("out/ablate.csv")).unwrap();
    // 8 configurations x 1 seed x 1 team + header.
    assert_eq!(text.lines().count(), 1 + 8);
}

#[test]
fn overrides_reach_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--seed", "1", "--override", "b_valid=9"])
        .output()
        .unwrap();
    assert_success(&out);
    let text = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let fields: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(fields[9], "8", "b_train untouched");
    assert_eq!(fields[10], "9", "b_valid overridden");
}

#[test]
fn dataset_dump_flag_writes_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--seed", "2", "--dump-dataset"])
        .output()
        .unwrap();
    assert_success(&out);
    let dump = fs::read_to_string(dir.path().join("out/dataset_dump_seed2.tsv")).unwrap();
    assert!(dump.starts_with("iteration\tgroup\tobservation\taction\tweight"));
}

#[test]
fn inspect_tree_renders_the_serialized_form() {
    let dir = tempfile::tempdir().unwrap();
    let tree_path = dir.path().join("tree.txt");
    fs::write(
        &tree_path,
        "(split f0:own_row <= 1.5\n  (leaf a0)\n  (leaf a2))\n",
    )
    .unwrap();
    let out = bin()
        .args(["inspect-tree", "--file"])
        .arg(&tree_path)
        .output()
        .unwrap();
    assert_success(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("if own_row <= 1.5:"));
    assert!(text.contains("-> action 2"));
}

#[test]
fn bad_inputs_use_the_documented_exit_codes() {
    // Missing config path: usage error.
    let out = bin()
        .args(["run", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Unknown config key: usage error.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"environmnt": {}}"#).unwrap();
    let out = bin().args(["run", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Malformed override: usage error.
    let config = write_config(dir.path());
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--override", "no_equals_sign"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Invalid budget after override: usage error.
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--override", "b_train=0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Malformed tree file: runtime error.
    let tree_path = dir.path().join("broken.txt");
    fs::write(&tree_path, "(leaf b0)").unwrap();
    let out = bin()
        .args(["inspect-tree", "--file"])
        .arg(&tree_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn env_var_overrides_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let env_out = dir.path().join("env_out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--seed", "0"])
        .env("HYDRAVIPER_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert_success(&out);
    assert!(env_out.join("report.csv").exists());
}
