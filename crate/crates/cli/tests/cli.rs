//! End-to-end tests of the command-line surface.

use crowdnav::env::PolicyMode;
use crowdnav::valuenet::{Checkpoint, NetShape, ValueNet, FEATURE_DIM};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn crowdnav_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdnav"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_tiny_config(path: &Path) {
    fs::write(
        path,
        r#"
[env]
n = 1
seed = 9

[train]
imitation_episodes = 2
imitation_epochs = 1
rl_episodes = 3
batch = 16
eps_decay_episodes = 4
curriculum_switch = 0
checkpoint_interval = 2
"#,
    )
    .unwrap();
}

/// A checkpoint with a small network shape, so CLI tests stay fast.
fn write_small_checkpoint(path: &Path, mode: PolicyMode) {
    let shape = NetShape {
        embed: vec![FEATURE_DIM, 10, 8],
        pairwise: vec![8, 6],
        attention: vec![16, 8, 1],
        value: vec![12, 8, 1],
    };
    let net = ValueNet::init(shape, 77).unwrap();
    Checkpoint::from_net(&net, mode, 0).save(path).unwrap();
}

#[test]
fn missing_config_file_is_a_clean_error() {
    let out = crowdnav_cmd(&[
        "train",
        "--config",
        "/nonexistent/config.toml",
        "--out",
        "/tmp/never-created",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("config"), "{stderr}");
}

#[test]
fn invalid_config_reports_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[env]\neta = 0.1\nbeta = 0.2\n").unwrap();
    let out = crowdnav_cmd(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("eta"), "{stderr}");
}

#[test]
fn train_writes_manifest_log_and_checkpoints_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write_tiny_config(&cfg);
    let out_dir = dir.path().join("run");

    let out = crowdnav_cmd(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--mode",
        "sarl",
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["action_space"], 9);
    assert_eq!(manifest["mode"], "sarl");
    let log = fs::read_to_string(out_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(out_dir.join("checkpoints/final.json").exists());
    assert!(out_dir.join("checkpoints/latest.json").exists());

    // Resume with a larger budget: the log gains exactly the new episodes.
    let out = crowdnav_cmd(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--mode",
        "sarl",
        "--seed",
        "5",
        "--episodes",
        "5",
        "--resume",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(out_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let episodes: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["episode"].as_u64().unwrap())
        .collect();
    assert_eq!(episodes, vec![0, 1, 2, 3, 4]);
}

#[test]
fn l2b_mode_records_17_actions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write_tiny_config(&cfg);
    let out_dir = dir.path().join("run");
    let out = crowdnav_cmd(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--mode",
        "l2b",
        "--episodes",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["action_space"], 17);
}

#[test]
fn evaluate_defaults_to_500_cases() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.json");
    write_small_checkpoint(&ckpt, PolicyMode::Sarl);
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[env]\nn = 0\n").unwrap();
    let out_dir = dir.path().join("eval");
    let out = crowdnav_cmd(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let episodes = fs::read_to_string(out_dir.join("episodes.jsonl")).unwrap();
    assert_eq!(episodes.lines().count(), 500);
    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("method,N,beta,success,collision,timeout,time,beep_freq"));
}

#[test]
fn corrupted_checkpoint_fails_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("broken.json");
    fs::write(&ckpt, b"{ definitely not a checkpoint").unwrap();
    let out_dir = dir.path().join("eval");
    let out = crowdnav_cmd(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--n-cases",
        "1",
    ]);
    assert!(!out.status.success());
    assert!(!out_dir.exists(), "partial output was created");
}

#[test]
fn rollout_traces_are_reproducible_and_plottable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[env]\nn = 3\n").unwrap();
    let trace_a = dir.path().join("a.jsonl");
    let trace_b = dir.path().join("b.jsonl");
    for trace in [&trace_a, &trace_b] {
        let out = crowdnav_cmd(&[
            "rollout",
            "--config",
            cfg.to_str().unwrap(),
            "--policy",
            "orca",
            "--seed",
            "33",
            "--trace-out",
            trace.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(&trace_a).unwrap();
    let b = fs::read(&trace_b).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "trace bytes differ between identical runs");

    let svg = dir.path().join("plot.svg");
    let out = crowdnav_cmd(&[
        "plot",
        "--trace",
        trace_a.to_str().unwrap(),
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let svg_text = fs::read_to_string(&svg).unwrap();
    assert!(svg_text.starts_with("<svg"));
    assert!(svg_text.contains("class=\"goal\""));
}

#[test]
fn rollout_with_checkpoint_writes_plot() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.json");
    write_small_checkpoint(&ckpt, PolicyMode::L2b);
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[env]\nn = 2\n").unwrap();
    let trace = dir.path().join("t.jsonl");
    let plot = dir.path().join("t.svg");
    let out = crowdnav_cmd(&[
        "rollout",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--seed",
        "2",
        "--trace-out",
        trace.to_str().unwrap(),
        "--plot-out",
        plot.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(trace.exists() && plot.exists());
}

#[test]
fn sweep_trains_cells_and_reports_missing_ones_when_evaluate_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write_tiny_config(&cfg);
    let out_dir = dir.path().join("sweep");

    // evaluate-only on an empty directory names the missing cell.
    let out = crowdnav_cmd(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--betas",
        "0.1",
        "--n-humans",
        "1",
        "--evaluate-only",
        "--n-cases",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("beta=0.1") && stderr.contains("n=1"), "{stderr}");

    // A full sweep trains the cell and writes the grid CSV.
    let out = crowdnav_cmd(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--betas",
        "0.1",
        "--n-humans",
        "1",
        "--episodes",
        "2",
        "--n-cases",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("cells/beta0.1_n1.json").exists());
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn env_variable_overrides_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write_tiny_config(&cfg);
    let out_dir = dir.path().join("run");
    let out = Command::new(env!("CARGO_BIN_EXE_crowdnav"))
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--episodes",
            "1",
        ])
        .env("CROWDNAV_ENV_N", "2")
        .env("CROWDNAV_TRAIN_GAMMA", "0.85")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["env"]["n"], 2);
    assert_eq!(manifest["train"]["gamma"], 0.85);
}
