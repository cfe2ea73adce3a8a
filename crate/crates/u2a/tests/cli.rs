//! CLI contract: exit codes, artifact presence, config-file merging, the
//! baseline-vs-library equivalence, and the gain-sign regression guard.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_u2a")
}

fn fresh_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("u2a_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(args: &[&str], dir: &Path) -> String {
    let out = Command::new(bin())
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen_small(dir: &Path, seed: &str) {
    run_ok(
        &[
            "gen-data",
            "--n-train",
            "96",
            "--n-negatives",
            "24",
            "--n-retain",
            "48",
            "--n-holdout",
            "24",
            "--negative-bias",
            "0.7",
            "--seed",
            seed,
        ],
        dir,
    );
    run_ok(&["train", "--seed", seed], dir);
    run_ok(&["train-reward", "--seed", seed], dir);
}

#[test]
fn usage_errors_exit_2() {
    let out = Command::new(bin()).arg("--definitely-not-a-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(bin()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // Config-level validation also maps to usage.
    let dir = fresh_dir("usage");
    let out = Command::new(bin())
        .args(["train", "--forget-loss", "dpo", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_or_malformed_artifacts_exit_3() {
    let dir = fresh_dir("format");
    // No world.json yet.
    let out = Command::new(bin()).args(["train", "--out"]).arg(&dir).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    // A reward file where a policy is expected.
    gen_small(&dir, "1");
    std::fs::copy(dir.join("world.json"), dir.join("policy.json")).unwrap();
    let out = Command::new(bin())
        .args(["unlearn-baseline", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn numerical_failures_exit_4() {
    let dir = fresh_dir("numerics");
    gen_small(&dir, "2");
    // One CG iteration cannot reach a 1e-8 residual on this system.
    let out = Command::new(bin())
        .args([
            "u2a",
            "--cg-max-iters",
            "1",
            "--lambda",
            "2.0",
            "--seed",
            "2",
            "--out",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn eval_prints_single_json_object() {
    let dir = fresh_dir("evaljson");
    gen_small(&dir, "3");
    let stdout = run_ok(&["eval", "--seed", "3"], &dir);
    let line = stdout.trim();
    let value: serde_json::Value = serde_json::from_str(line).unwrap();
    for key in ["mia_auc", "ppl", "reward_value"] {
        assert!(value.get(key).and_then(|v| v.as_f64()).is_some(), "missing {key}");
    }
    assert!(dir.join("metrics.json").exists());
}

#[test]
fn config_file_merges_under_flags() {
    let dir = fresh_dir("merge");
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, r#"{"seed": 9, "lambda": 3.0, "train_steps": 50}"#).unwrap();
    run_ok(
        &[
            "gen-data",
            "--config",
            config_path.to_str().unwrap(),
            "--n-train",
            "32",
            "--n-negatives",
            "8",
            "--n-retain",
            "16",
            "--n-holdout",
            "8",
            "--seed",
            "5",
        ],
        &dir,
    );
    // The flag overrode the file's seed; the manifest records the effective
    // config hash and seed.
    let manifest = std::fs::read_to_string(dir.join("manifest.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(manifest.lines().last().unwrap()).unwrap();
    assert_eq!(line["seed"], 5);
    // An unknown key in the file is a usage error.
    std::fs::write(&config_path, r#"{"mystery": 1}"#).unwrap();
    let out = Command::new(bin())
        .args(["train", "--config", config_path.to_str().unwrap(), "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn baseline_command_equals_library_inner_solve() {
    let dir = fresh_dir("baseline");
    gen_small(&dir, "4");
    run_ok(&["unlearn-baseline", "--lambda", "2.0", "--seed", "4"], &dir);

    let vocab = u2a::policy::Vocab::new(12).unwrap();
    let negatives =
        u2a::artifacts::load_seqs_jsonl(&dir.join("negatives.jsonl"), &vocab).unwrap();
    let theta_star = u2a::artifacts::load_policy(&dir.join("policy.json")).unwrap();
    let n = negatives.len();
    let weights = u2a::bilevel::WeightVector::from_omega(vec![1.0 / n as f64; n]).unwrap();
    let inner = u2a::forget::InnerConfig {
        lambda: 2.0,
        ..u2a::forget::InnerConfig::default()
    };
    let solved = u2a::forget::inner_solve(
        &u2a::forget::ForgetLossKind::Ga,
        &weights,
        &negatives,
        &theta_star,
        None,
        &inner,
    )
    .unwrap();

    let from_cli = u2a::artifacts::load_policy(&dir.join("unlearned.json")).unwrap();
    for (a, b) in from_cli.as_flat().iter().zip(solved.params.as_flat()) {
        assert_eq!(a.to_bits(), b.to_bits(), "baseline differs from direct solve");
    }
}

#[test]
fn gain_sign_switch_changes_selection() {
    let dir = fresh_dir("gainsign");
    gen_small(&dir, "6");
    for sign in ["min", "max"] {
        run_ok(
            &[
                "u2a",
                "--gain-sign",
                sign,
                "--lambda",
                "2.0",
                "--beta",
                "0.005",
                "--delta",
                "0.00001",
                "--max-iters",
                "6",
                "--seed",
                "6",
            ],
            &dir,
        );
        std::fs::rename(dir.join("run.json"), dir.join(format!("run_{sign}.json"))).unwrap();
    }
    let min_run = u2a::artifacts::load_run(&dir.join("run_min.json")).unwrap();
    let max_run = u2a::artifacts::load_run(&dir.join("run_max.json")).unwrap();
    assert_ne!(
        min_run.selected, max_run.selected,
        "selection direction had no effect"
    );
}
