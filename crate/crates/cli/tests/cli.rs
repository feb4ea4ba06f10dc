//! End-to-end binary tests: the staged file pipeline, the one-shot
//! experiment, exit-code conventions, and the eval-isolation guarantee at
//! the file level.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simprov"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY: &str = r#"
[experiment]
n_trials = 2

[benchmark]
n_per_domain = 100
d_inv = 2
d_spur = 2

[train]
epochs = 15
batch_size = 40
penalty_warmup = 4
hidden = [6]

[adapt]
m = 3
deepness = 2
patience = 0

[adapt.student]
epochs = 8
batch_size = 40
hidden = [6]
"#;

fn write_tiny(dir: &Path) {
    std::fs::write(dir.join("tiny.toml"), TINY).unwrap();
}

#[test]
fn help_lists_all_subcommands() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    for sub in [
        "gen-data",
        "train-base",
        "adapt",
        "evaluate",
        "run-experiment",
        "emit-plots",
    ] {
        assert!(text.contains(sub), "--help must mention {sub}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny(dir.path());

    // Missing required flag.
    let out = run(&["gen-data"], dir.path());
    assert_eq!(code(&out), 1);

    // Unknown subcommand.
    let out = run(&["frobnicate", "--config", "tiny.toml"], dir.path());
    assert_eq!(code(&out), 1);

    // Config file does not exist.
    let out = run(&["gen-data", "--config", "missing.toml", "--out", "d"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("missing.toml"));

    // Config with an invalid value.
    std::fs::write(dir.path().join("bad.toml"), "[train]\nlr = -2.0").unwrap();
    let out = run(&["gen-data", "--config", "bad.toml", "--out", "d"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("lr"));

    // Config with a misspelled key.
    std::fs::write(dir.path().join("typo.toml"), "[adapt]\nselect_frac = 0.5").unwrap();
    let out = run(&["gen-data", "--config", "typo.toml", "--out", "d"], dir.path());
    assert_eq!(code(&out), 1);

    // Adapt before any data or base exists.
    let out = run(&["adapt", "--config", "tiny.toml", "--out", "empty"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("gen-data"));
}

#[test]
fn staged_pipeline_is_isolated_from_the_eval_file() {
    // Two separate working directories running the identical command
    // sequence (same relative --out, so identical config hashes in the
    // checkpoints); the second deletes the eval file before adaptation.
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();

    for (cwd, drop_eval) in [(dir_a.path(), false), (dir_b.path(), true)] {
        write_tiny(cwd);
        let out = run(&["gen-data", "--config", "tiny.toml", "--out", "d"], cwd);
        assert_eq!(code(&out), 0, "gen-data: {}", stderr(&out));
        for file in ["train_0.csv", "train_1.csv", "target.csv", "target_eval.csv"] {
            assert!(cwd.join("d").join(file).exists(), "missing {file}");
        }
        let out = run(&["train-base", "--config", "tiny.toml", "--out", "d"], cwd);
        assert_eq!(code(&out), 0, "train-base: {}", stderr(&out));
        assert!(cwd.join("d/base.ckpt").exists());

        if drop_eval {
            std::fs::remove_file(cwd.join("d/target_eval.csv")).unwrap();
        }
        let out = run(&["adapt", "--config", "tiny.toml", "--out", "d"], cwd);
        assert_eq!(code(&out), 0, "adapt: {}", stderr(&out));
        assert!(cwd.join("d/final.ckpt").exists());
        assert!(cwd.join("d/metrics.jsonl").exists());
    }

    let a = std::fs::read(dir_a.path().join("d/final.ckpt")).unwrap();
    let b = std::fs::read(dir_b.path().join("d/final.ckpt")).unwrap();
    assert_eq!(a, b, "deleting target_eval.csv changed the adapted model");

    // The metrics stream never scores against the eval split here.
    let metrics = std::fs::read_to_string(dir_b.path().join("d/metrics.jsonl")).unwrap();
    assert!(metrics.lines().count() >= 2);
    for line in metrics.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["target_acc"].is_null(), "adapt must not score target_acc");
    }

    // Scoring works once the eval file is regenerated (same seed, same bytes).
    let out = run(&["gen-data", "--config", "tiny.toml", "--out", "d"], dir_b.path());
    assert_eq!(code(&out), 0);
    let out = run(&["evaluate", "--config", "tiny.toml", "--out", "d"], dir_b.path());
    assert_eq!(code(&out), 0, "evaluate: {}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir_b.path().join("d/evaluation.json")).unwrap(),
    )
    .unwrap();
    let final_acc = report["final_target_acc"].as_f64().unwrap();
    let base_acc = report["base_target_acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&final_acc));
    assert!((0.0..=1.0).contains(&base_acc));
}

#[test]
fn experiment_and_plots_with_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny(dir.path());

    let out = run(
        &["run-experiment", "--config", "tiny.toml", "--seed", "7", "--out", "exp"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "run-experiment: {}", stderr(&out));

    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("exp/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["completed_trials"], 2);
    assert_eq!(summary["per_trial"][0]["seed"], 7, "--seed must override the master seed");
    assert_eq!(summary["per_trial"][1]["seed"], 8);

    let out = run(&["emit-plots", "--config", "tiny.toml", "--out", "exp"], dir.path());
    assert_eq!(code(&out), 0, "emit-plots: {}", stderr(&out));
    let deepness = std::fs::read_to_string(dir.path().join("exp/deepness.csv")).unwrap();
    assert!(deepness.starts_with("d_effective,target_acc_mean,target_acc_std\n"));
    assert!(deepness.lines().count() > 1);
    let scatter = std::fs::read_to_string(dir.path().join("exp/drand_scatter.csv")).unwrap();
    assert!(scatter.starts_with("d_rand,target_acc\n"));

    // Plots before any metrics exist is a usage error.
    let out = run(&["emit-plots", "--config", "tiny.toml", "--out", "nowhere"], dir.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn diverging_trials_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let divergent = r#"
[experiment]
n_trials = 1

[benchmark]
n_per_domain = 80
d_inv = 2
d_spur = 2

[train]
epochs = 20
batch_size = 20
hidden = [6]
optimizer = "sgd"
lr = 1e200

[adapt]
m = 2
deepness = 1

[adapt.student]
epochs = 4
batch_size = 20
hidden = [4]
"#;
    std::fs::write(dir.path().join("div.toml"), divergent).unwrap();
    let out = run(&["run-experiment", "--config", "div.toml", "--out", "exp"], dir.path());
    assert_eq!(code(&out), 2, "divergence must exit 2: {}", stderr(&out));

    // The failure is still recorded in a written summary.
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("exp/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["completed_trials"], 0);
    assert!(summary["failed"].as_array().unwrap().len() == 1);
}
