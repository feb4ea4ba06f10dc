//! Harness-level integration checks on the stock configuration: summary
//! structure, plot extraction bookkeeping, and file-level invariants that the
//! per-module unit tests cannot see. The stock config is run once and shared.

use std::sync::OnceLock;

use simprov_core::harness::checkpoint::save_checkpoint;
use simprov_core::harness::config::{config_hash, BaseMethod, ExperimentConfig};
use simprov_core::harness::experiment::{read_summary, run_experiment, ExperimentSummary};
use simprov_core::harness::metrics::{read_metrics, MetricsRecord};
use simprov_core::harness::plots::{emit_plot_data, PlotKind};
use simprov_core::nn::{Activation, MlpModel};

struct DefaultRun {
    cfg: ExperimentConfig,
    summary: ExperimentSummary,
    records: Vec<MetricsRecord>,
    dir: tempfile::TempDir,
}

fn default_run() -> &'static DefaultRun {
    static RUN: OnceLock<DefaultRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.output_dir = dir.path().join("out");
        let summary = run_experiment(&cfg).expect("stock config runs");
        let records =
            read_metrics(&cfg.experiment.output_dir.join("metrics.jsonl")).expect("metrics");
        DefaultRun {
            cfg,
            summary,
            records,
            dir,
        }
    })
}

#[test]
fn stock_summary_reports_both_method_means() {
    let run = default_run();
    let s = &run.summary;

    assert_eq!(s.base_method, BaseMethod::Irm);
    assert_eq!(s.n_trials, 5);
    assert_eq!(s.completed_trials, 5);
    assert!(s.failed.is_empty());
    assert_eq!(s.config_hash, config_hash(&run.cfg));

    // Both method-level aggregates are present with honest spread.
    assert!(s.base_acc_mean > 0.0 && s.base_acc_mean < 1.0);
    assert!(s.simprov_acc_mean > 0.0 && s.simprov_acc_mean < 1.0);
    assert!(s.base_acc_std > 0.0, "five seeds should not agree exactly");
    assert!(s.simprov_acc_std > 0.0);
    assert!(s.note.is_none());

    // Trials are reported in index order with their derived seeds.
    for (i, t) in s.per_trial.iter().enumerate() {
        assert_eq!(t.trial, i);
        assert_eq!(t.seed, run.cfg.trial_seed(i));
    }

    let best = s.best_by_d_rand.as_ref().expect("candidate reported");
    let max_d = s
        .per_trial
        .iter()
        .map(|t| t.final_d_rand)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best.d_rand, max_d);
}

#[test]
fn stock_deepness_series_rises_or_holds_early_on_most_seeds() {
    let run = default_run();

    // Per seed: the accuracy of the model actually deployed at each depth,
    // carrying the last accepted candidate through rejections.
    let mut ok = 0;
    for trial in 0..5 {
        let recs: Vec<&MetricsRecord> =
            run.records.iter().filter(|r| r.trial == trial).collect();
        assert!(!recs.is_empty());
        let base = recs[0].target_acc.expect("scored");
        let next = recs
            .get(1)
            .map(|r| {
                if r.accepted {
                    r.target_acc.expect("scored")
                } else {
                    base
                }
            })
            .unwrap_or(base);
        if next >= base - 1e-12 {
            ok += 1;
        }
    }
    assert!(
        ok >= 4,
        "deployed-accuracy series dropped between depths 0 and 1 on {} of 5 seeds",
        5 - ok
    );

    // The emitted CSV covers every depth: the base row exists for all trials,
    // so carry-forward fills the full grid.
    let metrics = run.cfg.experiment.output_dir.join("metrics.jsonl");
    let out = run.dir.path().join("deepness.csv");
    emit_plot_data(&metrics, PlotKind::Deepness, &out).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "d_effective,target_acc_mean,target_acc_std");
    let max_t = run.records.iter().map(|r| r.t).max().unwrap();
    assert_eq!(lines.len(), 1 + max_t + 1);

    // Depth 0 is the mean base accuracy.
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[0], "0");
    let mean0: f64 = first[1].parse().unwrap();
    assert!((mean0 - run.summary.base_acc_mean).abs() < 1e-12);
}

#[test]
fn stock_scatter_has_one_row_per_iteration() {
    let run = default_run();
    let metrics = run.cfg.experiment.output_dir.join("metrics.jsonl");
    let out = run.dir.path().join("scatter.csv");
    emit_plot_data(&metrics, PlotKind::DrandScatter, &out).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    let rows = text.lines().count() - 1;
    let expected: usize = run.summary.per_trial.iter().map(|t| t.iterations).sum();
    assert_eq!(rows, expected, "scatter rows must equal total iterations");
}

#[test]
fn stock_summary_file_round_trips_and_std_recomputes() {
    let run = default_run();
    let loaded = read_summary(&run.cfg.experiment.output_dir.join("summary.json")).unwrap();
    assert_eq!(loaded, run.summary);

    let accs: Vec<f64> = loaded
        .per_trial
        .iter()
        .map(|t| t.final_target_acc)
        .collect();
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - loaded.simprov_acc_mean).abs() < 1e-12);
    assert!((var.sqrt() - loaded.simprov_acc_std).abs() < 1e-12);
}

#[test]
fn stock_model_checkpoint_size_is_tens_of_kilobytes() {
    let dir = tempfile::tempdir().unwrap();
    let model = MlpModel::init(10, &[32, 32], 2, Activation::Relu, 0.0, 0).unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let size = std::fs::metadata(&path).unwrap().len();
    assert!(
        (10_000..500_000).contains(&size),
        "checkpoint of the stock architecture is {size} bytes; expected tens to hundreds of kilobytes"
    );
}
