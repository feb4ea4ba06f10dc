//! Command-line front end: dataset generation, staged train/adapt/evaluate
//! runs over files, full multi-trial experiments, and plot extraction.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, unreadable or
//! invalid config, missing input files), 2 when the work itself fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use simprov_core::adapt::{d_rand, simprov_adapt_observed};
use simprov_core::data::{load_csv, make_benchmark, save_csv, DomainDataset};
use simprov_core::error::Error;
use simprov_core::harness::checkpoint::{
    load_checkpoint_meta, save_checkpoint_meta, CheckpointMeta,
};
use simprov_core::harness::config::{config_hash, load_config, BaseMethod, ExperimentConfig};
use simprov_core::harness::experiment::run_experiment;
use simprov_core::harness::metrics::{append_metrics, write_metrics, MetricsRecord, Phase};
use simprov_core::harness::plots::{emit_plot_data, PlotKind};
use simprov_core::nn::accuracy;
use simprov_core::train::{train_erm, train_groupdro, train_irm};

#[derive(Parser)]
#[command(
    name = "simprov",
    version,
    about = "Distributional-shift adaptation: synthetic benchmarks, invariance-trained bases, confidence-gated self-distillation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the benchmark domains as CSV files.
    GenData(CommonArgs),
    /// Train the base model on the generated training domains.
    TrainBase(CommonArgs),
    /// Adapt a trained base checkpoint toward the unlabeled target domain.
    Adapt(CommonArgs),
    /// Score checkpoints on the held-out target split.
    Evaluate(CommonArgs),
    /// Run the full multi-trial experiment in one go.
    RunExperiment(CommonArgs),
    /// Extract plot-ready CSVs from a metrics stream.
    EmitPlots(CommonArgs),
}

impl Cmd {
    fn common(&self) -> &CommonArgs {
        match self {
            Cmd::GenData(c)
            | Cmd::TrainBase(c)
            | Cmd::Adapt(c)
            | Cmd::Evaluate(c)
            | Cmd::RunExperiment(c)
            | Cmd::EmitPlots(c) => c,
        }
    }
}

/// Usage problems exit 1; failures during the work exit 2.
enum CliError {
    Usage(String),
    Work(String),
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn work(e: impl std::fmt::Display) -> CliError {
    CliError::Work(e.to_string())
}

type CliResult = Result<(), CliError>;

fn resolve(args: &CommonArgs) -> Result<(ExperimentConfig, u64, PathBuf), CliError> {
    let mut cfg = load_config(&args.config).map_err(|e| match e {
        // Io errors carry no filename; all other load errors already do.
        Error::Io(_) => usage(format!("{}: {e}", args.config.display())),
        other => usage(other),
    })?;
    if let Some(s) = args.seed {
        cfg.experiment.master_seed = s;
    }
    if let Some(o) = &args.out {
        cfg.experiment.output_dir = o.clone();
    }
    let seed = cfg.experiment.master_seed;
    let out = cfg.experiment.output_dir.clone();
    Ok((cfg, seed, out))
}

fn gen_data(cfg: &ExperimentConfig, seed: u64, out: &Path) -> CliResult {
    std::fs::create_dir_all(out).map_err(usage)?;
    let bench = make_benchmark(&cfg.benchmark, seed).map_err(work)?;
    for (i, domain) in bench.train.iter().enumerate() {
        save_csv(domain, &out.join(format!("train_{i}.csv"))).map_err(work)?;
    }
    save_csv(&bench.target, &out.join("target.csv")).map_err(work)?;
    save_csv(&bench.target_eval, &out.join("target_eval.csv")).map_err(work)?;
    println!(
        "wrote {} training domains, target, and target_eval under {}",
        bench.train.len(),
        out.display()
    );
    Ok(())
}

fn load_train_domains(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<Vec<DomainDataset>, CliError> {
    let n = cfg.benchmark.train_flip_probs.len();
    (0..n)
        .map(|i| {
            let path = out.join(format!("train_{i}.csv"));
            load_csv(&path)
                .map_err(|e| usage(format!("{e} (need {}; run gen-data first)", path.display())))
        })
        .collect()
}

fn train_base(cfg: &ExperimentConfig, seed: u64, out: &Path) -> CliResult {
    let train = load_train_domains(cfg, out)?;
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    let method = cfg.experiment.base_method;
    let model = match method {
        BaseMethod::Erm => train_erm(&train, &tc),
        BaseMethod::Irm => train_irm(&train, &tc),
        BaseMethod::GroupDro => train_groupdro(&train, &tc),
    }
    .map_err(work)?;

    let meta = CheckpointMeta {
        seed,
        config_hash: config_hash(cfg),
    };
    let path = out.join("base.ckpt");
    save_checkpoint_meta(&model, &meta, &path).map_err(work)?;
    let d = d_rand(&model, &train, model.n_classes()).map_err(work)?;
    println!(
        "trained {} base (seed {seed}, d_rand {d:.4}); checkpoint at {}",
        method.name(),
        path.display()
    );
    Ok(())
}

/// Runs adaptation from files. Reads the training domains, the unlabeled
/// target features, and `base.ckpt`; never opens the eval split.
fn adapt(cfg: &ExperimentConfig, seed: u64, out: &Path) -> CliResult {
    let started = Instant::now();
    let train = load_train_domains(cfg, out)?;
    let target = load_csv(&out.join("target.csv"))
        .map_err(|e| usage(format!("{e} (run gen-data first)")))?;
    let (base, _) = load_checkpoint_meta(&out.join("base.ckpt"))
        .map_err(|e| usage(format!("{e} (run train-base first)")))?;

    let mut ac = cfg.adapt.clone();
    ac.seed = seed;
    let x_target = target.features();

    let metrics_path = out.join("metrics.jsonl");
    write_metrics(&[], &metrics_path).map_err(work)?;
    let mut observer_err: Option<Error> = None;
    let outcome = simprov_adapt_observed(&base, &train, &x_target, &ac, |rec, _| {
        if observer_err.is_some() {
            return;
        }
        let record = MetricsRecord {
            trial: 0,
            phase: if rec.t == 0 { Phase::Base } else { Phase::Adapt },
            t: rec.t,
            d_rand: rec.d_rand,
            train_acc: rec.train_acc,
            target_acc: None,
            n_selected: rec.n_selected,
            mean_kappa: rec.mean_kappa,
            accepted: rec.accepted,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if let Err(e) = append_metrics(std::slice::from_ref(&record), &metrics_path) {
            observer_err = Some(e);
        }
    });
    let (final_model, state) = outcome.map_err(work)?;
    if let Some(e) = observer_err {
        return Err(work(e));
    }

    let meta = CheckpointMeta {
        seed,
        config_hash: config_hash(cfg),
    };
    save_checkpoint_meta(&final_model, &meta, &out.join("final.ckpt")).map_err(work)?;
    let accepted = state.history.iter().skip(1).filter(|r| r.accepted).count();
    println!(
        "adaptation ran {} iterations, accepted {accepted}, best d_rand {:.4}; checkpoint at {}",
        state.history.len() - 1,
        state.best_d_rand,
        out.join("final.ckpt").display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct Evaluation {
    final_target_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_target_acc: Option<f64>,
}

fn evaluate(out: &Path) -> CliResult {
    let eval = load_csv(&out.join("target_eval.csv"))
        .map_err(|e| usage(format!("{e} (run gen-data first)")))?;
    let x = eval.features();
    let y = eval.labels();

    let (final_model, _) = load_checkpoint_meta(&out.join("final.ckpt"))
        .map_err(|e| usage(format!("{e} (run adapt first)")))?;
    let final_target_acc = accuracy(&final_model, &x, &y).map_err(work)?;

    let base_path = out.join("base.ckpt");
    let base_target_acc = if base_path.exists() {
        let (base, _) = load_checkpoint_meta(&base_path).map_err(work)?;
        Some(accuracy(&base, &x, &y).map_err(work)?)
    } else {
        None
    };

    let report = Evaluation {
        final_target_acc,
        base_target_acc,
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(work)?;
    text.push('\n');
    std::fs::write(out.join("evaluation.json"), &text).map_err(work)?;
    match base_target_acc {
        Some(b) => println!("target accuracy: final {final_target_acc:.4}, base {b:.4}"),
        None => println!("target accuracy: final {final_target_acc:.4}"),
    }
    Ok(())
}

fn run_experiment_cmd(cfg: &ExperimentConfig) -> CliResult {
    let summary = run_experiment(cfg).map_err(work)?;
    println!(
        "{}: base {:.4} ({:.4}), simprov {:.4} ({:.4}), {} of {} trials under {}",
        summary.base_method.name(),
        summary.base_acc_mean,
        summary.base_acc_std,
        summary.simprov_acc_mean,
        summary.simprov_acc_std,
        summary.completed_trials,
        summary.n_trials,
        cfg.experiment.output_dir.display()
    );
    if !summary.failed.is_empty() {
        let lines: Vec<String> = summary
            .failed
            .iter()
            .map(|f| format!("trial {}: {}", f.trial, f.error))
            .collect();
        return Err(CliError::Work(lines.join("; ")));
    }
    Ok(())
}

fn emit_plots(out: &Path) -> CliResult {
    let metrics = out.join("metrics.jsonl");
    if !metrics.exists() {
        return Err(usage(format!(
            "{} not found; run run-experiment or adapt first",
            metrics.display()
        )));
    }
    for (kind, name) in [
        (PlotKind::Deepness, "deepness.csv"),
        (PlotKind::DrandScatter, "drand_scatter.csv"),
    ] {
        emit_plot_data(&metrics, kind, &out.join(name)).map_err(work)?;
        println!("wrote {}", out.join(name).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let (cfg, seed, out) = match resolve(cli.cmd.common()) {
        Ok(resolved) => resolved,
        Err(CliError::Usage(msg)) | Err(CliError::Work(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };

    let outcome = match &cli.cmd {
        Cmd::GenData(_) => gen_data(&cfg, seed, &out),
        Cmd::TrainBase(_) => train_base(&cfg, seed, &out),
        Cmd::Adapt(_) => adapt(&cfg, seed, &out),
        Cmd::Evaluate(_) => evaluate(&out),
        Cmd::RunExperiment(_) => run_experiment_cmd(&cfg),
        Cmd::EmitPlots(_) => emit_plots(&out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Work(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
