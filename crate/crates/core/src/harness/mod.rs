//! Experiment harness: config files, metrics streams, checkpoints, the
//! multi-trial runner, and plot-data extraction.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod plots;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_meta, save_checkpoint, save_checkpoint_meta, CheckpointMeta,
};
pub use config::{config_hash, load_config, BaseMethod, ExperimentConfig, ExperimentSettings};
pub use experiment::{
    read_summary, run_experiment, run_trial, write_summary, BestCandidate, ExperimentSummary,
    TrialFailure, TrialResult,
};
pub use metrics::{
    append_metrics, metrics_digest, read_metrics, write_metrics, MetricsRecord, Phase,
};
pub use plots::{emit_plot_data, plot_csv, PlotKind};
