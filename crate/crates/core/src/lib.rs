//! Simprov: self-improvement for distribution shift.
//!
//! A small, dependency-light toolkit for studying adaptation to a shifted
//! target domain without target labels. It contains:
//!
//! - a minimal MLP with analytic backprop, seedable dropout masks, and
//!   SGD/Adam ([`nn`], [`optim`]);
//! - a synthetic multi-domain benchmark generator where a spurious channel
//!   correlates with the label on training domains and anti-correlates on
//!   the target ([`data`]);
//! - base trainers: pooled ERM, IRM with the squared-gradient penalty on a
//!   dummy classifier, and GroupDRO with exponential group reweighting
//!   ([`train`]);
//! - the adaptation loop: Monte Carlo dropout pseudo-labeling, vote
//!   confidence, top-fraction selection, student distillation, and the
//!   label-free `d_rand` acceptance gate ([`adapt`]);
//! - an experiment harness with TOML configs, JSON-lines metrics,
//!   text checkpoints, and plot-data extraction ([`harness`]).
//!
//! Every run is a pure function of its config and seed: given the same
//! inputs, training trajectories, metrics streams, and checkpoints are
//! reproduced bit for bit.

pub mod adapt;
pub mod data;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod train;

pub use adapt::{
    confidence, confidence_disagreement, d_rand, distill_student, majority_vote, mc_pseudo_label,
    mc_pseudo_label_mode, select_top, simprov_adapt, simprov_adapt_observed, AdaptConfig,
    AdaptationState, IterationRecord, KappaMode, PseudoLabelRecord, SelectedBatch,
};
pub use data::{
    default_benchmark, default_benchmark_seeded, generate_domain, load_csv, make_benchmark,
    save_csv, Benchmark, BenchmarkParams, DomainDataset, DomainSpec, Sample,
};
pub use error::{Error, Result};
pub use harness::{
    config_hash, load_checkpoint, load_checkpoint_meta, load_config, run_experiment, run_trial,
    save_checkpoint, save_checkpoint_meta, BaseMethod, CheckpointMeta, ExperimentConfig,
    ExperimentSettings, ExperimentSummary, MetricsRecord, Phase, PlotKind, TrialResult,
};
pub use matrix::Matrix;
pub use nn::{
    accuracy, backward, forward, sample_mask, sample_mask_rate, softmax_ce, Activation,
    DropoutMask, Gradients, Layer, LayerGrads, MlpModel,
};
pub use optim::{opt_step, OptState, Optimizer};
pub use rng::{derive_seed, rng_from};
pub use train::{
    irm_penalty, risk_report, train_erm, train_groupdro, train_irm, RiskReport, TrainConfig,
};
