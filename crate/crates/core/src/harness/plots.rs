//! Plot-ready CSV extraction from a metrics stream. Rendering is out of
//! scope; these files feed whatever plotting tool the user prefers.

use std::path::Path;

use crate::error::{Error, Result};

use super::experiment::mean_std;
use super::metrics::{read_metrics, MetricsRecord, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Accuracy of the deployed (best accepted so far) model as the number of
    /// distillation iterations grows: rows `t, mean, std` across trials.
    Deepness,
    /// Selection signal against held-out accuracy, one point per adaptation
    /// iteration of every trial: rows `d_rand, target_acc`.
    DrandScatter,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deepness" => Ok(PlotKind::Deepness),
            "drand_scatter" | "drand-scatter" => Ok(PlotKind::DrandScatter),
            other => Err(Error::Config(format!(
                "unknown plot kind {other:?} (expected deepness or drand_scatter)"
            ))),
        }
    }
}

fn deepness_csv(records: &[MetricsRecord]) -> String {
    let mut csv = String::from("d_effective,target_acc_mean,target_acc_std\n");
    let Some(max_t) = records.iter().map(|r| r.t).max() else {
        return csv;
    };
    let mut trials: Vec<usize> = records.iter().map(|r| r.trial).collect();
    trials.sort_unstable();
    trials.dedup();

    // Per trial: the accuracy of the model actually deployed at depth t, that
    // is the last accepted candidate at or before t, carried forward through
    // rejections and past early stops.
    let mut series: Vec<Vec<Option<f64>>> = vec![vec![None; max_t + 1]; trials.len()];
    for r in records {
        if !r.accepted {
            continue;
        }
        let Some(acc) = r.target_acc else { continue };
        let row = trials.binary_search(&r.trial).expect("trial listed");
        series[row][r.t] = Some(acc);
    }
    for per_trial in &mut series {
        let mut current = None;
        for slot in per_trial.iter_mut() {
            match *slot {
                Some(v) => current = Some(v),
                None => *slot = current,
            }
        }
    }

    for t in 0..=max_t {
        let vals: Vec<f64> = series.iter().filter_map(|s| s[t]).collect();
        if vals.is_empty() {
            continue;
        }
        let (mean, std) = mean_std(&vals);
        csv.push_str(&format!("{t},{mean},{std}\n"));
    }
    csv
}

fn scatter_csv(records: &[MetricsRecord]) -> String {
    let mut csv = String::from("d_rand,target_acc\n");
    for r in records {
        if r.phase != Phase::Adapt {
            continue;
        }
        let Some(acc) = r.target_acc else { continue };
        csv.push_str(&format!("{},{}\n", r.d_rand, acc));
    }
    csv
}

/// CSV for one plot kind from in-memory records.
pub fn plot_csv(records: &[MetricsRecord], kind: PlotKind) -> String {
    match kind {
        PlotKind::Deepness => deepness_csv(records),
        PlotKind::DrandScatter => scatter_csv(records),
    }
}

/// Reads a metrics stream and writes the plot CSV. An empty stream yields a
/// header-only file.
pub fn emit_plot_data(metrics_path: &Path, kind: PlotKind, out_path: &Path) -> Result<()> {
    let records = read_metrics(metrics_path)?;
    std::fs::write(out_path, plot_csv(&records, kind))?;
    Ok(())
}
