//! Smoothed convergence curves and evaluation tables as CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalSummary;

/// Running average over the previous `window` values (including the current
/// one); the first `window - 1` entries average whatever prefix exists.
pub fn trailing_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            // Incremental mean: exact on constant input.
            let mut mean = 0.0;
            for (n, &v) in values[(i + 1).saturating_sub(window)..=i].iter().enumerate() {
                mean += (v - mean) / (n + 1) as f64;
            }
            mean
        })
        .collect()
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// First 1-based index whose value reaches `threshold`.
pub fn rounds_to_threshold(series: &[f64], threshold: f64) -> Option<usize> {
    series.iter().position(|&v| v >= threshold).map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub round: usize,
    pub runs: usize,
    /// Mean over runs of the raw global training reward.
    pub mean: f64,
    /// Mean over runs of each run's trailing average.
    pub smoothed_mean: f64,
    /// Sample deviation over runs of the trailing averages.
    pub smoothed_std: f64,
}

/// Per-round summary of several runs, truncated to the shortest run.
pub fn convergence_report(runs: &[Vec<f64>], window: usize) -> Vec<ConvergenceRow> {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let smoothed: Vec<Vec<f64>> = runs.iter().map(|r| trailing_average(&r[..len], window)).collect();
    (0..len)
        .map(|i| {
            let raw: Vec<f64> = runs.iter().map(|r| r[i]).collect();
            let sm: Vec<f64> = smoothed.iter().map(|r| r[i]).collect();
            let (smoothed_mean, smoothed_std) = mean_std(&sm);
            ConvergenceRow {
                round: i + 1,
                runs: runs.len(),
                mean: mean_std(&raw).0,
                smoothed_mean,
                smoothed_std,
            }
        })
        .collect()
}

pub fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// One policy's line in the evaluation table: overall and per-group mean
/// reward with the deviation across runs, plus mean QoE components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub policy: String,
    pub runs: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub fcc_high_mean: f64,
    pub fcc_high_std: f64,
    pub fcc_low_mean: f64,
    pub fcc_low_std: f64,
    pub lte_high_mean: f64,
    pub lte_high_std: f64,
    pub lte_low_mean: f64,
    pub lte_low_std: f64,
    pub utility: f64,
    pub switch_penalty: f64,
    pub rebuffer_s: f64,
}

impl EvalRow {
    pub fn from_runs(policy: impl Into<String>, runs: &[EvalSummary]) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::param("no evaluation runs"));
        }
        let stat = |f: &dyn Fn(&EvalSummary) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
        let group = |g: usize| stat(&|s: &EvalSummary| s.per_group[g].reward);
        let (reward_mean, reward_std) = stat(&|s| s.overall.reward);
        let (fcc_high_mean, fcc_high_std) = group(0);
        let (fcc_low_mean, fcc_low_std) = group(1);
        let (lte_high_mean, lte_high_std) = group(2);
        let (lte_low_mean, lte_low_std) = group(3);
        Ok(Self {
            policy: policy.into(),
            runs: runs.len(),
            reward_mean,
            reward_std,
            fcc_high_mean,
            fcc_high_std,
            fcc_low_mean,
            fcc_low_std,
            lte_high_mean,
            lte_high_std,
            lte_low_mean,
            lte_low_std,
            utility: stat(&|s| s.overall.utility).0,
            switch_penalty: stat(&|s| s.overall.switch_penalty).0,
            rebuffer_s: stat(&|s| s.overall.rebuffer_s).0,
        })
    }
}
