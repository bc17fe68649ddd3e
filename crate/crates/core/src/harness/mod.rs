//! Monte Carlo experiment runner: scenario pipelines, normalized-MSE
//! bookkeeping and CSV/JSON result tables.
//!
//! Every trial draws from its own RNG streams, derived from the experiment
//! seed and the trial index, and all SNR points of a trial share the same
//! channel, payload and unit-variance noise draw. Results are reduced in
//! trial order, so the table does not depend on the worker count.

mod config;
mod matching;
mod scenarios;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{snr_to_noise_variance, velocity_to_doppler, ChannelMode, ExperimentSpec, Profile, Scenario};
pub use matching::{angles, gains, match_paths, paired_values, parameter_distance, resolve_angle_alias, Pair};
pub use scenarios::{leakage_reference_system, LEAKAGE_THETA_DEG};

use crate::error::{Error, Result};
use crate::numkit::C64;
use crate::par;

/// `||estimate - truth||^2 / ||truth||^2` for one trial.
pub fn normalized_mse(estimate: &[C64], truth: &[C64]) -> Result<f64> {
    check_lengths(estimate.len(), truth.len())?;
    let num: f64 = estimate.iter().zip(truth).map(|(e, t)| (e - t).norm_sqr()).sum();
    ratio(num, truth.iter().map(|t| t.norm_sqr()).sum())
}

pub fn normalized_mse_real(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(estimate.len(), truth.len())?;
    let num: f64 = estimate.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum();
    ratio(num, truth.iter().map(|t| t * t).sum())
}

fn check_lengths(got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Dimension {
            what: "estimate vector",
            expected,
            got,
        });
    }
    Ok(())
}

fn ratio(num: f64, den: f64) -> Result<f64> {
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(num / den)
}

/// Seed for stream `stream` of trial `trial`.
pub fn trial_seed(seed: u64, trial: usize, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((trial as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(stream.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub reduce: Reduce,
}

impl Metric {
    pub fn mean(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            reduce: Reduce::Mean,
        }
    }

    pub fn max(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            reduce: Reduce::Max,
        }
    }
}

/// Metrics of one trial at one operating point. `snr_db` is `None` for
/// noiseless scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub snr_db: Option<f64>,
    pub metrics: Vec<Metric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub snr_db: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,snr_db,metric,value,trials,seed\n");
        for r in &self.rows {
            let snr = r.snr_db.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{:e},{},{}", r.scenario, snr, r.metric, r.value, r.trials, r.seed);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.rows)?)
    }

    /// Writes the CSV to `path` and the JSON mirror next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        std::fs::write(path.with_extension("json"), self.to_json()?)?;
        Ok(())
    }

    /// Value of `metric` at `snr_db`, if present.
    pub fn value(&self, snr_db: Option<f64>, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.snr_db == snr_db && r.metric == metric)
            .map(|r| r.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Sequential,
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    run_experiment_with(spec, Execution::Parallel)
}

pub fn run_experiment_with(spec: &ExperimentSpec, execution: Execution) -> Result<ResultTable> {
    spec.validate()?;
    let trials = if spec.scenario == Scenario::LeakageMap { 1 } else { spec.trials };
    let outputs: Vec<Result<Vec<Point>>> = match execution {
        Execution::Parallel => par::with_workers(spec.workers, || par::map_indexed(trials, |t| run_trial(spec, t)))?,
        Execution::Sequential => par::map_indexed_seq(trials, |t| run_trial(spec, t)),
    };
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;
    reduce(spec, trials, &outputs)
}

/// Runs the scenario pipeline of one trial.
pub fn run_trial(spec: &ExperimentSpec, trial: usize) -> Result<Vec<Point>> {
    match spec.scenario {
        Scenario::ParamCapture => scenarios::run_param_capture(spec, trial),
        Scenario::UlDetect => scenarios::run_ul_detect(spec, trial),
        Scenario::DlDetect => scenarios::run_dl_detect(spec, trial),
        Scenario::OracleCheck => scenarios::run_oracle_check(spec, trial),
        Scenario::LeakageMap => scenarios::run_leakage_map(spec),
    }
}

fn reduce(spec: &ExperimentSpec, trials: usize, outputs: &[Vec<Point>]) -> Result<ResultTable> {
    let first = outputs.first().ok_or_else(|| Error::Config("no trials ran".into()))?;
    let mut rows = Vec::new();
    for (pi, point) in first.iter().enumerate() {
        for (mi, metric) in point.metrics.iter().enumerate() {
            let mut acc = match metric.reduce {
                Reduce::Mean => 0.0,
                Reduce::Max => f64::NEG_INFINITY,
            };
            for out in outputs {
                let m = out
                    .get(pi)
                    .and_then(|p| p.metrics.get(mi))
                    .filter(|m| m.name == metric.name)
                    .ok_or_else(|| Error::Config(format!("trial outputs disagree on metric `{}`", metric.name)))?;
                acc = match metric.reduce {
                    Reduce::Mean => acc + m.value,
                    Reduce::Max => acc.max(m.value),
                };
            }
            if metric.reduce == Reduce::Mean {
                acc /= trials as f64;
            }
            rows.push(ResultRow {
                scenario: spec.scenario.id().to_string(),
                snr_db: point.snr_db,
                metric: metric.name.clone(),
                value: acc,
                trials,
                seed: spec.seed,
            });
        }
    }
    Ok(ResultTable { rows })
}
