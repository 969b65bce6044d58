use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use super::metrics::{MetricsReport, Prediction};
use crate::channel::VelocityMode;
use crate::error::{Error, Result};
use crate::mle::{estimate, MleConfig};
use crate::nn::{
    predict_trace, train, ModelParams, TracePrediction, TrainConfig, TrainingLog, WindowConfig,
};
use crate::sim::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleSettings {
    pub config: MleConfig,
    pub velocity_mode: VelocityMode,
    /// Seeds coordinate-descent restarts when there are too many branches
    /// for an exhaustive grid.
    pub seed: u64,
}

/// Anything that turns a trace into distance estimates.
#[derive(Debug, Clone)]
pub enum Estimator {
    Sbrnn(Box<ModelParams>),
    Mle(MleSettings),
    /// Predicts the same distances for every window, e.g. the mean training
    /// target.
    Constant {
        distances: Vec<f64>,
        window: WindowConfig,
    },
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Sbrnn(_) => "sbrnn",
            Estimator::Mle(_) => "mle",
            Estimator::Constant { .. } => "mean_baseline",
        }
    }
}

/// Estimates for one test trace.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub config_id: usize,
    pub iteration: usize,
    /// Sorted ascending.
    pub ground_truth: Vec<f64>,
    /// Sorted ascending. For windowed estimators the mean over windows.
    pub aggregate: Vec<f64>,
    pub per_window: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub per_iteration: MetricsReport,
    /// Present for windowed estimators.
    pub per_window: Option<MetricsReport>,
    pub records: Vec<PredictionRecord>,
    /// Mean squared error of the aggregated estimates (m²).
    pub iteration_mse: f64,
    /// Mean squared error over individual windows (m²).
    pub window_mse: Option<f64>,
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn mse<'a>(pairs: impl Iterator<Item = (&'a [f64], &'a [f64])>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, g) in pairs {
        for (a, b) in p.iter().zip(g) {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    sum / n as f64
}

fn predict_member(
    estimator: &Estimator,
    dataset: &Dataset,
    config: usize,
    iteration: usize,
) -> Result<PredictionRecord> {
    let trace = dataset.load_trace(config, iteration)?;
    let ground_truth = sorted(dataset.runs[config].distances_m.clone());
    let (aggregate, per_window) = match estimator {
        Estimator::Sbrnn(model) => {
            if model.config.outputs != ground_truth.len() {
                return Err(Error::Config(format!(
                    "model predicts {} distances, dataset has {} sources",
                    model.config.outputs,
                    ground_truth.len()
                )));
            }
            let p = predict_trace(model, &trace)?;
            (p.aggregate, Some(p.per_window))
        }
        Estimator::Mle(settings) => {
            let run = &dataset.runs[config];
            let known = run.known_channel(run.record(iteration)?, settings.velocity_mode)?;
            let k = known.topology.branch_count();
            let seed = derive_seed(settings.seed, (config as u64) << 32 | iteration as u64);
            let cfg = settings.config.for_branches(k, seed);
            (sorted(estimate(&trace, &known, &cfg)?.distances), None)
        }
        Estimator::Constant { distances, window } => {
            if distances.len() != ground_truth.len() {
                return Err(Error::Config(
                    "baseline width differs from the source count".into(),
                ));
            }
            let windows = crate::nn::window_inputs(&trace, window, 1.0)?.len();
            let p = TracePrediction::from_windows(vec![distances.clone(); windows])?;
            (p.aggregate, Some(p.per_window))
        }
    };
    Ok(PredictionRecord {
        config_id: config,
        iteration,
        ground_truth,
        aggregate,
        per_window,
    })
}

/// Runs an estimator over one split and summarizes it per iteration and,
/// for windowed estimators, per window.
pub fn evaluate(estimator: &Estimator, dataset: &Dataset, split: Split) -> Result<Evaluation> {
    let members = dataset.members(split);
    if members.is_empty() {
        return Err(Error::Config(format!("{split} split is empty")));
    }
    let records = members
        .par_iter()
        .map(|&(c, i)| predict_member(estimator, dataset, c, i))
        .collect::<Result<Vec<_>>>()?;

    let iteration_preds = records
        .iter()
        .map(|r| Prediction::new(r.config_id, r.ground_truth.clone(), r.aggregate.clone()))
        .collect::<Result<Vec<_>>>()?;
    let per_iteration = MetricsReport::from_predictions(estimator.name(), &iteration_preds)?;
    let iteration_mse = mse(records
        .iter()
        .map(|r| (r.aggregate.as_slice(), r.ground_truth.as_slice())));

    let windowed = records.iter().all(|r| r.per_window.is_some());
    let (per_window, window_mse) = if windowed {
        let mut preds = Vec::new();
        for r in &records {
            for w in r.per_window.as_ref().expect("windowed") {
                preds.push(Prediction::new(
                    r.config_id,
                    r.ground_truth.clone(),
                    w.clone(),
                )?);
            }
        }
        let name = format!("{}_window", estimator.name());
        let report = MetricsReport::from_predictions(&name, &preds)?;
        let err = mse(preds
            .iter()
            .map(|p| (p.estimate.as_slice(), p.ground_truth.as_slice())));
        (Some(report), Some(err))
    } else {
        (None, None)
    };
    Ok(Evaluation {
        per_iteration,
        per_window,
        records,
        iteration_mse,
        window_mse,
    })
}

impl Evaluation {
    /// One row per estimate: `granularity,config_id,iteration,window,branch,gt_m,pred_m`.
    /// The window column is empty for per-iteration rows.
    pub fn write_scatter_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record([
            "granularity",
            "config_id",
            "iteration",
            "window",
            "branch",
            "gt_m",
            "pred_m",
        ])
        .map_err(|e| Error::csv(path, e))?;
        for r in &self.records {
            for (b, (g, p)) in r.ground_truth.iter().zip(&r.aggregate).enumerate() {
                w.write_record([
                    "iteration".to_string(),
                    r.config_id.to_string(),
                    r.iteration.to_string(),
                    String::new(),
                    b.to_string(),
                    g.to_string(),
                    p.to_string(),
                ])
                .map_err(|e| Error::csv(path, e))?;
            }
        }
        for r in &self.records {
            for (wi, est) in r.per_window.iter().flatten().enumerate() {
                for (b, (g, p)) in r.ground_truth.iter().zip(est).enumerate() {
                    w.write_record([
                        "window".to_string(),
                        r.config_id.to_string(),
                        r.iteration.to_string(),
                        wi.to_string(),
                        b.to_string(),
                        g.to_string(),
                        p.to_string(),
                    ])
                    .map_err(|e| Error::csv(path, e))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Component-wise mean of the sorted targets of a split.
pub fn mean_target_baseline(dataset: &Dataset, split: Split) -> Result<Vec<f64>> {
    let members = dataset.members(split);
    if members.is_empty() {
        return Err(Error::Argument(format!("{split} split is empty")));
    }
    let k = dataset.branch_count();
    let mut sum = vec![0.0; k];
    for &(c, _) in &members {
        for (s, d) in sum
            .iter_mut()
            .zip(sorted(dataset.runs[c].distances_m.clone()))
        {
            *s += d;
        }
    }
    Ok(sum.into_iter().map(|s| s / members.len() as f64).collect())
}

/// Trains on the train split with early stopping on the validation split.
pub fn train_on_dataset(
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainingLog)> {
    if cfg.model.outputs != dataset.branch_count() {
        return Err(Error::Config(format!(
            "model has {} outputs but the dataset has {} sources",
            cfg.model.outputs,
            dataset.branch_count()
        )));
    }
    let train_windows = dataset.windows(Split::Train, &cfg.window)?;
    let val_windows = dataset.windows(Split::Validation, &cfg.window)?;
    train(&train_windows, &val_windows, cfg)
}
