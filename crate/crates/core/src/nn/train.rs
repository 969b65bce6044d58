//! Minibatch training with early stopping, and trace-level inference.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::model::{batch_loss, loss_and_gradients, predict, ModelConfig, ModelParams};
use super::window::{window_inputs, WindowBatch, WindowConfig};
use crate::error::{Error, Result};
use crate::sim::derive_seed;
use crate::trace::CountTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub adam: AdamHyper,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Rescale each batch gradient to at most this global L2 norm.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn reference(outputs: usize) -> Self {
        TrainConfig {
            model: ModelConfig::reference(outputs),
            window: WindowConfig::default(),
            adam: AdamHyper::default(),
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            clip_norm: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.window.validate()?;
        if self.window.window_len != self.model.window_len {
            return Err(Error::Config(format!(
                "window length {} differs from the model's {}",
                self.window.window_len, self.model.window_len
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch size and epoch count must be positive".into(),
            ));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config(
                "gradient clipping norm must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch, measured before each update.
    pub train_mse: f64,
    pub validation_mse: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub fn train(
    train: &WindowBatch,
    validation: &WindowBatch,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainingLog)> {
    train_with_progress(train, validation, cfg, |_| {})
}

/// Trains on raw (unscaled) windows. The input scale is the largest
/// training input; the returned model is the best-validation checkpoint.
pub fn train_with_progress(
    train: &WindowBatch,
    validation: &WindowBatch,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<(ModelParams, TrainingLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::Argument("validation split is empty".into()));
    }
    for batch in [train, validation] {
        if batch.inputs.cols() != cfg.model.window_len || batch.targets.cols() != cfg.model.outputs
        {
            return Err(Error::Shape(format!(
                "windows {:?} / targets {:?} do not fit model {:?}",
                batch.inputs.shape(),
                batch.targets.shape(),
                cfg.model
            )));
        }
    }

    let peak = train.max_input();
    let input_scale = if peak > 0.0 { peak } else { 1.0 };
    let train = train.clone().scaled(1.0 / input_scale);
    let validation = validation.clone().scaled(1.0 / input_scale);

    let mut model = ModelParams::new(cfg.model, cfg.seed)?;
    model.input_scale = input_scale;
    model.window = cfg.window;
    let k = cfg.model.outputs;
    for (o, b) in model.network.head.b.data_mut().iter_mut().enumerate() {
        *b = (0..train.len())
            .map(|r| train.targets.row(r)[o])
            .sum::<f64>()
            / train.len() as f64;
    }
    debug_assert_eq!(model.network.head.b.len(), k);

    let mut state = AdamState::new(&model.network, cfg.adam);
    let mut log = TrainingLog::default();
    let mut best_network = model.network.clone();
    let mut best_val = batch_loss(&model.network, &validation.inputs, &validation.targets)?;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let batch = train.select(rows);
            let (loss, mut grads) =
                loss_and_gradients(&model.network, &batch.inputs, &batch.targets)?;
            if let Some(max_norm) = cfg.clip_norm {
                let norm = grads
                    .tensors()
                    .iter()
                    .flat_map(|t| t.data())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            adam_step(&mut state, &mut model.network, &grads)?;
            total += loss * rows.len() as f64;
        }
        let val = batch_loss(&model.network, &validation.inputs, &validation.targets)?;
        let entry = EpochLog {
            epoch,
            train_mse: total / train.len() as f64,
            validation_mse: val,
        };
        progress(&entry);
        log.epochs.push(entry);
        if !val.is_finite() {
            return Err(Error::Config(format!("training diverged at epoch {epoch}")));
        }
        if val < best_val {
            best_val = val;
            best_network = model.network.clone();
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    model.network = best_network;
    model.metadata.epochs_run = log.epochs.len();
    model.metadata.best_epoch = log.best_epoch;
    model.metadata.best_validation_mse = best_val;
    model.metadata.train_windows = train.len();
    Ok((model, log))
}

/// Per-window and aggregated estimates for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePrediction {
    /// One ascending-sorted estimate vector per window.
    pub per_window: Vec<Vec<f64>>,
    /// Component-wise mean of the per-window estimates.
    pub aggregate: Vec<f64>,
}

impl TracePrediction {
    pub fn from_windows(mut per_window: Vec<Vec<f64>>) -> Result<Self> {
        let first = per_window
            .first()
            .ok_or_else(|| Error::Argument("no window estimates".into()))?;
        let k = first.len();
        for est in &mut per_window {
            if est.len() != k {
                return Err(Error::Shape("window estimates disagree in length".into()));
            }
            est.sort_by(f64::total_cmp);
        }
        let n = per_window.len() as f64;
        let aggregate = (0..k)
            .map(|c| per_window.iter().map(|e| e[c]).sum::<f64>() / n)
            .collect();
        Ok(TracePrediction {
            per_window,
            aggregate,
        })
    }
}

pub fn predict_trace(model: &ModelParams, trace: &CountTrace) -> Result<TracePrediction> {
    let windows = window_inputs(trace, &model.window, model.input_scale)?;
    let per_window = windows
        .iter()
        .map(|w| predict(&model.network, w))
        .collect::<Result<Vec<_>>>()?;
    TracePrediction::from_windows(per_window)
}
