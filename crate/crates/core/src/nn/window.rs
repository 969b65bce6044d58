//! Undersampled sliding windows over count traces.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::trace::CountTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Keep every `undersample`-th raw sample.
    pub undersample: usize,
    pub window_len: usize,
    /// Window start spacing, in undersampled samples.
    pub stride: usize,
}

impl Default for WindowConfig {
    /// 8 symbols plus 2 padding symbols of 1 s at 5 ms, undersampled by 10:
    /// 200 samples per window, advanced one symbol at a time.
    fn default() -> Self {
        WindowConfig {
            undersample: 10,
            window_len: 200,
            stride: 20,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.undersample == 0 || self.window_len == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "degenerate window configuration {self:?}"
            )));
        }
        Ok(())
    }

    /// Raw samples spanned by one window.
    pub fn min_raw_len(&self) -> usize {
        self.window_len * self.undersample
    }
}

/// Windows with per-window target distances, sorted ascending per row.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// `[B, window_len]`
    pub inputs: Tensor,
    /// `[B, K]`
    pub targets: Tensor,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> WindowBatch {
        let pick = |t: &Tensor| {
            let cols = t.cols();
            let data: Vec<f64> = rows
                .iter()
                .flat_map(|&r| t.row(r).iter().copied())
                .collect();
            Tensor::new(vec![rows.len(), cols], data).expect("consistent rows")
        };
        WindowBatch {
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
        }
    }

    pub fn concat(batches: &[WindowBatch]) -> Result<WindowBatch> {
        let first = batches
            .first()
            .ok_or_else(|| Error::Argument("no batches to concatenate".into()))?;
        let (w, k) = (first.inputs.cols(), first.targets.cols());
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut rows = 0;
        for b in batches {
            if b.inputs.cols() != w || b.targets.cols() != k {
                return Err(Error::Shape(
                    "batches disagree on window length or output count".into(),
                ));
            }
            inputs.extend_from_slice(b.inputs.data());
            targets.extend_from_slice(b.targets.data());
            rows += b.len();
        }
        Ok(WindowBatch {
            inputs: Tensor::new(vec![rows, w], inputs)?,
            targets: Tensor::new(vec![rows, k], targets)?,
        })
    }

    pub fn max_input(&self) -> f64 {
        self.inputs.data().iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(mut self, factor: f64) -> WindowBatch {
        self.inputs.scale(factor);
        self
    }
}

/// Undersampled window values of a trace, divided by `input_scale`.
pub fn window_inputs(
    trace: &CountTrace,
    cfg: &WindowConfig,
    input_scale: f64,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if !(input_scale > 0.0) {
        return Err(Error::Argument(format!(
            "input scale must be positive, got {input_scale}"
        )));
    }
    if trace.len() < cfg.min_raw_len() {
        return Err(Error::Argument(format!(
            "trace of {} samples is shorter than one window ({} samples)",
            trace.len(),
            cfg.min_raw_len()
        )));
    }
    let reduced: Vec<f64> = trace
        .counts
        .iter()
        .step_by(cfg.undersample)
        .map(|c| c / input_scale)
        .collect();
    let count = (reduced.len() - cfg.window_len) / cfg.stride + 1;
    Ok((0..count)
        .map(|w| reduced[w * cfg.stride..w * cfg.stride + cfg.window_len].to_vec())
        .collect())
}

/// Windows of one trace, each labelled with the ascending-sorted `distances`.
pub fn make_windows(
    trace: &CountTrace,
    cfg: &WindowConfig,
    input_scale: f64,
    distances: &[f64],
) -> Result<WindowBatch> {
    if distances.is_empty() {
        return Err(Error::Argument("no target distances".into()));
    }
    let windows = window_inputs(trace, cfg, input_scale)?;
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = windows.len();
    Ok(WindowBatch {
        inputs: Tensor::new(vec![n, cfg.window_len], windows.concat())?,
        targets: Tensor::new(vec![n, sorted.len()], sorted.repeat(n))?,
    })
}
