//! Sliding-window bidirectional LSTM regressor.
//!
//! A window of scalar samples runs through a stack of bidirectional LSTM
//! layers (per-step outputs of both directions concatenated). The final
//! forward state and the final backward state of the last layer form the
//! sequence summary, which feeds a ReLU dense stack and a linear head with
//! one output per branch.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lstm::{backward_sequence, forward_sequence, LstmDirection, SequenceCache};
use super::tensor::{axpy, dot, Tensor};
use super::window::WindowConfig;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "branchmc-sbrnn";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Windows per gradient chunk. Chunks are reduced in index order so the
/// summed gradient does not depend on the thread count.
const GRAD_CHUNK: usize = 8;
/// Initial bias of the ReLU dense layers.
const RELU_BIAS_INIT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub window_len: usize,
    pub lstm_layers: usize,
    /// Units per direction.
    pub hidden: usize,
    pub dense_layers: usize,
    pub dense_width: usize,
    pub outputs: usize,
}

impl ModelConfig {
    /// Three bidirectional layers of 64 units per direction, five ReLU
    /// layers of width 32, one output per branch.
    pub fn reference(outputs: usize) -> Self {
        ModelConfig {
            window_len: 200,
            lstm_layers: 3,
            hidden: 64,
            dense_layers: 5,
            dense_width: 32,
            outputs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.lstm_layers == 0 || self.hidden == 0 || self.outputs == 0 {
            return Err(Error::Config(format!(
                "degenerate model configuration {self:?}"
            )));
        }
        if self.dense_layers > 0 && self.dense_width == 0 {
            return Err(Error::Config("dense layers need a positive width".into()));
        }
        Ok(())
    }

    pub fn summary_width(&self) -> usize {
        2 * self.hidden
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[out, in]`
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Dense {
            w: Tensor::zeros(&[output, input]),
            b: Tensor::zeros(&[output]),
        }
    }

    fn random<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize, bound: f64) -> Self {
        Dense {
            w: Tensor::from_fn(&[output, input], || rng.gen_range(-bound..bound)),
            b: Tensor::zeros(&[output]),
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.w.rows())
            .map(|r| self.b.data()[r] + dot(self.w.row(r), x))
            .collect()
    }

    /// Adds weight gradients for upstream gradient `dy` at input `x`, returns `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; x.len()];
        for (r, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            axpy(d, x, grads.w.row_mut(r));
            grads.b.data_mut()[r] += d;
            axpy(d, self.w.row(r), &mut dx);
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmLayer {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub lstm: Vec<BiLstmLayer>,
    pub dense: Vec<Dense>,
    pub head: Dense,
}

impl Network {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let mut lstm = Vec::with_capacity(cfg.lstm_layers);
        let mut input = 1;
        for _ in 0..cfg.lstm_layers {
            lstm.push(BiLstmLayer {
                forward: LstmDirection::zeros(input, cfg.hidden),
                backward: LstmDirection::zeros(input, cfg.hidden),
            });
            input = 2 * cfg.hidden;
        }
        let mut dense = Vec::with_capacity(cfg.dense_layers);
        for _ in 0..cfg.dense_layers {
            dense.push(Dense::zeros(input, cfg.dense_width));
            input = cfg.dense_width;
        }
        Network {
            lstm,
            dense,
            head: Dense::zeros(input, cfg.outputs),
        }
    }

    pub fn random(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lstm = Vec::with_capacity(cfg.lstm_layers);
        let mut input = 1;
        for _ in 0..cfg.lstm_layers {
            lstm.push(BiLstmLayer {
                forward: LstmDirection::random(&mut rng, input, cfg.hidden, 1.0),
                backward: LstmDirection::random(&mut rng, input, cfg.hidden, 1.0),
            });
            input = 2 * cfg.hidden;
        }
        let mut dense = Vec::with_capacity(cfg.dense_layers);
        for _ in 0..cfg.dense_layers {
            let bound = (6.0 / input as f64).sqrt();
            let mut layer = Dense::random(&mut rng, input, cfg.dense_width, bound);
            // keeps units off the ReLU kink when a whole layer below is silent
            layer.b.fill(RELU_BIAS_INIT);
            dense.push(layer);
            input = cfg.dense_width;
        }
        let bound = (6.0 / (input + cfg.outputs) as f64).sqrt();
        let head = Dense::random(&mut rng, input, cfg.outputs, bound);
        Network { lstm, dense, head }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.lstm {
            for d in [&layer.forward, &layer.backward] {
                out.extend([&d.w_x, &d.w_h, &d.b]);
            }
        }
        for d in self.dense.iter().chain(std::iter::once(&self.head)) {
            out.extend([&d.w, &d.b]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.lstm {
            for d in [&mut layer.forward, &mut layer.backward] {
                out.extend([&mut d.w_x, &mut d.w_h, &mut d.b]);
            }
        }
        for d in self.dense.iter_mut().chain(std::iter::once(&mut self.head)) {
            out.extend([&mut d.w, &mut d.b]);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Network) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors_mut().into_iter().for_each(|t| t.scale(factor));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Checks tensor shapes against `cfg`.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let reference = Network::zeros(cfg);
        let ours = self.tensors();
        let theirs = reference.tensors();
        if ours.len() != theirs.len()
            || ours
                .iter()
                .zip(&theirs)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Shape(format!(
                "network tensors do not match configuration {cfg:?}"
            )));
        }
        Ok(())
    }
}

/// A trained (or freshly initialized) regressor with its input scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub network: Network,
    /// Raw counts are divided by this before entering the network.
    pub input_scale: f64,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub metadata: ModelMetadata,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_mse: f64,
    pub train_windows: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: ModelParams,
}

impl ModelParams {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(ModelParams {
            config,
            network: Network::random(&config, seed),
            input_scale: 1.0,
            window: WindowConfig {
                window_len: config.window_len,
                ..WindowConfig::default()
            },
            metadata: ModelMetadata {
                seed,
                ..Default::default()
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.network.check(&self.config)?;
        self.window.validate()?;
        if self.window.window_len != self.config.window_len {
            return Err(Error::Config(format!(
                "window length {} differs from the model's {}",
                self.window.window_len, self.config.window_len
            )));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::Config(format!(
                "input scale must be positive, got {}",
                self.input_scale
            )));
        }
        if !self.network.is_finite() {
            return Err(Error::Config("model holds non-finite weights".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported model format {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        file.model.validate()?;
        Ok(file.model)
    }
}

struct LayerCache {
    input: Vec<f64>,
    reversed_input: Vec<f64>,
    forward: SequenceCache,
    backward: SequenceCache,
}

/// Intermediate values of one window's forward pass.
pub struct ForwardCache {
    steps: usize,
    layers: Vec<LayerCache>,
    /// Inputs to each dense layer and to the head; index 0 is the summary.
    activations: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl ForwardCache {
    pub fn summary(&self) -> &[f64] {
        &self.activations[0]
    }
}

fn reverse_rows(xs: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    for row in xs.chunks(width).rev() {
        out.extend_from_slice(row);
    }
    out
}

fn check_window(net: &Network, window: &[f64]) -> Result<()> {
    if window.is_empty() {
        return Err(Error::Shape("empty window".into()));
    }
    match net.lstm.first() {
        Some(l) if l.forward.input_size() == 1 => Ok(()),
        _ => Err(Error::Shape(
            "first LSTM layer must take scalar inputs".into(),
        )),
    }
}

fn lstm_stack(net: &Network, window: &[f64]) -> Result<(Vec<LayerCache>, Vec<f64>)> {
    check_window(net, window)?;
    let steps = window.len();
    let mut input = window.to_vec();
    let mut width = 1;
    let mut layers = Vec::with_capacity(net.lstm.len());
    for layer in &net.lstm {
        if layer.forward.input_size() != width || layer.backward.input_size() != width {
            return Err(Error::Shape(format!(
                "LSTM layer expects input {}, got {width}",
                layer.forward.input_size()
            )));
        }
        let h = layer.forward.hidden();
        if layer.backward.hidden() != h {
            return Err(Error::Shape("directions disagree on hidden size".into()));
        }
        let reversed_input = reverse_rows(&input, width);
        let fwd = forward_sequence(&layer.forward, &input, steps);
        let bwd = forward_sequence(&layer.backward, &reversed_input, steps);
        let mut out = Vec::with_capacity(steps * 2 * h);
        for t in 0..steps {
            out.extend_from_slice(fwd.output(t));
            out.extend_from_slice(bwd.output(steps - 1 - t));
        }
        layers.push(LayerCache {
            input,
            reversed_input,
            forward: fwd,
            backward: bwd,
        });
        input = out;
        width = 2 * h;
    }
    let last = layers.last().expect("at least one layer");
    let mut summary = last.forward.output(steps - 1).to_vec();
    summary.extend_from_slice(last.backward.output(steps - 1));
    Ok((layers, summary))
}

/// Sequence summary of a window: final forward state followed by final
/// backward state of the top layer.
pub fn bilstm_forward(net: &Network, window: &[f64]) -> Result<Vec<f64>> {
    Ok(lstm_stack(net, window)?.1)
}

fn head_activations(net: &Network, summary: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let expected = net.dense.first().unwrap_or(&net.head).w.cols();
    if summary.len() != expected {
        return Err(Error::Shape(format!(
            "summary width {} but dense stack expects {expected}",
            summary.len()
        )));
    }
    let mut activations = vec![summary.to_vec()];
    for layer in &net.dense {
        let z = layer.forward(activations.last().expect("nonempty"));
        activations.push(z.into_iter().map(|v| v.max(0.0)).collect());
    }
    let output = net.head.forward(activations.last().expect("nonempty"));
    Ok((activations, output))
}

/// Dense ReLU stack and linear head.
pub fn head_forward(net: &Network, summary: &[f64]) -> Result<Vec<f64>> {
    Ok(head_activations(net, summary)?.1)
}

pub fn forward(net: &Network, window: &[f64]) -> Result<ForwardCache> {
    let (layers, summary) = lstm_stack(net, window)?;
    let (activations, output) = head_activations(net, &summary)?;
    Ok(ForwardCache {
        steps: window.len(),
        layers,
        activations,
        output,
    })
}

/// Backward pass for one window given `d loss / d output`; gradients are
/// added into `grads`.
pub fn backward_window(net: &Network, cache: &ForwardCache, d_output: &[f64], grads: &mut Network) {
    let mut da = net.head.backward(
        cache.activations.last().expect("nonempty"),
        d_output,
        &mut grads.head,
    );
    for (l, layer) in net.dense.iter().enumerate().rev() {
        let post = &cache.activations[l + 1];
        let dz: Vec<f64> = da
            .iter()
            .zip(post)
            .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
            .collect();
        da = layer.backward(&cache.activations[l], &dz, &mut grads.dense[l]);
    }

    let steps = cache.steps;
    let top = net.lstm.last().expect("at least one layer");
    let h = top.forward.hidden();
    let mut dh_fwd = vec![0.0; steps * h];
    let mut dh_bwd = vec![0.0; steps * h];
    dh_fwd[(steps - 1) * h..].copy_from_slice(&da[..h]);
    dh_bwd[(steps - 1) * h..].copy_from_slice(&da[h..]);

    for (l, layer) in net.lstm.iter().enumerate().rev() {
        let lc = &cache.layers[l];
        let width = layer.forward.input_size();
        let g = &mut grads.lstm[l];
        let dx_f = backward_sequence(
            &layer.forward,
            &lc.input,
            &lc.forward,
            &dh_fwd,
            &mut g.forward,
        );
        let dx_b = backward_sequence(
            &layer.backward,
            &lc.reversed_input,
            &lc.backward,
            &dh_bwd,
            &mut g.backward,
        );
        if l == 0 {
            break;
        }
        // split the per-step input gradient back into the two directions
        // of the layer below
        let below = net.lstm[l - 1].forward.hidden();
        let mut next_f = vec![0.0; steps * below];
        let mut next_b = vec![0.0; steps * below];
        for t in 0..steps {
            let rt = steps - 1 - t;
            let row_f = &dx_f[t * width..(t + 1) * width];
            let row_b = &dx_b[rt * width..(rt + 1) * width];
            for u in 0..below {
                next_f[t * below + u] = row_f[u] + row_b[u];
                next_b[rt * below + u] = row_f[below + u] + row_b[below + u];
            }
        }
        dh_fwd = next_f;
        dh_bwd = next_b;
    }
}

pub fn predict(net: &Network, window: &[f64]) -> Result<Vec<f64>> {
    Ok(forward(net, window)?.output)
}

/// Mean of squared differences over all elements.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty prediction".into()));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

fn check_batch(net: &Network, inputs: &Tensor, targets: &Tensor) -> Result<()> {
    if inputs.shape().len() != 2 || targets.shape().len() != 2 || inputs.rows() != targets.rows() {
        return Err(Error::Shape(format!(
            "inputs {:?} vs targets {:?}",
            inputs.shape(),
            targets.shape()
        )));
    }
    if inputs.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if targets.cols() != net.head.w.rows() {
        return Err(Error::Shape(format!(
            "targets have {} columns, model outputs {}",
            targets.cols(),
            net.head.w.rows()
        )));
    }
    Ok(())
}

/// Predictions for every row of `inputs` (`[B, T]`).
pub fn predict_batch(net: &Network, inputs: &Tensor) -> Result<Tensor> {
    let rows: Vec<usize> = (0..inputs.rows()).collect();
    let preds = rows
        .par_iter()
        .map(|&r| predict(net, inputs.row(r)))
        .collect::<Result<Vec<_>>>()?;
    let k = net.head.w.rows();
    Tensor::new(vec![inputs.rows(), k], preds.concat())
}

pub fn batch_loss(net: &Network, inputs: &Tensor, targets: &Tensor) -> Result<f64> {
    check_batch(net, inputs, targets)?;
    mse_loss(&predict_batch(net, inputs)?, targets)
}

/// MSE over the batch and its gradient with respect to every parameter.
pub fn loss_and_gradients(
    net: &Network,
    inputs: &Tensor,
    targets: &Tensor,
) -> Result<(f64, Network)> {
    check_batch(net, inputs, targets)?;
    let batch = inputs.rows();
    let k = targets.cols();
    let norm = 1.0 / (batch * k) as f64;
    let chunks: Vec<(f64, Network)> = (0..batch)
        .collect::<Vec<_>>()
        .par_chunks(GRAD_CHUNK)
        .map(|rows| -> Result<(f64, Network)> {
            let mut grads = net.zeros_like();
            let mut loss = 0.0;
            for &r in rows {
                let cache = forward(net, inputs.row(r))?;
                let target = targets.row(r);
                let d_out: Vec<f64> = cache
                    .output
                    .iter()
                    .zip(target)
                    .map(|(p, t)| 2.0 * (p - t) * norm)
                    .collect();
                loss += cache
                    .output
                    .iter()
                    .zip(target)
                    .map(|(p, t)| (p - t) * (p - t))
                    .sum::<f64>();
                backward_window(net, &cache, &d_out, &mut grads);
            }
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut iter = chunks.into_iter();
    let (mut loss, mut grads) = iter.next().expect("nonempty batch");
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss * norm, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            window_len: 8,
            lstm_layers: 1,
            hidden: 4,
            dense_layers: 2,
            dense_width: 4,
            outputs: 2,
        }
    }

    #[test]
    fn reference_architecture_sizes() {
        let cfg = ModelConfig::reference(2);
        let net = Network::zeros(&cfg);
        assert_eq!(net.lstm.len(), 3);
        assert_eq!(net.lstm[1].forward.w_x.shape(), &[256, 128]);
        assert_eq!(net.dense.len(), 5);
        assert_eq!(net.dense[0].w.shape(), &[32, 128]);
        assert_eq!(net.head.w.shape(), &[2, 32]);
        assert_eq!(Network::zeros(&ModelConfig::reference(4)).head.w.rows(), 4);
    }

    #[test]
    fn zero_input_and_biases_give_zero_summary() {
        let cfg = tiny();
        let mut net = Network::random(&cfg, 1);
        for layer in &mut net.lstm {
            layer.forward.b.fill(0.0);
            layer.backward.b.fill(0.0);
        }
        let s = bilstm_forward(&net, &[0.0; 8]).unwrap();
        assert_eq!(s.len(), 8);
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reversing_input_and_swapping_directions_swaps_summary_halves() {
        let cfg = ModelConfig {
            lstm_layers: 1,
            ..tiny()
        };
        let net = Network::random(&cfg, 5);
        let mut swapped = net.clone();
        let layer = &mut swapped.lstm[0];
        std::mem::swap(&mut layer.forward, &mut layer.backward);
        let window: Vec<f64> = (0..8).map(|t| (t as f64 * 0.9).cos()).collect();
        let reversed: Vec<f64> = window.iter().rev().copied().collect();
        let a = bilstm_forward(&net, &window).unwrap();
        let b = bilstm_forward(&swapped, &reversed).unwrap();
        assert_eq!(&a[..4], &b[4..]);
        assert_eq!(&a[4..], &b[..4]);
    }

    #[test]
    fn single_step_window_uses_the_same_step_both_ways() {
        let cfg = ModelConfig {
            lstm_layers: 1,
            ..tiny()
        };
        let mut net = Network::random(&cfg, 2);
        net.lstm[0].backward = net.lstm[0].forward.clone();
        let s = bilstm_forward(&net, &[0.7]).unwrap();
        assert_eq!(&s[..4], &s[4..]);
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let cfg = tiny();
        let mut net = Network::random(&cfg, 3);
        for d in net.dense.iter_mut().chain(std::iter::once(&mut net.head)) {
            d.w.fill(0.0);
            d.b.fill(0.0);
        }
        let out = predict(&net, &[0.3; 8]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn head_on_a_hand_computable_path() {
        // summary width 2, one dense layer of width 2, one output
        let cfg = ModelConfig {
            window_len: 1,
            lstm_layers: 1,
            hidden: 1,
            dense_layers: 1,
            dense_width: 2,
            outputs: 1,
        };
        let mut net = Network::zeros(&cfg);
        net.dense[0].w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        net.dense[0].b = Tensor::new(vec![2], vec![0.5, 0.0]).unwrap();
        net.head.w = Tensor::new(vec![1, 2], vec![2.0, 3.0]).unwrap();
        net.head.b = Tensor::new(vec![1], vec![0.1]).unwrap();
        // relu(0.2 + 0.5) = 0.7, relu(-0.4) = 0 -> 2 * 0.7 + 0.1
        let out = head_forward(&net, &[0.2, 0.4]).unwrap();
        assert!((out[0] - 1.5).abs() < 1e-15);
        assert!(matches!(head_forward(&net, &[0.2]), Err(Error::Shape(_))));
    }

    #[test]
    fn mse_examples() {
        let t = Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(mse_loss(&t, &t).unwrap(), 0.0);
        let shifted = Tensor::new(vec![2, 2], t.data().iter().map(|v| v + 0.5).collect()).unwrap();
        assert!((mse_loss(&shifted, &t).unwrap() - 0.25).abs() < 1e-15);
        let p = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let z = Tensor::zeros(&[2, 2]);
        assert_eq!(mse_loss(&p, &z).unwrap(), 0.5);
        assert!(matches!(
            mse_loss(&p, &Tensor::zeros(&[4])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let cfg = tiny();
        let net = Network::random(&cfg, 9);
        let inputs = Tensor::new(vec![2, 8], (0..16).map(|k| (k as f64).sin()).collect()).unwrap();
        let targets = predict_batch(&net, &inputs).unwrap();
        let (loss, grads) = loss_and_gradients(&net, &inputs, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads
            .tensors()
            .iter()
            .all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn batch_shape_errors() {
        let net = Network::random(&tiny(), 0);
        let inputs = Tensor::zeros(&[2, 8]);
        assert!(matches!(
            loss_and_gradients(&net, &inputs, &Tensor::zeros(&[3, 2])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            loss_and_gradients(&net, &inputs, &Tensor::zeros(&[2, 3])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut model = ModelParams::new(tiny(), 4).unwrap();
        model.input_scale = 123.0;
        model.save(&path).unwrap();
        assert_eq!(ModelParams::load(&path).unwrap(), model);
        std::fs::write(&path, "{\"format\":\"other\",\"version\":1,\"model\":null}").unwrap();
        assert!(ModelParams::load(&path).is_err());
    }
}
