//! One direction of an LSTM layer with full backpropagation through time.
//!
//! Gate rows are stacked `[input, forget, candidate, output]`, each `H` rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{axpy, dot, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmDirection {
    /// `[4H, I]`
    pub w_x: Tensor,
    /// `[4H, H]`
    pub w_h: Tensor,
    /// `[4H]`
    pub b: Tensor,
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmDirection {
    pub fn zeros(input_size: usize, hidden: usize) -> Self {
        LstmDirection {
            w_x: Tensor::zeros(&[4 * hidden, input_size]),
            w_h: Tensor::zeros(&[4 * hidden, hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    /// Uniform in `±1/sqrt(H)`, forget-gate bias shifted by `forget_bias`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        input_size: usize,
        hidden: usize,
        forget_bias: f64,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut draw = || rng.gen_range(-bound..bound);
        let w_x = Tensor::from_fn(&[4 * hidden, input_size], &mut draw);
        let w_h = Tensor::from_fn(&[4 * hidden, hidden], &mut draw);
        let mut b = Tensor::from_fn(&[4 * hidden], &mut draw);
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v += forget_bias;
        }
        LstmDirection { w_x, w_h, b }
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }

    pub fn input_size(&self) -> usize {
        self.w_x.cols()
    }

    fn check(&self, input: usize) -> Result<()> {
        let h = self.hidden();
        if self.w_x.shape() != [4 * h, input]
            || self.w_h.shape() != [4 * h, h]
            || self.b.shape() != [4 * h]
        {
            return Err(Error::Shape(format!(
                "LSTM weights {:?}/{:?}/{:?} do not match input {input}, hidden {h}",
                self.w_x.shape(),
                self.w_h.shape(),
                self.b.shape()
            )));
        }
        Ok(())
    }

    /// Activated gates for one step, written into `gates` (`4H`).
    #[inline]
    fn gates_into(&self, x: &[f64], h_prev: &[f64], gates: &mut [f64]) {
        let h = self.hidden();
        for (r, g) in gates.iter_mut().enumerate() {
            let z = self.b.data()[r] + dot(self.w_x.row(r), x) + dot(self.w_h.row(r), h_prev);
            *g = if (2 * h..3 * h).contains(&r) {
                z.tanh()
            } else {
                logistic(z)
            };
        }
    }
}

/// A single LSTM step: returns `(h_t, c_t)`.
pub fn lstm_cell_step(
    params: &LstmDirection,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check(x.len())?;
    let h = params.hidden();
    if h_prev.len() != h || c_prev.len() != h {
        return Err(Error::Shape(format!(
            "state sizes {}/{} for hidden size {h}",
            h_prev.len(),
            c_prev.len()
        )));
    }
    let mut gates = vec![0.0; 4 * h];
    params.gates_into(x, h_prev, &mut gates);
    let mut h_t = vec![0.0; h];
    let mut c_t = vec![0.0; h];
    for u in 0..h {
        let (i, f, g, o) = (gates[u], gates[h + u], gates[2 * h + u], gates[3 * h + u]);
        c_t[u] = f * c_prev[u] + i * g;
        h_t[u] = o * c_t[u].tanh();
    }
    Ok((h_t, c_t))
}

/// Everything a backward pass over one sequence needs.
#[derive(Debug, Clone)]
pub(crate) struct SequenceCache {
    steps: usize,
    /// `(T + 1) * H`, row 0 is the zero initial state.
    h: Vec<f64>,
    c: Vec<f64>,
    /// `T * 4H` activated gates.
    gates: Vec<f64>,
    /// `T * H`
    tanh_c: Vec<f64>,
}

impl SequenceCache {
    /// Hidden state after processing step `t`.
    pub(crate) fn output(&self, t: usize) -> &[f64] {
        let h = self.tanh_c.len() / self.steps.max(1);
        &self.h[(t + 1) * h..(t + 2) * h]
    }
}

/// Runs the recurrence over `xs` (`T * I`, processing order) from zero state.
pub(crate) fn forward_sequence(p: &LstmDirection, xs: &[f64], steps: usize) -> SequenceCache {
    let h = p.hidden();
    let i_size = p.input_size();
    debug_assert_eq!(xs.len(), steps * i_size);
    let mut cache = SequenceCache {
        steps,
        h: vec![0.0; (steps + 1) * h],
        c: vec![0.0; (steps + 1) * h],
        gates: vec![0.0; steps * 4 * h],
        tanh_c: vec![0.0; steps * h],
    };
    for t in 0..steps {
        let x = &xs[t * i_size..(t + 1) * i_size];
        let (h_done, h_rest) = cache.h.split_at_mut((t + 1) * h);
        let h_prev = &h_done[t * h..];
        let gates = &mut cache.gates[t * 4 * h..(t + 1) * 4 * h];
        p.gates_into(x, h_prev, gates);
        let (c_done, c_rest) = cache.c.split_at_mut((t + 1) * h);
        let c_prev = &c_done[t * h..];
        for u in 0..h {
            let (i, f, g, o) = (gates[u], gates[h + u], gates[2 * h + u], gates[3 * h + u]);
            let c = f * c_prev[u] + i * g;
            let tc = c.tanh();
            c_rest[u] = c;
            cache.tanh_c[t * h + u] = tc;
            h_rest[u] = o * tc;
        }
    }
    cache
}

/// Backpropagation through time. `dh_out` (`T * H`) is the loss gradient
/// with respect to each emitted hidden state; weight gradients are added
/// into `grads` and the gradient with respect to the inputs is returned.
pub(crate) fn backward_sequence(
    p: &LstmDirection,
    xs: &[f64],
    cache: &SequenceCache,
    dh_out: &[f64],
    grads: &mut LstmDirection,
) -> Vec<f64> {
    let h = p.hidden();
    let i_size = p.input_size();
    let steps = cache.steps;
    let mut dx = vec![0.0; steps * i_size];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..steps).rev() {
        let gates = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        let c_prev = &cache.c[t * h..(t + 1) * h];
        let tanh_c = &cache.tanh_c[t * h..(t + 1) * h];
        for u in 0..h {
            let (i, f, g, o) = (gates[u], gates[h + u], gates[2 * h + u], gates[3 * h + u]);
            let dh = dh_out[t * h + u] + dh_next[u];
            let d_o = dh * tanh_c[u];
            let dc = dh * o * (1.0 - tanh_c[u] * tanh_c[u]) + dc_next[u];
            dz[u] = dc * g * i * (1.0 - i);
            dz[h + u] = dc * c_prev[u] * f * (1.0 - f);
            dz[2 * h + u] = dc * i * (1.0 - g * g);
            dz[3 * h + u] = d_o * o * (1.0 - o);
            dc_next[u] = dc * f;
        }
        let x = &xs[t * i_size..(t + 1) * i_size];
        let h_prev = &cache.h[t * h..(t + 1) * h];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let dx_t = &mut dx[t * i_size..(t + 1) * i_size];
        for (r, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            axpy(d, x, grads.w_x.row_mut(r));
            axpy(d, h_prev, grads.w_h.row_mut(r));
            grads.b.data_mut()[r] += d;
            axpy(d, p.w_x.row(r), dx_t);
            axpy(d, p.w_h.row(r), &mut dh_next);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_everything_gives_zero_state() {
        let p = LstmDirection::zeros(3, 4);
        let (h, c) = lstm_cell_step(&p, &[0.0; 3], &[0.0; 4], &[0.0; 4]).unwrap();
        assert!(h.iter().chain(&c).all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = LstmDirection::zeros(2, 3);
        let h = 3;
        // forget gate fully open, input gate closed
        for r in 0..h {
            p.b.data_mut()[r] = -50.0;
            p.b.data_mut()[h + r] = 50.0;
        }
        let c_prev = [0.3, -0.7, 1.2];
        let (_, c) = lstm_cell_step(&p, &[0.0, 0.0], &[0.1, 0.2, 0.3], &c_prev).unwrap();
        for (a, b) in c.iter().zip(c_prev) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = LstmDirection::random(&mut rng, 2, 3, 0.5);
        let x = [0.4, -1.1];
        let h_prev = [0.2, -0.3, 0.05];
        let c_prev = [0.7, 0.1, -0.4];
        let (h, c) = lstm_cell_step(&p, &x, &h_prev, &c_prev).unwrap();

        // unit 1 written out term by term
        let hs = 3;
        let u = 1;
        let pre = |gate: usize| {
            let r = gate * hs + u;
            let wx = p.w_x.row(r);
            let wh = p.w_h.row(r);
            p.b.data()[r]
                + wx[0] * x[0]
                + wx[1] * x[1]
                + wh[0] * h_prev[0]
                + wh[1] * h_prev[1]
                + wh[2] * h_prev[2]
        };
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = sig(pre(0));
        let f = sig(pre(1));
        let g = pre(2).tanh();
        let o = sig(pre(3));
        let c1 = f * c_prev[u] + i * g;
        let h1 = o * c1.tanh();
        assert!((c[u] - c1).abs() < 1e-12);
        assert!((h[u] - h1).abs() < 1e-12);
    }

    #[test]
    fn shape_errors_before_arithmetic() {
        let p = LstmDirection::zeros(2, 3);
        assert!(matches!(
            lstm_cell_step(&p, &[0.0; 3], &[0.0; 3], &[0.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            lstm_cell_step(&p, &[0.0; 2], &[0.0; 2], &[0.0; 3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn sequence_matches_repeated_cell_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmDirection::random(&mut rng, 2, 4, 1.0);
        let xs: Vec<f64> = (0..10).map(|k| (k as f64 * 0.37).sin()).collect();
        let cache = forward_sequence(&p, &xs, 5);
        let (mut h, mut c) = (vec![0.0; 4], vec![0.0; 4]);
        for t in 0..5 {
            let (h2, c2) = lstm_cell_step(&p, &xs[2 * t..2 * t + 2], &h, &c).unwrap();
            h = h2;
            c = c2;
            assert_eq!(cache.output(t), h.as_slice());
        }
    }
}
