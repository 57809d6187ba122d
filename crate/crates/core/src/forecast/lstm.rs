//! LSTM cell, dense head, and backpropagation through time.
//!
//! Cell update for input `x`, previous output `y` and previous cell state `h`:
//!
//! ```text
//! f  = sigmoid(Wf x + Rf y + bf)        forget gate
//! c~ = tanh   (Wh x + Rh y + bh)        candidate state
//! u  = sigmoid(Wu x + Ru y + bu)        input gate
//! h' = u * c~ + f * h                   cell state
//! o  = sigmoid(Wo x + Ro y + bo)        output gate
//! y' = o * tanh(h')
//! ```
//!
//! The final output feeds an optional ReLU layer and then a sigmoid layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self * x`
    fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
    }

    /// `out += self^T * g`
    fn mul_t_add(&self, g: &[f64], out: &mut [f64]) {
        for (r, &gr) in g.iter().enumerate() {
            if gr != 0.0 {
                for (o, &w) in out.iter_mut().zip(self.row(r)) {
                    *o += w * gr;
                }
            }
        }
    }

    /// `self += a * b^T`
    fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        let cols = self.cols;
        for (r, &ar) in a.iter().enumerate() {
            if ar != 0.0 {
                for (w, &bc) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(b) {
                    *w += ar * bc;
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Input weights, recurrent weights and bias of one gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub w: Matrix,
    pub r: Matrix,
    pub b: Vec<f64>,
}

impl Gate {
    fn zeros(hidden: usize, input: usize) -> Self {
        Gate {
            w: Matrix::zeros(hidden, input),
            r: Matrix::zeros(hidden, hidden),
            b: vec![0.0; hidden],
        }
    }

    fn preactivation(&self, x: &[f64], y_prev: &[f64]) -> Vec<f64> {
        let mut z = self.b.clone();
        self.w.mul_add(x, &mut z);
        self.r.mul_add(y_prev, &mut z);
        z
    }

    fn accumulate(&mut self, dz: &[f64], x: &[f64], y_prev: &[f64]) {
        self.w.add_outer(dz, x);
        self.r.add_outer(dz, y_prev);
        for (b, d) in self.b.iter_mut().zip(dz) {
            *b += d;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(out: usize, input: usize) -> Self {
        Dense {
            w: Matrix::zeros(out, input),
            b: vec![0.0; out],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.b.clone();
        self.w.mul_add(x, &mut z);
        z
    }
}

/// Layer sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Width of the ReLU layer between the cell and the sigmoid head.
    pub dense_dim: Option<usize>,
    pub output_dim: usize,
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub forget: Gate,
    pub candidate: Gate,
    pub input: Gate,
    pub output: Gate,
    pub dense: Option<Dense>,
    pub head: Dense,
}

impl LstmParams {
    pub fn zeros(arch: Architecture) -> Self {
        let Architecture {
            input_dim,
            hidden_dim,
            dense_dim,
            output_dim,
        } = arch;
        LstmParams {
            forget: Gate::zeros(hidden_dim, input_dim),
            candidate: Gate::zeros(hidden_dim, input_dim),
            input: Gate::zeros(hidden_dim, input_dim),
            output: Gate::zeros(hidden_dim, input_dim),
            dense: dense_dim.map(|d| Dense::zeros(d, hidden_dim)),
            head: Dense::zeros(output_dim, dense_dim.unwrap_or(hidden_dim)),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut p = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |m: &mut Matrix| {
            let bound = 1.0 / (m.cols() as f64).sqrt();
            for v in m.as_mut_slice() {
                *v = rng.random_range(-bound..bound);
            }
        };
        for g in p.gates_mut() {
            fill(&mut g.w);
            fill(&mut g.r);
        }
        if let Some(d) = p.dense.as_mut() {
            fill(&mut d.w);
        }
        fill(&mut p.head.w);
        p
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.forget.w.cols(),
            hidden_dim: self.forget.w.rows(),
            dense_dim: self.dense.as_ref().map(|d| d.w.rows()),
            output_dim: self.head.w.rows(),
        }
    }

    fn gates_mut(&mut self) -> [&mut Gate; 4] {
        [&mut self.forget, &mut self.candidate, &mut self.input, &mut self.output]
    }

    /// Every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in [&self.forget, &self.candidate, &self.input, &self.output] {
            out.extend([g.w.as_slice(), g.r.as_slice(), g.b.as_slice()]);
        }
        if let Some(d) = &self.dense {
            out.extend([d.w.as_slice(), d.b.as_slice()]);
        }
        out.extend([self.head.w.as_slice(), self.head.b.as_slice()]);
        out
    }

    /// Same order as [`LstmParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let LstmParams {
            forget,
            candidate,
            input,
            output,
            dense,
            head,
        } = self;
        for g in [forget, candidate, input, output] {
            out.push(g.w.as_mut_slice());
            out.push(g.r.as_mut_slice());
            out.push(&mut g.b);
        }
        if let Some(d) = dense {
            out.push(d.w.as_mut_slice());
            out.push(&mut d.b);
        }
        out.push(head.w.as_mut_slice());
        out.push(&mut head.b);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Reads parameter `idx` in flat [`LstmParams::tensors`] order.
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for t in self.tensors() {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_flat(&mut self, mut idx: usize, value: f64) {
        for t in self.tensors_mut() {
            if idx < t.len() {
                t[idx] = value;
                return;
            }
            idx -= t.len();
        }
        panic!("parameter index out of range")
    }
}

/// Activations of one cell step, kept for the backward pass.
struct StepCache {
    f: Vec<f64>,
    cand: Vec<f64>,
    u: Vec<f64>,
    o: Vec<f64>,
    y_prev: Vec<f64>,
    h_prev: Vec<f64>,
    tanh_h: Vec<f64>,
}

struct GateActivations {
    f: Vec<f64>,
    cand: Vec<f64>,
    u: Vec<f64>,
    o: Vec<f64>,
    h: Vec<f64>,
    tanh_h: Vec<f64>,
    y: Vec<f64>,
}

fn cell(p: &LstmParams, x: &[f64], y_prev: &[f64], h_prev: &[f64]) -> GateActivations {
    let f: Vec<f64> = p.forget.preactivation(x, y_prev).into_iter().map(sigmoid).collect();
    let cand: Vec<f64> = p.candidate.preactivation(x, y_prev).into_iter().map(f64::tanh).collect();
    let u: Vec<f64> = p.input.preactivation(x, y_prev).into_iter().map(sigmoid).collect();
    let o: Vec<f64> = p.output.preactivation(x, y_prev).into_iter().map(sigmoid).collect();
    let h: Vec<f64> = (0..f.len()).map(|k| u[k] * cand[k] + f[k] * h_prev[k]).collect();
    let tanh_h: Vec<f64> = h.iter().map(|v| v.tanh()).collect();
    let y = o.iter().zip(&tanh_h).map(|(a, b)| a * b).collect();
    GateActivations {
        f,
        cand,
        u,
        o,
        h,
        tanh_h,
        y,
    }
}

fn check_step_dims(p: &LstmParams, x: &[f64], y_prev: &[f64], h_prev: &[f64]) -> Result<()> {
    let a = p.architecture();
    if x.len() != a.input_dim || y_prev.len() != a.hidden_dim || h_prev.len() != a.hidden_dim {
        return Err(Error::shape(format!(
            "cell expects input {} and state {}, got {}, {}, {}",
            a.input_dim,
            a.hidden_dim,
            x.len(),
            y_prev.len(),
            h_prev.len()
        )));
    }
    Ok(())
}

/// One cell step. Returns `(output, cell state)`.
pub fn lstm_cell_step(
    params: &LstmParams,
    x: &[f64],
    y_prev: &[f64],
    h_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_step_dims(params, x, y_prev, h_prev)?;
    let a = cell(params, x, y_prev, h_prev);
    Ok((a.y, a.h))
}

struct HeadCache {
    y_last: Vec<f64>,
    dense_pre: Option<Vec<f64>>,
    head_in: Vec<f64>,
    out: Vec<f64>,
}

fn run_sequence(p: &LstmParams, seq: &[Vec<f64>], mut caches: Option<&mut Vec<StepCache>>) -> HeadCache {
    let hidden = p.forget.b.len();
    let mut y = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    for x in seq {
        let a = cell(p, x, &y, &h);
        if let Some(c) = caches.as_deref_mut() {
            c.push(StepCache {
                f: a.f,
                cand: a.cand,
                u: a.u,
                o: a.o,
                y_prev: std::mem::take(&mut y),
                h_prev: std::mem::take(&mut h),
                tanh_h: a.tanh_h,
            });
        }
        y = a.y;
        h = a.h;
    }
    let (dense_pre, head_in) = match &p.dense {
        Some(d) => {
            let pre = d.apply(&y);
            let act = pre.iter().map(|v| v.max(0.0)).collect();
            (Some(pre), act)
        }
        None => (None, y.clone()),
    };
    let out = p.head.apply(&head_in).into_iter().map(sigmoid).collect();
    HeadCache {
        y_last: y,
        dense_pre,
        head_in,
        out,
    }
}

fn check_sequence(p: &LstmParams, seq: &[Vec<f64>]) -> Result<()> {
    let input = p.architecture().input_dim;
    if seq.is_empty() {
        return Err(Error::shape("empty input sequence"));
    }
    if let Some(bad) = seq.iter().find(|x| x.len() != input) {
        return Err(Error::shape(format!(
            "sequence step has {} features, model expects {input}",
            bad.len()
        )));
    }
    Ok(())
}

/// Normalised prediction in `(0, 1)^output_dim` from a zero initial state.
pub fn forward_normalized(params: &LstmParams, seq: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_sequence(params, seq)?;
    Ok(run_sequence(params, seq, None).out)
}

/// One training example in normalised units.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

/// Mean squared error over every output of every sample, with its gradient.
pub fn loss_and_grad(params: &LstmParams, batch: &[Sample]) -> Result<(f64, LstmParams)> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let arch = params.architecture();
    for s in batch {
        check_sequence(params, &s.inputs)?;
        if s.target.len() != arch.output_dim {
            return Err(Error::shape(format!(
                "target has {} values, model outputs {}",
                s.target.len(),
                arch.output_dim
            )));
        }
    }
    let mut grad = LstmParams::zeros(arch);
    let scale = 1.0 / (batch.len() * arch.output_dim) as f64;
    let mut sse = 0.0;
    let mut caches = Vec::new();

    for s in batch {
        caches.clear();
        let head = run_sequence(params, &s.inputs, Some(&mut caches));

        // sigmoid head
        let mut dz = vec![0.0; arch.output_dim];
        for k in 0..arch.output_dim {
            let e = head.out[k] - s.target[k];
            sse += e * e;
            dz[k] = 2.0 * e * scale * head.out[k] * (1.0 - head.out[k]);
        }
        grad.head.w.add_outer(&dz, &head.head_in);
        for (b, d) in grad.head.b.iter_mut().zip(&dz) {
            *b += d;
        }
        let mut d_head_in = vec![0.0; head.head_in.len()];
        params.head.w.mul_t_add(&dz, &mut d_head_in);

        let mut dy = vec![0.0; arch.hidden_dim];
        match (&params.dense, grad.dense.as_mut(), &head.dense_pre) {
            (Some(dense), Some(gdense), Some(pre)) => {
                let da: Vec<f64> = d_head_in
                    .iter()
                    .zip(pre)
                    .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
                    .collect();
                gdense.w.add_outer(&da, &head.y_last);
                for (b, d) in gdense.b.iter_mut().zip(&da) {
                    *b += d;
                }
                dense.w.mul_t_add(&da, &mut dy);
            }
            _ => dy.copy_from_slice(&d_head_in),
        }

        let mut dh_carry = vec![0.0; arch.hidden_dim];
        for t in (0..caches.len()).rev() {
            let c = &caches[t];
            let x = &s.inputs[t];
            let y_prev = &c.y_prev;
            let n = arch.hidden_dim;
            let (mut dzf, mut dzc, mut dzu, mut dzo) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for k in 0..n {
                let d_o = dy[k] * c.tanh_h[k];
                dzo[k] = d_o * c.o[k] * (1.0 - c.o[k]);
                let dh = dy[k] * c.o[k] * (1.0 - c.tanh_h[k] * c.tanh_h[k]) + dh_carry[k];
                dzu[k] = dh * c.cand[k] * c.u[k] * (1.0 - c.u[k]);
                dzc[k] = dh * c.u[k] * (1.0 - c.cand[k] * c.cand[k]);
                dzf[k] = dh * c.h_prev[k] * c.f[k] * (1.0 - c.f[k]);
                dh_carry[k] = dh * c.f[k];
            }
            grad.forget.accumulate(&dzf, x, y_prev);
            grad.candidate.accumulate(&dzc, x, y_prev);
            grad.input.accumulate(&dzu, x, y_prev);
            grad.output.accumulate(&dzo, x, y_prev);

            let mut dy_prev = vec![0.0; n];
            params.forget.r.mul_t_add(&dzf, &mut dy_prev);
            params.candidate.r.mul_t_add(&dzc, &mut dy_prev);
            params.input.r.mul_t_add(&dzu, &mut dy_prev);
            params.output.r.mul_t_add(&dzo, &mut dy_prev);
            dy = dy_prev;
        }
    }
    Ok((sse * scale, grad))
}

/// MSE without gradients.
pub fn mse(params: &LstmParams, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::data("no samples"));
    }
    let mut sse = 0.0;
    let mut count = 0usize;
    for s in samples {
        let out = forward_normalized(params, &s.inputs)?;
        if out.len() != s.target.len() {
            return Err(Error::shape("target length differs from model output"));
        }
        sse += out.iter().zip(&s.target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        count += out.len();
    }
    Ok(sse / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(dense: Option<usize>) -> Architecture {
        Architecture {
            input_dim: 3,
            hidden_dim: 4,
            dense_dim: dense,
            output_dim: 2,
        }
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let p = LstmParams::zeros(arch(None));
        let h_prev = vec![0.4, -1.0, 2.0, 0.0];
        let (y, h) = lstm_cell_step(&p, &[1.0, 2.0, 3.0], &[0.1; 4], &h_prev).unwrap();
        for k in 0..4 {
            assert_eq!(h[k], 0.5 * h_prev[k]);
            assert_eq!(y[k], 0.5 * h[k].tanh());
        }
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let mut p = LstmParams::zeros(arch(None));
        p.forget.b = vec![40.0; 4];
        let h_prev = vec![0.7, -0.3, 1.5, 2.0];
        let (_, h) = lstm_cell_step(&p, &[0.0; 3], &[0.0; 4], &h_prev).unwrap();
        for k in 0..4 {
            assert!((h[k] - h_prev[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_errors() {
        let p = LstmParams::zeros(arch(None));
        assert!(lstm_cell_step(&p, &[0.0; 2], &[0.0; 4], &[0.0; 4]).is_err());
        assert!(loss_and_grad(&p, &[]).is_err());
    }

    #[test]
    fn zero_weight_forward_is_sigmoid_of_bias() {
        let mut p = LstmParams::zeros(arch(Some(5)));
        p.head.b = vec![0.3, -2.0];
        let out = forward_normalized(&p, &vec![vec![1.0, 0.5, 0.0]; 4]).unwrap();
        assert_eq!(out, vec![sigmoid(0.3), sigmoid(-2.0)]);
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let p = LstmParams::init(arch(Some(5)), 1);
        let inputs = vec![vec![0.2, 0.4, 0.9]; 4];
        let target = forward_normalized(&p, &inputs).unwrap();
        let (loss, g) = loss_and_grad(&p, &[Sample { inputs, target }]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn flat_indexing_roundtrip() {
        let mut p = LstmParams::init(arch(Some(5)), 2);
        let n = p.num_parameters();
        assert_eq!(n, 4 * (4 * 3 + 4 * 4 + 4) + (5 * 4 + 5) + (2 * 5 + 2));
        p.set_flat(n - 1, 9.5);
        assert_eq!(p.get_flat(n - 1), 9.5);
        assert_eq!(p.head.b[1], 9.5);
    }
}
