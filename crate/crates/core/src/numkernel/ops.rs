//! Dense vector/matrix primitives and the small layers built from them.
//!
//! Matrices are row-major `rows × cols` slices. Every layer has a forward
//! and a hand-derived backward; backward functions accumulate into the
//! parameter gradients and return the gradient with respect to the input.

use crate::error::{Error, Result};

use super::param::{ParamId, ParameterStore};

/// Lower clamp applied to a probability before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Owned row-major matrix, used at API boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "matrix data has {} entries, expected {rows}×{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Matrix { rows: n, cols: n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::config("ragged matrix rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }
}

/// Which per-example loss an [`Objective`] was computed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossFunction {
    CrossEntropy,
}

/// A scalar training objective value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub function: LossFunction,
}

impl Objective {
    pub fn cross_entropy(loss: f64) -> Self {
        Objective {
            loss,
            function: LossFunction::CrossEntropy,
        }
    }
}

/// `y = W x` for row-major `W`.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    w.chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `dx += Wᵀ dy`.
pub fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, dy: &[f64], dx: &mut [f64]) {
    debug_assert_eq!(dy.len(), rows);
    debug_assert_eq!(dx.len(), cols);
    for (row, &g) in w.chunks_exact(cols).zip(dy) {
        if g == 0.0 {
            continue;
        }
        for (d, &wv) in dx.iter_mut().zip(row) {
            *d += g * wv;
        }
    }
}

/// `dW += dy xᵀ`.
pub fn outer_acc(dw: &mut [f64], cols: usize, dy: &[f64], x: &[f64]) {
    debug_assert_eq!(x.len(), cols);
    for (row, &g) in dw.chunks_exact_mut(cols).zip(dy) {
        if g == 0.0 {
            continue;
        }
        for (d, &xv) in row.iter_mut().zip(x) {
            *d += g * xv;
        }
    }
}

pub fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `weight · input + bias`, with shape validation.
pub fn linear_forward(input: &[f64], weight: &Matrix, bias: &[f64]) -> Result<Vec<f64>> {
    if weight.cols != input.len() || weight.rows != bias.len() {
        return Err(Error::config(format!(
            "linear shape mismatch: weight {}×{}, input {}, bias {}",
            weight.rows,
            weight.cols,
            input.len(),
            bias.len()
        )));
    }
    let mut out = matvec(&weight.data, weight.rows, weight.cols, input);
    add_assign(&mut out, bias);
    Ok(out)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::config("softmax of an empty vector"));
    }
    Ok(softmax_unchecked(scores))
}

pub(crate) fn softmax_unchecked(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Gradient of a loss w.r.t. softmax inputs given the gradient w.r.t. its
/// outputs: `dz = p ⊙ (dp − ⟨dp, p⟩)`.
pub fn softmax_backward(probs: &[f64], d_probs: &[f64]) -> Vec<f64> {
    let inner = dot(probs, d_probs);
    probs
        .iter()
        .zip(d_probs)
        .map(|(p, d)| p * (d - inner))
        .collect()
}

/// `-ln(max(p[target], PROB_FLOOR))`.
pub fn cross_entropy(predicted: &[f64], target_index: usize) -> Result<f64> {
    let p = predicted.get(target_index).ok_or_else(|| {
        Error::data(
            "cross_entropy",
            format!(
                "target index {target_index} outside distribution of size {}",
                predicted.len()
            ),
        )
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Derivative of [`cross_entropy`] w.r.t. `predicted[target]`; zero where
/// the floor is active.
pub fn cross_entropy_grad(p_target: f64) -> f64 {
    if p_target > PROB_FLOOR {
        -1.0 / p_target
    } else {
        0.0
    }
}

/// Fused softmax + cross-entropy gradient w.r.t. the logits.
pub fn softmax_cross_entropy_backward(probs: &[f64], target: usize) -> Vec<f64> {
    if probs[target] <= PROB_FLOOR {
        return vec![0.0; probs.len()];
    }
    let mut d = probs.to_vec();
    d[target] -= 1.0;
    d
}

/// Dense affine layer `y = W x + b` with `W: out × in`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParameterStore, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Linear {
            weight: store.add(&format!("{name}.weight"), &[output, input])?,
            bias: store.add(&format!("{name}.bias"), &[output])?,
            input,
            output,
        })
    }

    pub fn forward(&self, store: &ParameterStore, x: &[f64]) -> Vec<f64> {
        let mut y = matvec(store.value(self.weight), self.output, self.input, x);
        add_assign(&mut y, store.value(self.bias));
        y
    }

    /// Accumulates parameter gradients for the forward call that saw `x`
    /// and returns `dL/dx`.
    pub fn backward(&self, store: &mut ParameterStore, x: &[f64], dy: &[f64]) -> Vec<f64> {
        add_assign(&mut store.get_mut(self.bias).grad, dy);
        let w = store.get_mut(self.weight);
        outer_acc(&mut w.grad, self.input, dy, x);
        let mut dx = vec![0.0; self.input];
        matvec_t_acc(&w.values, self.output, self.input, dy, &mut dx);
        dx
    }
}

/// Lookup table `vocab × dim`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParameterStore, name: &str, vocab: usize, dim: usize) -> Result<Self> {
        Ok(Embedding {
            table: store.add(&format!("{name}.table"), &[vocab, dim])?,
            vocab,
            dim,
        })
    }

    pub fn forward(&self, store: &ParameterStore, index: usize) -> Vec<f64> {
        store.value(self.table)[index * self.dim..(index + 1) * self.dim].to_vec()
    }

    pub fn backward(&self, store: &mut ParameterStore, index: usize, d: &[f64]) {
        let g = &mut store.get_mut(self.table).grad[index * self.dim..(index + 1) * self.dim];
        add_assign(g, d);
    }
}
