//! Single LSTM cell, gate order (input, forget, candidate, output).

use crate::error::{Error, Result};

use super::ops::{add_assign, matvec, matvec_t_acc, outer_acc, sigmoid};
use super::param::{ParamId, ParameterStore};

/// Borrowed view of one cell's weights: `w_ih: 4H×I`, `w_hh: 4H×H`, `bias: 4H`.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    pub w_ih: &'a [f64],
    pub w_hh: &'a [f64],
    pub bias: &'a [f64],
    pub input: usize,
    pub hidden: usize,
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub input: Vec<f64>,
    pub prev_hidden: Vec<f64>,
    pub prev_cell: Vec<f64>,
    /// Post-activation gates, `[i | f | g | o]`.
    pub gates: Vec<f64>,
    pub cell: Vec<f64>,
    pub tanh_cell: Vec<f64>,
    pub hidden: Vec<f64>,
}

fn gate_forward(w: &LstmWeights<'_>, x: &[f64], h: &[f64], c: &[f64]) -> LstmCache {
    let hs = w.hidden;
    let mut z = matvec(w.w_ih, 4 * hs, w.input, x);
    add_assign(&mut z, &matvec(w.w_hh, 4 * hs, hs, h));
    add_assign(&mut z, w.bias);
    for (k, v) in z.iter_mut().enumerate() {
        *v = if (2 * hs..3 * hs).contains(&k) {
            v.tanh()
        } else {
            sigmoid(*v)
        };
    }
    let mut cell = vec![0.0; hs];
    let mut tanh_cell = vec![0.0; hs];
    let mut hidden = vec![0.0; hs];
    for j in 0..hs {
        let (i, f, g, o) = (z[j], z[hs + j], z[2 * hs + j], z[3 * hs + j]);
        cell[j] = f * c[j] + i * g;
        tanh_cell[j] = cell[j].tanh();
        hidden[j] = o * tanh_cell[j];
    }
    LstmCache {
        input: x.to_vec(),
        prev_hidden: h.to_vec(),
        prev_cell: c.to_vec(),
        gates: z,
        cell,
        tanh_cell,
        hidden,
    }
}

/// One gated update; returns `(hidden, cell)`.
pub fn lstm_step(
    input: &[f64],
    prev_hidden: &[f64],
    prev_cell: &[f64],
    weights: &LstmWeights<'_>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hs = weights.hidden;
    if input.len() != weights.input
        || prev_hidden.len() != hs
        || prev_cell.len() != hs
        || weights.w_ih.len() != 4 * hs * weights.input
        || weights.w_hh.len() != 4 * hs * hs
        || weights.bias.len() != 4 * hs
    {
        return Err(Error::config(format!(
            "lstm shape mismatch: input {} (expects {}), hidden {}/{} (expects {hs})",
            input.len(),
            weights.input,
            prev_hidden.len(),
            prev_cell.len()
        )));
    }
    let cache = gate_forward(weights, input, prev_hidden, prev_cell);
    Ok((cache.hidden, cache.cell))
}

/// LSTM cell whose weights live in a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParameterStore, name: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(LstmCell {
            w_ih: store.add(&format!("{name}.w_ih"), &[4 * hidden, input])?,
            w_hh: store.add(&format!("{name}.w_hh"), &[4 * hidden, hidden])?,
            bias: store.add(&format!("{name}.bias"), &[4 * hidden])?,
            input,
            hidden,
        })
    }

    pub fn weights<'a>(&self, store: &'a ParameterStore) -> LstmWeights<'a> {
        LstmWeights {
            w_ih: store.value(self.w_ih),
            w_hh: store.value(self.w_hh),
            bias: store.value(self.bias),
            input: self.input,
            hidden: self.hidden,
        }
    }

    pub fn forward(&self, store: &ParameterStore, x: &[f64], h: &[f64], c: &[f64]) -> LstmCache {
        gate_forward(&self.weights(store), x, h, c)
    }

    /// Backpropagates through one step. `d_hidden` is the gradient arriving
    /// at this step's hidden output, `d_cell` the gradient arriving at its
    /// cell output from the next step. Returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        store: &mut ParameterStore,
        cache: &LstmCache,
        d_hidden: &[f64],
        d_cell: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hs = self.hidden;
        let z = &cache.gates;
        let mut dz = vec![0.0; 4 * hs];
        let mut dc_prev = vec![0.0; hs];
        for j in 0..hs {
            let (i, f, g, o) = (z[j], z[hs + j], z[2 * hs + j], z[3 * hs + j]);
            let tc = cache.tanh_cell[j];
            let d_o = d_hidden[j] * tc;
            let dc = d_cell[j] + d_hidden[j] * o * (1.0 - tc * tc);
            dz[j] = dc * g * i * (1.0 - i);
            dz[hs + j] = dc * cache.prev_cell[j] * f * (1.0 - f);
            dz[2 * hs + j] = dc * i * (1.0 - g * g);
            dz[3 * hs + j] = d_o * o * (1.0 - o);
            dc_prev[j] = dc * f;
        }
        add_assign(&mut store.get_mut(self.bias).grad, &dz);

        let mut dx = vec![0.0; self.input];
        let w_ih = store.get_mut(self.w_ih);
        outer_acc(&mut w_ih.grad, self.input, &dz, &cache.input);
        matvec_t_acc(&w_ih.values, 4 * hs, self.input, &dz, &mut dx);

        let mut dh_prev = vec![0.0; hs];
        let w_hh = store.get_mut(self.w_hh);
        outer_acc(&mut w_hh.grad, hs, &dz, &cache.prev_hidden);
        matvec_t_acc(&w_hh.values, 4 * hs, hs, &dz, &mut dh_prev);

        (dx, dh_prev, dc_prev)
    }
}
