use crate::error::{Error, Result};
use crate::numkernel::ops::{
    add_assign, matvec, matvec_t_acc, outer_acc, softmax_backward, softmax_unchecked,
};
use crate::numkernel::{ParamId, ParameterStore};

use super::encoder::EncodedSource;

/// Attention distribution over encoded positions and the resulting context.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResult {
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    query: Vec<f64>,
    /// `tanh(W_q s + W_k h_j + b)` per position.
    activations: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

/// Additive scoring `score_j = vᵀ tanh(W_q s + W_k h_j + b)`.
#[derive(Debug, Clone)]
pub struct AdditiveAttention {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub bias: ParamId,
    pub v: ParamId,
    pub query_dim: usize,
    pub key_dim: usize,
    pub attn_dim: usize,
}

impl AdditiveAttention {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        query_dim: usize,
        key_dim: usize,
        attn_dim: usize,
    ) -> Result<Self> {
        Ok(AdditiveAttention {
            w_query: store.add(&format!("{name}.w_query"), &[attn_dim, query_dim])?,
            w_key: store.add(&format!("{name}.w_key"), &[attn_dim, key_dim])?,
            bias: store.add(&format!("{name}.bias"), &[attn_dim])?,
            v: store.add(&format!("{name}.v"), &[attn_dim])?,
            query_dim,
            key_dim,
            attn_dim,
        })
    }

    /// `W_k h_j` for every position; computed once per source.
    pub fn project_keys(&self, store: &ParameterStore, encoded: &EncodedSource) -> Vec<Vec<f64>> {
        let w = store.value(self.w_key);
        encoded
            .states
            .iter()
            .map(|h| matvec(w, self.attn_dim, self.key_dim, h))
            .collect()
    }

    pub fn attend(
        &self,
        store: &ParameterStore,
        query: &[f64],
        encoded: &EncodedSource,
        keys: &[Vec<f64>],
    ) -> (AttentionResult, AttentionCache) {
        let mut q = matvec(store.value(self.w_query), self.attn_dim, self.query_dim, query);
        add_assign(&mut q, store.value(self.bias));
        let v = store.value(self.v);
        let activations: Vec<Vec<f64>> = keys
            .iter()
            .map(|k| q.iter().zip(k).map(|(a, b)| (a + b).tanh()).collect())
            .collect();
        let scores: Vec<f64> = activations
            .iter()
            .map(|u: &Vec<f64>| u.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect();
        let weights = softmax_unchecked(&scores);
        let mut context = vec![0.0; self.key_dim];
        for (w, h) in weights.iter().zip(&encoded.states) {
            for (c, x) in context.iter_mut().zip(h) {
                *c += w * x;
            }
        }
        (
            AttentionResult {
                weights: weights.clone(),
                context,
            },
            AttentionCache {
                query: query.to_vec(),
                activations,
                weights,
            },
        )
    }

    /// Backpropagates one attention step. Gradients for the key projections
    /// and encoder states are accumulated into `d_keys` / `d_states`; the
    /// key projection itself is finished by [`AdditiveAttention::backward_keys`].
    /// Returns the gradient w.r.t. the query.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        store: &mut ParameterStore,
        cache: &AttentionCache,
        encoded: &EncodedSource,
        d_weights: Option<&[f64]>,
        d_context: &[f64],
        d_keys: &mut [Vec<f64>],
        d_states: &mut [Vec<f64>],
    ) -> Vec<f64> {
        let n = encoded.states.len();
        let mut dw: Vec<f64> = encoded
            .states
            .iter()
            .map(|h| h.iter().zip(d_context).map(|(a, b)| a * b).sum())
            .collect();
        if let Some(extra) = d_weights {
            add_assign(&mut dw, extra);
        }
        for (j, d_state) in d_states.iter_mut().enumerate().take(n) {
            let w = cache.weights[j];
            for (d, c) in d_state.iter_mut().zip(d_context) {
                *d += w * c;
            }
        }
        let d_scores = softmax_backward(&cache.weights, &dw);

        let v = store.value(self.v).to_vec();
        let mut d_pre_sum = vec![0.0; self.attn_dim];
        {
            let dv = &mut store.get_mut(self.v).grad;
            for (j, u) in cache.activations.iter().enumerate() {
                let ds = d_scores[j];
                for k in 0..self.attn_dim {
                    dv[k] += ds * u[k];
                    let d_pre = ds * v[k] * (1.0 - u[k] * u[k]);
                    d_keys[j][k] += d_pre;
                    d_pre_sum[k] += d_pre;
                }
            }
        }
        add_assign(&mut store.get_mut(self.bias).grad, &d_pre_sum);
        let wq = store.get_mut(self.w_query);
        outer_acc(&mut wq.grad, self.query_dim, &d_pre_sum, &cache.query);
        let mut d_query = vec![0.0; self.query_dim];
        matvec_t_acc(&wq.values, self.attn_dim, self.query_dim, &d_pre_sum, &mut d_query);
        d_query
    }

    /// Finishes the key-projection backward pass for one sequence.
    pub fn backward_keys(
        &self,
        store: &mut ParameterStore,
        encoded: &EncodedSource,
        d_keys: &[Vec<f64>],
        d_states: &mut [Vec<f64>],
    ) {
        let wk = store.get_mut(self.w_key);
        for ((h, dk), ds) in encoded.states.iter().zip(d_keys).zip(d_states.iter_mut()) {
            outer_acc(&mut wk.grad, self.key_dim, dk, h);
            matvec_t_acc(&wk.values, self.attn_dim, self.key_dim, dk, ds);
        }
    }
}

/// Attention of one decoder state over an encoded source.
pub fn soft_attention(
    store: &ParameterStore,
    attention: &AdditiveAttention,
    decoder_state: &[f64],
    encoded: &EncodedSource,
) -> Result<AttentionResult> {
    if decoder_state.len() != attention.query_dim
        || encoded.states.iter().any(|h| h.len() != attention.key_dim)
    {
        return Err(Error::config("attention dimension mismatch"));
    }
    let keys = attention.project_keys(store, encoded);
    Ok(attention.attend(store, decoder_state, encoded, &keys).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::gradient_check;
    use crate::numkernel::ops::dot;

    fn encoded(states: Vec<Vec<f64>>) -> EncodedSource {
        let n = states.len();
        EncodedSource {
            summary: vec![0.0; states[0].len()],
            states,
            symbols: vec![4; n],
            length: n,
            sentinels: 0,
        }
    }

    #[test]
    fn identical_states_give_uniform_weights() {
        let mut store = ParameterStore::new(1);
        let att = AdditiveAttention::new(&mut store, "att", 3, 2, 4).unwrap();
        let enc = encoded(vec![vec![0.3, -0.2]; 4]);
        let r = soft_attention(&store, &att, &[0.1, 0.5, -0.4], &enc).unwrap();
        for w in &r.weights {
            assert!((w - 0.25).abs() < 1e-15);
        }
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn singleton_attends_fully() {
        let mut store = ParameterStore::new(1);
        let att = AdditiveAttention::new(&mut store, "att", 3, 2, 4).unwrap();
        let enc = encoded(vec![vec![0.7, -1.5]]);
        let r = soft_attention(&store, &att, &[0.1, 0.5, -0.4], &enc).unwrap();
        assert_eq!(r.weights, vec![1.0]);
        assert_eq!(r.context, vec![0.7, -1.5]);
    }

    #[test]
    fn hand_set_scores_give_quarter_three_quarters() {
        // attn_dim 1, key_dim 1: score_j = v * tanh(h_j) with W_q = 0, W_k = 1, b = 0.
        let mut store = ParameterStore::new(1);
        let att = AdditiveAttention::new(&mut store, "att", 1, 1, 1).unwrap();
        store.get_mut(att.w_query).values[0] = 0.0;
        store.get_mut(att.w_key).values[0] = 1.0;
        store.get_mut(att.bias).values[0] = 0.0;
        store.get_mut(att.v).values[0] = 2.0;
        let h2 = (3f64.ln() / 2.0).atanh();
        let enc = encoded(vec![vec![0.0], vec![h2]]);
        let r = soft_attention(&store, &att, &[0.9], &enc).unwrap();
        assert!((r.weights[0] - 0.25).abs() < 1e-12);
        assert!((r.weights[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut store = ParameterStore::new(9);
        let att = AdditiveAttention::new(&mut store, "att", 3, 2, 4).unwrap();
        let states_id = store.add("states", &[3, 2]).unwrap();
        let query_id = store.add("query", &[3]).unwrap();
        store.get_mut(att.v).values = vec![1.5, -2.0, 1.0, 0.8];
        store.get_mut(query_id).values = vec![0.9, -1.2, 0.4];
        store.get_mut(att.w_query).values.iter_mut().for_each(|w| *w *= 10.0);
        let readout = [0.4, -1.3];
        let weight_readout = [0.2, -0.7, 1.1];
        let loss = |s: &mut ParameterStore| {
            let st = s.value(states_id).to_vec();
            let enc = encoded(st.chunks(2).map(<[f64]>::to_vec).collect());
            let q = s.value(query_id).to_vec();
            let keys = att.project_keys(s, &enc);
            let (r, cache) = att.attend(s, &q, &enc, &keys);
            let l = dot(&r.context, &readout) + dot(&r.weights, &weight_readout);
            let mut d_keys = vec![vec![0.0; 4]; 3];
            let mut d_states = vec![vec![0.0; 2]; 3];
            let dq = att.backward(s, &cache, &enc, Some(&weight_readout), &readout, &mut d_keys, &mut d_states);
            att.backward_keys(s, &enc, &d_keys, &mut d_states);
            add_assign(&mut s.get_mut(query_id).grad, &dq);
            add_assign(&mut s.get_mut(states_id).grad, &d_states.concat());
            l
        };
        let report = gradient_check(loss, &mut store, 40, 3);
        assert!(report.max_relative_error <= 1e-6, "{report:?}");
    }
}
