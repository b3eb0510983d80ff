//! Pointer-generator decoder with a separate feature encoder (the MORPH
//! architecture).

use crate::data::{BOS, EOS};
use crate::error::{Error, Result};
use crate::numkernel::ops::{
    add_assign, cross_entropy_grad, sigmoid, softmax_backward, softmax_unchecked,
};
use crate::numkernel::{cross_entropy, Embedding, Linear, LstmCache, LstmCell, ParameterStore};

use super::attention::{AdditiveAttention, AttentionCache, AttentionResult};
use super::encoder::{EncodedSource, EncoderCache, RecurrentEncoder};
use super::{argmax, Architecture, EncodedExample, ModelConfig, ModelKind};

type FeatureEncoding = (EncodedSource, EncoderCache);

/// Mixes generation and copy distributions:
/// `P(w) = p_gen·vocab(w) + (1 − p_gen)·Σ_{i: source[i] = w} attention[i]`.
///
/// `source` holds output-vocabulary indices aligned with the attention weights.
pub fn pg_mixture(
    p_gen: f64,
    vocab_dist: &[f64],
    attention: &AttentionResult,
    source: &[usize],
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&p_gen) {
        return Err(Error::Model(format!("p_gen {p_gen} outside [0, 1]")));
    }
    if attention.weights.len() != source.len() {
        return Err(Error::Model(format!(
            "{} attention weights for {} source positions",
            attention.weights.len(),
            source.len()
        )));
    }
    if let Some(bad) = source.iter().find(|&&s| s >= vocab_dist.len()) {
        return Err(Error::Model(format!(
            "source symbol {bad} outside output vocabulary of {}",
            vocab_dist.len()
        )));
    }
    Ok(mixture(p_gen, vocab_dist, &attention.weights, source))
}

fn mixture(p_gen: f64, vocab_dist: &[f64], weights: &[f64], source: &[usize]) -> Vec<f64> {
    let mut out: Vec<f64> = vocab_dist.iter().map(|p| p_gen * p).collect();
    for (&w, &s) in weights.iter().zip(source) {
        out[s] += (1.0 - p_gen) * w;
    }
    out
}

#[derive(Debug, Clone)]
pub struct PointerGenerator {
    encoder: RecurrentEncoder,
    feature_encoder: RecurrentEncoder,
    target_embedding: Embedding,
    decoder: LstmCell,
    attention: AdditiveAttention,
    output: Linear,
    switch: Linear,
    hidden: usize,
    embedding: usize,
}

struct Step {
    input: usize,
    lstm: LstmCache,
    attention: AttentionCache,
    weights: Vec<f64>,
    /// `[s; context]`, input of the output layer.
    out_features: Vec<f64>,
    /// `[s; context; embedding]`, input of the copy switch.
    switch_features: Vec<f64>,
    vocab: Vec<f64>,
    p_gen: f64,
    p_target: f64,
    target: usize,
}

struct Pass {
    encoded: EncodedSource,
    enc_cache: EncoderCache,
    features: Option<(EncodedSource, EncoderCache)>,
}

impl PointerGenerator {
    pub fn new(
        store: &mut ParameterStore,
        config: &ModelConfig,
        vocab: usize,
        feature_vocab: usize,
    ) -> Result<Self> {
        let (h, e) = (config.hidden, config.embedding);
        Ok(PointerGenerator {
            encoder: RecurrentEncoder::new(store, "encoder", vocab, e, h, config.bidirectional)?,
            feature_encoder: RecurrentEncoder::new(store, "features", feature_vocab, e, h, false)?,
            target_embedding: Embedding::new(store, "decoder.embed", vocab, e)?,
            decoder: LstmCell::new(store, "decoder.lstm", e + h, h)?,
            attention: AdditiveAttention::new(store, "attention", h, h, h)?,
            output: Linear::new(store, "output", 2 * h, vocab)?,
            switch: Linear::new(store, "switch", 2 * h + e, 1)?,
            hidden: h,
            embedding: e,
        })
    }

    fn encode_features(
        &self,
        store: &ParameterStore,
        features: &[usize],
    ) -> Result<(Vec<f64>, Option<FeatureEncoding>)> {
        if features.is_empty() {
            return Ok((vec![0.0; self.hidden], None));
        }
        let (enc, cache) = self.feature_encoder.forward(store, features, 0)?;
        Ok((enc.summary.clone(), Some((enc, cache))))
    }

    fn forward(&self, store: &ParameterStore, ex: &EncodedExample) -> Result<(f64, Vec<Step>, Pass)> {
        let (encoded, enc_cache) = self.encoder.forward(store, &ex.source, 0)?;
        let (feature_state, features) = self.encode_features(store, &ex.features)?;
        let keys = self.attention.project_keys(store, &encoded);
        let mut h = encoded.summary.clone();
        let mut c = vec![0.0; self.hidden];
        let mut loss = 0.0;
        let mut steps = Vec::with_capacity(ex.target.len() + 1);
        let inputs = std::iter::once(BOS).chain(ex.target.iter().copied());
        let targets = ex.target.iter().copied().chain(std::iter::once(EOS));
        for (input, target) in inputs.zip(targets) {
            let emb = self.target_embedding.forward(store, input);
            let x = [emb.as_slice(), &feature_state].concat();
            let lstm = self.decoder.forward(store, &x, &h, &c);
            h = lstm.hidden.clone();
            c = lstm.cell.clone();
            let (att, attention) = self.attention.attend(store, &h, &encoded, &keys);
            let out_features = [h.as_slice(), att.context.as_slice()].concat();
            let vocab = softmax_unchecked(&self.output.forward(store, &out_features));
            let switch_features = [out_features.as_slice(), &emb].concat();
            let p_gen = sigmoid(self.switch.forward(store, &switch_features)[0]);
            let mixed = mixture(p_gen, &vocab, &att.weights, &encoded.symbols);
            loss += cross_entropy(&mixed, target)?;
            steps.push(Step {
                input,
                lstm,
                attention,
                weights: att.weights,
                out_features,
                switch_features,
                vocab,
                p_gen,
                p_target: mixed[target],
                target,
            });
        }
        Ok((
            loss,
            steps,
            Pass {
                encoded,
                enc_cache,
                features,
            },
        ))
    }
}

impl Architecture for PointerGenerator {
    fn kind(&self) -> ModelKind {
        ModelKind::PointerGenerator
    }

    fn loss(&self, store: &ParameterStore, ex: &EncodedExample) -> Result<f64> {
        Ok(self.forward(store, ex)?.0)
    }

    fn loss_and_grad(&self, store: &mut ParameterStore, ex: &EncodedExample) -> Result<f64> {
        let (loss, steps, pass) = self.forward(store, ex)?;
        let (hs, es) = (self.hidden, self.embedding);
        let n = pass.encoded.positions();
        let source = &pass.encoded.symbols;
        let mut d_states = vec![vec![0.0; hs]; n];
        let mut d_keys = vec![vec![0.0; self.attention.attn_dim]; n];
        let mut d_feature_state = vec![0.0; hs];
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        for step in steps.iter().rev() {
            let y = step.target;
            let g = cross_entropy_grad(step.p_target);
            let copied: f64 = step
                .weights
                .iter()
                .zip(source)
                .filter(|(_, &s)| s == y)
                .map(|(w, _)| w)
                .sum();

            // switch
            let d_gen_logit = g * (step.vocab[y] - copied) * step.p_gen * (1.0 - step.p_gen);
            let d_switch = self
                .switch
                .backward(store, &step.switch_features, &[d_gen_logit]);

            // generation distribution
            let mut d_vocab = vec![0.0; step.vocab.len()];
            d_vocab[y] = g * step.p_gen;
            let d_logits = softmax_backward(&step.vocab, &d_vocab);
            let mut d_out = self.output.backward(store, &step.out_features, &d_logits);
            add_assign(&mut d_out, &d_switch[..2 * hs]);
            let (d_h, d_context) = d_out.split_at(hs);

            // copy distribution
            let d_weights: Vec<f64> = source
                .iter()
                .map(|&s| if s == y { g * (1.0 - step.p_gen) } else { 0.0 })
                .collect();
            let d_query = self.attention.backward(
                store,
                &step.attention,
                &pass.encoded,
                Some(&d_weights),
                d_context,
                &mut d_keys,
                &mut d_states,
            );

            let mut dh = d_h.to_vec();
            add_assign(&mut dh, &d_query);
            add_assign(&mut dh, &dh_next);
            let (dx, dh_prev, dc_prev) = self.decoder.backward(store, &step.lstm, &dh, &dc_next);
            let mut d_emb = dx[..es].to_vec();
            add_assign(&mut d_emb, &d_switch[2 * hs..]);
            self.target_embedding.backward(store, step.input, &d_emb);
            add_assign(&mut d_feature_state, &dx[es..]);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        self.attention
            .backward_keys(store, &pass.encoded, &d_keys, &mut d_states);
        self.encoder
            .backward(store, &pass.encoded, &pass.enc_cache, &d_states, &dh_next);
        if let Some((enc, cache)) = &pass.features {
            let zeros = vec![vec![0.0; hs]; enc.positions()];
            self.feature_encoder
                .backward(store, enc, cache, &zeros, &d_feature_state);
        }
        Ok(loss)
    }

    fn decode(
        &self,
        store: &ParameterStore,
        source: &[usize],
        features: &[usize],
        max_len: usize,
    ) -> Result<Vec<usize>> {
        if max_len == 0 {
            return Ok(Vec::new());
        }
        let (encoded, _) = self.encoder.forward(store, source, 0)?;
        let (feature_state, _) = self.encode_features(store, features)?;
        let keys = self.attention.project_keys(store, &encoded);
        let mut h = encoded.summary.clone();
        let mut c = vec![0.0; self.hidden];
        let mut input = BOS;
        let mut out = Vec::new();
        while out.len() < max_len {
            let emb = self.target_embedding.forward(store, input);
            let x = [emb.as_slice(), &feature_state].concat();
            let lstm = self.decoder.forward(store, &x, &h, &c);
            h = lstm.hidden;
            c = lstm.cell;
            let (att, _) = self.attention.attend(store, &h, &encoded, &keys);
            let out_features = [h.as_slice(), att.context.as_slice()].concat();
            let vocab = softmax_unchecked(&self.output.forward(store, &out_features));
            let switch_features = [out_features.as_slice(), &emb].concat();
            let p_gen = sigmoid(self.switch.forward(store, &switch_features)[0]);
            let mixed = mixture(p_gen, &vocab, &att.weights, &encoded.symbols);
            let next = argmax(&mixed)
                .ok_or_else(|| Error::Model("empty output distribution".into()))?;
            if next == EOS {
                break;
            }
            out.push(next);
            input = next;
        }
        Ok(out)
    }
}
