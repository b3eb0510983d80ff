//! LSTM encoder-decoder with additive attention (the NORM architecture).

use crate::data::{BOS, EOS};
use crate::error::{Error, Result};
use crate::numkernel::ops::{add_assign, softmax_cross_entropy_backward, softmax_unchecked};
use crate::numkernel::{cross_entropy, Embedding, Linear, LstmCache, LstmCell, ParameterStore};

use super::attention::{AdditiveAttention, AttentionCache};
use super::encoder::RecurrentEncoder;
use super::{argmax, Architecture, EncodedExample, ModelConfig, ModelKind};

#[derive(Debug, Clone)]
pub struct AttentionSeq2Seq {
    encoder: RecurrentEncoder,
    target_embedding: Embedding,
    decoder: LstmCell,
    attention: AdditiveAttention,
    output: Linear,
    hidden: usize,
}

struct Step {
    input: usize,
    lstm: LstmCache,
    attention: AttentionCache,
    features: Vec<f64>,
    probs: Vec<f64>,
    target: usize,
}

impl AttentionSeq2Seq {
    pub fn new(
        store: &mut ParameterStore,
        config: &ModelConfig,
        source_vocab: usize,
        target_vocab: usize,
    ) -> Result<Self> {
        let (h, e) = (config.hidden, config.embedding);
        Ok(AttentionSeq2Seq {
            encoder: RecurrentEncoder::new(store, "encoder", source_vocab, e, h, config.bidirectional)?,
            target_embedding: Embedding::new(store, "decoder.embed", target_vocab, e)?,
            decoder: LstmCell::new(store, "decoder.lstm", e, h)?,
            attention: AdditiveAttention::new(store, "attention", h, h, h)?,
            output: Linear::new(store, "output", 2 * h, target_vocab)?,
            hidden: h,
        })
    }

    fn forward(&self, store: &ParameterStore, ex: &EncodedExample) -> Result<(f64, Vec<Step>, Pass)> {
        let (encoded, enc_cache) = self.encoder.forward(store, &ex.source, 0)?;
        let keys = self.attention.project_keys(store, &encoded);
        let mut h = encoded.summary.clone();
        let mut c = vec![0.0; self.hidden];
        let mut loss = 0.0;
        let mut steps = Vec::with_capacity(ex.target.len() + 1);
        let inputs = std::iter::once(BOS).chain(ex.target.iter().copied());
        let targets = ex.target.iter().copied().chain(std::iter::once(EOS));
        for (input, target) in inputs.zip(targets) {
            let x = self.target_embedding.forward(store, input);
            let lstm = self.decoder.forward(store, &x, &h, &c);
            h = lstm.hidden.clone();
            c = lstm.cell.clone();
            let (att, attention) = self.attention.attend(store, &h, &encoded, &keys);
            let features = [h.as_slice(), att.context.as_slice()].concat();
            let probs = softmax_unchecked(&self.output.forward(store, &features));
            loss += cross_entropy(&probs, target)?;
            steps.push(Step {
                input,
                lstm,
                attention,
                features,
                probs,
                target,
            });
        }
        Ok((loss, steps, Pass { encoded, enc_cache }))
    }
}

struct Pass {
    encoded: super::encoder::EncodedSource,
    enc_cache: super::encoder::EncoderCache,
}

impl Architecture for AttentionSeq2Seq {
    fn kind(&self) -> ModelKind {
        ModelKind::AttentionSeq2Seq
    }

    fn loss(&self, store: &ParameterStore, ex: &EncodedExample) -> Result<f64> {
        Ok(self.forward(store, ex)?.0)
    }

    fn loss_and_grad(&self, store: &mut ParameterStore, ex: &EncodedExample) -> Result<f64> {
        let (loss, steps, pass) = self.forward(store, ex)?;
        let hs = self.hidden;
        let n = pass.encoded.positions();
        let mut d_states = vec![vec![0.0; hs]; n];
        let mut d_keys = vec![vec![0.0; self.attention.attn_dim]; n];
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        for step in steps.iter().rev() {
            let d_logits = softmax_cross_entropy_backward(&step.probs, step.target);
            let d_features = self.output.backward(store, &step.features, &d_logits);
            let (d_h, d_context) = d_features.split_at(hs);
            let d_query = self.attention.backward(
                store,
                &step.attention,
                &pass.encoded,
                None,
                d_context,
                &mut d_keys,
                &mut d_states,
            );
            let mut dh = d_h.to_vec();
            add_assign(&mut dh, &d_query);
            add_assign(&mut dh, &dh_next);
            let (dx, dh_prev, dc_prev) = self.decoder.backward(store, &step.lstm, &dh, &dc_next);
            self.target_embedding.backward(store, step.input, &dx);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        self.attention
            .backward_keys(store, &pass.encoded, &d_keys, &mut d_states);
        self.encoder
            .backward(store, &pass.encoded, &pass.enc_cache, &d_states, &dh_next);
        Ok(loss)
    }

    fn decode(
        &self,
        store: &ParameterStore,
        source: &[usize],
        _features: &[usize],
        max_len: usize,
    ) -> Result<Vec<usize>> {
        if max_len == 0 {
            return Ok(Vec::new());
        }
        let (encoded, _) = self.encoder.forward(store, source, 0)?;
        let keys = self.attention.project_keys(store, &encoded);
        let mut h = encoded.summary.clone();
        let mut c = vec![0.0; self.hidden];
        let mut input = BOS;
        let mut out = Vec::new();
        while out.len() < max_len {
            let x = self.target_embedding.forward(store, input);
            let lstm = self.decoder.forward(store, &x, &h, &c);
            h = lstm.hidden;
            c = lstm.cell;
            let (att, _) = self.attention.attend(store, &h, &encoded, &keys);
            let features = [h.as_slice(), att.context.as_slice()].concat();
            let logits = self.output.forward(store, &features);
            let next = argmax(&logits)
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
