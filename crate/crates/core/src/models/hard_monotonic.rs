//! Hard monotonic attention: the decoder reads one source position at a
//! time and moves forward only through explicit STEP actions (the TRANSL
//! architecture).
//!
//! Action indices `0..V` are WRITE(symbol) over the target vocabulary and
//! index `V` is STEP. WRITE(EOS) ends decoding. The source is encoded with
//! a trailing EOS sentinel, so the attended index ranges over `0..=n`.

use serde::Serialize;

use crate::data::{BOS, EOS};
use crate::error::{Error, Result};
use crate::numkernel::ops::{add_assign, softmax_cross_entropy_backward, softmax_unchecked};
use crate::numkernel::{cross_entropy, Embedding, Linear, LstmCache, LstmCell, ParameterStore};

use super::encoder::{EncodedSource, RecurrentEncoder};
use super::{argmax, Architecture, EncodedExample, ModelConfig, ModelKind};

/// One decoder action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Action {
    Step,
    Write(usize),
}

/// Result of a monotonic decode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MonotonicDecode {
    pub output: Vec<usize>,
    pub actions: Vec<Action>,
    /// Attended source index before each action, then the final index.
    pub trajectory: Vec<usize>,
    /// Set when `max_len` actions were taken without emitting EOS.
    pub truncated: bool,
}

/// Longest-common-subsequence alignment: for each target position, the
/// source position it is matched to, if any. Ties resolve toward matching
/// the earliest source position.
pub fn lcs_alignment<T: PartialEq>(source: &[T], target: &[T]) -> Vec<Option<usize>> {
    let (n, m) = (source.len(), target.len());
    // table[i][j] = LCS length of source[i..] and target[j..]
    let mut table = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i][j] = if source[i] == target[j] {
                table[i + 1][j + 1] + 1
            } else {
                table[i + 1][j].max(table[i][j + 1])
            };
        }
    }
    let mut alignment = vec![None; m];
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if source[i] == target[j] && table[i][j] == table[i + 1][j + 1] + 1 {
            alignment[j] = Some(i);
            i += 1;
            j += 1;
        } else if table[i + 1][j] >= table[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    alignment
}

/// Oracle action sequence: aligned target symbols are written after
/// stepping to their source position, unaligned ones at the current
/// position; a final WRITE(EOS) closes the sequence.
pub fn oracle_actions(
    source_len: usize,
    target: &[usize],
    alignment: &[Option<usize>],
) -> Result<Vec<Action>> {
    if source_len == 0 {
        return Err(Error::data("oracle", "cannot align an empty source"));
    }
    if alignment.len() != target.len() {
        return Err(Error::data("oracle", "alignment length differs from target length"));
    }
    let mut actions = Vec::with_capacity(source_len + target.len() + 1);
    let mut index = 0;
    for (&symbol, aligned) in target.iter().zip(alignment) {
        if let Some(pos) = *aligned {
            if pos < index || pos >= source_len {
                return Err(Error::data("oracle", format!("non-monotone alignment to {pos}")));
            }
            while index < pos {
                actions.push(Action::Step);
                index += 1;
            }
        }
        actions.push(Action::Write(symbol));
    }
    actions.push(Action::Write(EOS));
    Ok(actions)
}

#[derive(Debug, Clone)]
pub struct HardMonotonic {
    encoder: RecurrentEncoder,
    action_embedding: Embedding,
    decoder: LstmCell,
    output: Linear,
    hidden: usize,
    embedding: usize,
    target_vocab: usize,
}

struct Step {
    prev: usize,
    index: usize,
    lstm: LstmCache,
    features: Vec<f64>,
    probs: Vec<f64>,
    action: usize,
}

impl HardMonotonic {
    pub fn new(
        store: &mut ParameterStore,
        config: &ModelConfig,
        source_vocab: usize,
        target_vocab: usize,
    ) -> Result<Self> {
        let (h, e) = (config.hidden, config.embedding);
        Ok(HardMonotonic {
            encoder: RecurrentEncoder::new(store, "encoder", source_vocab, e, h, config.bidirectional)?,
            action_embedding: Embedding::new(store, "decoder.action_embed", target_vocab + 1, e)?,
            decoder: LstmCell::new(store, "decoder.lstm", e + h, h)?,
            output: Linear::new(store, "output", 2 * h, target_vocab + 1)?,
            hidden: h,
            embedding: e,
            target_vocab,
        })
    }

    pub fn step_action(&self) -> usize {
        self.target_vocab
    }

    fn action_index(&self, action: Action) -> usize {
        match action {
            Action::Step => self.target_vocab,
            Action::Write(s) => s,
        }
    }

    fn encode_source(
        &self,
        store: &ParameterStore,
        source: &[usize],
    ) -> Result<(EncodedSource, super::encoder::EncoderCache)> {
        if source.is_empty() {
            return Err(Error::data("hard-monotonic", "empty source sequence"));
        }
        let with_sentinel: Vec<usize> = source.iter().copied().chain(std::iter::once(EOS)).collect();
        self.encoder.forward(store, &with_sentinel, 1)
    }

    fn forward(
        &self,
        store: &ParameterStore,
        ex: &EncodedExample,
    ) -> Result<(f64, Vec<Step>, EncodedSource, super::encoder::EncoderCache)> {
        let actions = oracle_actions(ex.source.len(), &ex.target, &ex.alignment)
            .map_err(|e| Error::data(ex.id.clone(), e.to_string()))?;
        let (encoded, cache) = self.encode_source(store, &ex.source)?;
        let mut h = encoded.summary.clone();
        let mut c = vec![0.0; self.hidden];
        let mut index = 0;
        let mut prev = BOS;
        let mut loss = 0.0;
        let mut steps = Vec::with_capacity(actions.len());
        for action in actions {
            let a = self.action_index(action);
            let attended = &encoded.states[index];
            let x = [self.action_embedding.forward(store, prev).as_slice(), attended].concat();
            let lstm = self.decoder.forward(store, &x, &h, &c);
            h = lstm.hidden.clone();
            c = lstm.cell.clone();
            let features = [h.as_slice(), attended].concat();
            let probs = softmax_unchecked(&self.output.forward(store, &features));
            loss += cross_entropy(&probs, a)?;
            steps.push(Step {
                prev,
                index,
                lstm,
                features,
                probs,
                action: a,
            });
            if action == Action::Step {
                index += 1;
            }
            prev = a;
        }
        Ok((loss, steps, encoded, cache))
    }

    /// Greedy monotonic decode. STEP is unavailable once the sentinel
    /// position is reached; ties go to the lowest action index.
    pub fn decode_actions(
        &self,
        store: &ParameterStore,
        source: &[usize],
        max_len: usize,
    ) -> Result<MonotonicDecode> {
        let (encoded, _) = self.encode_source(store, source)?;
        let last = encoded.positions() - 1;
        let mut h = encoded.summary.clone();
        let mut c = vec![0.0; self.hidden];
        let mut index = 0;
        let mut prev = BOS;
        let mut result = MonotonicDecode {
            output: Vec::new(),
            actions: Vec::new(),
            trajectory: Vec::new(),
            truncated: true,
        };
        while result.actions.len() < max_len {
            let attended = &encoded.states[index];
            let x = [self.action_embedding.forward(store, prev).as_slice(), attended].concat();
            let lstm = self.decoder.forward(store, &x, &h, &c);
            h = lstm.hidden;
            c = lstm.cell;
            let features = [h.as_slice(), attended].concat();
            let mut logits = self.output.forward(store, &features);
            if index >= last {
                logits[self.target_vocab] = f64::NEG_INFINITY;
            }
            let a = argmax(&logits).ok_or_else(|| Error::Model("empty action space".into()))?;
            result.trajectory.push(index);
            if a == self.target_vocab {
                result.actions.push(Action::Step);
                index += 1;
            } else {
                result.actions.push(Action::Write(a));
                if a == EOS {
                    result.truncated = false;
                    break;
                }
                result.output.push(a);
            }
            prev = a;
        }
        result.trajectory.push(index);
        Ok(result)
    }
}

impl Architecture for HardMonotonic {
    fn kind(&self) -> ModelKind {
        ModelKind::HardMonotonic
    }

    fn loss(&self, store: &ParameterStore, ex: &EncodedExample) -> Result<f64> {
        Ok(self.forward(store, ex)?.0)
    }

    fn loss_and_grad(&self, store: &mut ParameterStore, ex: &EncodedExample) -> Result<f64> {
        let (loss, steps, encoded, cache) = self.forward(store, ex)?;
        let (hs, es) = (self.hidden, self.embedding);
        let mut d_states = vec![vec![0.0; hs]; encoded.positions()];
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        for step in steps.iter().rev() {
            let d_logits = softmax_cross_entropy_backward(&step.probs, step.action);
            let d_features = self.output.backward(store, &step.features, &d_logits);
            add_assign(&mut d_states[step.index], &d_features[hs..]);
            let mut dh = d_features[..hs].to_vec();
            add_assign(&mut dh, &dh_next);
            let (dx, dh_prev, dc_prev) = self.decoder.backward(store, &step.lstm, &dh, &dc_next);
            self.action_embedding.backward(store, step.prev, &dx[..es]);
            add_assign(&mut d_states[step.index], &dx[es..]);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        self.encoder
            .backward(store, &encoded, &cache, &d_states, &dh_next);
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
        Ok(self.decode_actions(store, source, max_len)?.output)
    }

    fn as_hard_monotonic(&self) -> Option<&HardMonotonic> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::chars;

    #[test]
    fn lcs_alignment_examples() {
        let a = lcs_alignment(&chars("abc"), &chars("xbc"));
        assert_eq!(a, vec![None, Some(1), Some(2)]);
        let a = lcs_alignment(&chars("abc"), &chars("ac"));
        assert_eq!(a, vec![Some(0), Some(2)]);
        let a = lcs_alignment(&chars("abc"), &chars("xyz"));
        assert_eq!(a, vec![None; 3]);
    }

    #[test]
    fn oracle_steps_to_aligned_positions() {
        // source "abc" (len 3), target "xbc" → W(x) S W(b) S W(c) W(EOS)
        let target = vec![10, 11, 12];
        let acts = oracle_actions(3, &target, &[None, Some(1), Some(2)]).unwrap();
        assert_eq!(
            acts,
            vec![
                Action::Write(10),
                Action::Step,
                Action::Write(11),
                Action::Step,
                Action::Write(12),
                Action::Write(EOS)
            ]
        );
        assert!(oracle_actions(0, &[], &[]).is_err());
        assert!(oracle_actions(2, &[5, 6], &[Some(1), Some(0)]).is_err());
    }
}
