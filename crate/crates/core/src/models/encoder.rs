use crate::error::{Error, Result};
use crate::numkernel::ops::add_assign;
use crate::numkernel::{Embedding, LstmCache, LstmCell, ParameterStore};

/// Per-position encoder outputs.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    /// One state per encoded position (source symbols followed by any sentinels).
    pub states: Vec<Vec<f64>>,
    pub symbols: Vec<usize>,
    /// Number of real source symbols.
    pub length: usize,
    /// Positions appended after the source (e.g. an end marker).
    pub sentinels: usize,
    /// Final state of the forward pass plus, when bidirectional, the final
    /// state of the backward pass. Seeds the decoder.
    pub summary: Vec<f64>,
}

impl EncodedSource {
    pub fn positions(&self) -> usize {
        self.states.len()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    forward: Vec<LstmCache>,
    /// In processing order, i.e. `backward[k]` saw position `n - 1 - k`.
    backward: Vec<LstmCache>,
}

/// Single-layer LSTM encoder over embedded symbols; the two directions of
/// a bidirectional encoder are summed per position.
#[derive(Debug, Clone)]
pub struct RecurrentEncoder {
    pub embedding: Embedding,
    pub forward_cell: LstmCell,
    pub backward_cell: Option<LstmCell>,
    pub hidden: usize,
}

impl RecurrentEncoder {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        vocab: usize,
        embedding: usize,
        hidden: usize,
        bidirectional: bool,
    ) -> Result<Self> {
        let embedding = Embedding::new(store, &format!("{name}.embed"), vocab, embedding)?;
        let forward_cell = LstmCell::new(store, &format!("{name}.fwd"), embedding.dim, hidden)?;
        let backward_cell = if bidirectional {
            Some(LstmCell::new(store, &format!("{name}.bwd"), embedding.dim, hidden)?)
        } else {
            None
        };
        Ok(RecurrentEncoder {
            embedding,
            forward_cell,
            backward_cell,
            hidden,
        })
    }

    /// Encodes `symbols`, of which the last `sentinels` are markers rather
    /// than source content.
    pub fn forward(
        &self,
        store: &ParameterStore,
        symbols: &[usize],
        sentinels: usize,
    ) -> Result<(EncodedSource, EncoderCache)> {
        if symbols.len() <= sentinels {
            return Err(Error::data("encoder", "empty source sequence"));
        }
        if let Some(bad) = symbols.iter().find(|&&s| s >= self.embedding.vocab) {
            return Err(Error::Model(format!(
                "symbol index {bad} outside encoder vocabulary of {}",
                self.embedding.vocab
            )));
        }
        let n = symbols.len();
        let hs = self.hidden;
        let embeds: Vec<Vec<f64>> = symbols
            .iter()
            .map(|&s| self.embedding.forward(store, s))
            .collect();

        let mut fwd = Vec::with_capacity(n);
        let (mut h, mut c) = (vec![0.0; hs], vec![0.0; hs]);
        for x in &embeds {
            let cache = self.forward_cell.forward(store, x, &h, &c);
            h = cache.hidden.clone();
            c = cache.cell.clone();
            fwd.push(cache);
        }
        let mut states: Vec<Vec<f64>> = fwd.iter().map(|cache| cache.hidden.clone()).collect();
        let mut summary = h;

        let mut bwd = Vec::new();
        if let Some(cell) = &self.backward_cell {
            let (mut h, mut c) = (vec![0.0; hs], vec![0.0; hs]);
            for x in embeds.iter().rev() {
                let cache = cell.forward(store, x, &h, &c);
                h = cache.hidden.clone();
                c = cache.cell.clone();
                bwd.push(cache);
            }
            for (k, cache) in bwd.iter().enumerate() {
                add_assign(&mut states[n - 1 - k], &cache.hidden);
            }
            add_assign(&mut summary, &h);
        }

        Ok((
            EncodedSource {
                states,
                symbols: symbols.to_vec(),
                length: n - sentinels,
                sentinels,
                summary,
            },
            EncoderCache {
                forward: fwd,
                backward: bwd,
            },
        ))
    }

    /// Backpropagates gradients w.r.t. every position's state and the summary.
    pub fn backward(
        &self,
        store: &mut ParameterStore,
        encoded: &EncodedSource,
        cache: &EncoderCache,
        d_states: &[Vec<f64>],
        d_summary: &[f64],
    ) {
        let n = encoded.states.len();
        let hs = self.hidden;

        let (mut dh, mut dc) = (d_summary.to_vec(), vec![0.0; hs]);
        for j in (0..n).rev() {
            add_assign(&mut dh, &d_states[j]);
            let (dx, dh_prev, dc_prev) = self.forward_cell.backward(store, &cache.forward[j], &dh, &dc);
            self.embedding.backward(store, encoded.symbols[j], &dx);
            dh = dh_prev;
            dc = dc_prev;
        }

        if let Some(cell) = &self.backward_cell {
            let (mut dh, mut dc) = (d_summary.to_vec(), vec![0.0; hs]);
            for k in (0..n).rev() {
                let pos = n - 1 - k;
                add_assign(&mut dh, &d_states[pos]);
                let (dx, dh_prev, dc_prev) = cell.backward(store, &cache.backward[k], &dh, &dc);
                self.embedding.backward(store, encoded.symbols[pos], &dx);
                dh = dh_prev;
                dc = dc_prev;
            }
        }
    }
}
