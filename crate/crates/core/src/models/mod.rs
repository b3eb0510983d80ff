//! The three transduction architectures behind one model contract.

pub mod attention;
pub mod encoder;
pub mod hard_monotonic;
pub mod pointer;
pub mod seq2seq;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_vocab, Side, TransductionExample, Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::numkernel::{adam_update, gradient_check, AdamConfig, GradCheckReport, ParameterStore};

pub use attention::{soft_attention, AdditiveAttention, AttentionResult};
pub use encoder::{EncodedSource, RecurrentEncoder};
pub use hard_monotonic::{lcs_alignment, oracle_actions, Action, HardMonotonic, MonotonicDecode};
pub use pointer::{pg_mixture, PointerGenerator};
pub use seq2seq::AttentionSeq2Seq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[serde(rename = "attention-seq2seq")]
    AttentionSeq2Seq,
    PointerGenerator,
    HardMonotonic,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::AttentionSeq2Seq,
        ModelKind::PointerGenerator,
        ModelKind::HardMonotonic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::AttentionSeq2Seq => "attention-seq2seq",
            ModelKind::PointerGenerator => "pointer-generator",
            ModelKind::HardMonotonic => "hard-monotonic",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown architecture `{s}`")))
    }
}

fn default_hidden() -> usize {
    64
}

fn default_embedding() -> usize {
    32
}

fn default_true() -> bool {
    true
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_embedding")]
    pub embedding: usize,
    #[serde(default = "default_true")]
    pub bidirectional: bool,
    #[serde(default)]
    pub optimizer: AdamConfig,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            hidden: default_hidden(),
            embedding: default_embedding(),
            bidirectional: true,
            optimizer: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embedding == 0 {
            return Err(Error::config("model hidden and embedding sizes must be positive"));
        }
        if self.optimizer.step_size.is_nan() || self.optimizer.step_size < 0.0 {
            return Err(Error::config("optimizer step size must be non-negative"));
        }
        Ok(())
    }
}

/// Vocabularies a model was built with. For the pointer-generator the
/// source and target tables are the same joint table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelVocab {
    pub source: Vocabulary,
    pub target: Vocabulary,
    pub features: Vocabulary,
}

impl ModelVocab {
    pub fn build(kind: ModelKind, train: &[TransductionExample]) -> Self {
        let features = build_vocab(train, Side::Features);
        match kind {
            ModelKind::PointerGenerator => {
                let joint = build_vocab(train, Side::Both);
                ModelVocab {
                    source: joint.clone(),
                    target: joint,
                    features,
                }
            }
            _ => ModelVocab {
                source: build_vocab(train, Side::Source),
                target: build_vocab(train, Side::Target),
                features,
            },
        }
    }
}

/// An example mapped to vocabulary indices, with a single reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub id: String,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub features: Vec<usize>,
    /// LCS alignment of each target position to a source position.
    pub alignment: Vec<Option<usize>>,
    pub unknown_features: usize,
}

/// What every architecture provides to the training loop.
pub trait Architecture: fmt::Debug + Send + Sync {
    fn kind(&self) -> ModelKind;

    /// Summed per-step cross-entropy of the example's reference.
    fn loss(&self, store: &ParameterStore, ex: &EncodedExample) -> Result<f64>;

    /// Same as [`Architecture::loss`], also accumulating gradients.
    fn loss_and_grad(&self, store: &mut ParameterStore, ex: &EncodedExample) -> Result<f64>;

    /// Greedy decode of at most `max_len` output symbols.
    fn decode(
        &self,
        store: &ParameterStore,
        source: &[usize],
        features: &[usize],
        max_len: usize,
    ) -> Result<Vec<usize>>;

    fn as_hard_monotonic(&self) -> Option<&HardMonotonic> {
        None
    }
}

/// Index of the largest entry; the lowest index wins ties. NaN entries are skipped.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Decoding budget for a source of `source_len` symbols.
pub fn max_decode_len(source_len: usize) -> usize {
    2 * source_len + 8
}

/// A trained or untrained transducer: architecture, parameters, vocabularies.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    vocab: ModelVocab,
    pub store: ParameterStore,
    arch: std::sync::Arc<dyn Architecture>,
}

impl Model {
    /// Builds vocabularies from `train` and initializes parameters from `seed`.
    pub fn new(config: ModelConfig, train: &[TransductionExample], seed: u64) -> Result<Self> {
        let vocab = ModelVocab::build(config.kind, train);
        Model::with_vocab(config, vocab, seed)
    }

    pub fn with_vocab(config: ModelConfig, vocab: ModelVocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new(seed);
        let arch: std::sync::Arc<dyn Architecture> = match config.kind {
            ModelKind::AttentionSeq2Seq => std::sync::Arc::new(AttentionSeq2Seq::new(
                &mut store,
                &config,
                vocab.source.len(),
                vocab.target.len(),
            )?),
            ModelKind::PointerGenerator => std::sync::Arc::new(PointerGenerator::new(
                &mut store,
                &config,
                vocab.target.len(),
                vocab.features.len(),
            )?),
            ModelKind::HardMonotonic => std::sync::Arc::new(HardMonotonic::new(
                &mut store,
                &config,
                vocab.source.len(),
                vocab.target.len(),
            )?),
        };
        Ok(Model {
            config,
            vocab,
            store,
            arch,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &ModelVocab {
        &self.vocab
    }

    pub fn architecture(&self) -> &dyn Architecture {
        self.arch.as_ref()
    }

    fn encode_features(&self, ex: &TransductionExample) -> (Vec<usize>, usize) {
        let features = self.vocab.features.encode(&ex.features);
        let unknown = features.iter().filter(|&&f| f == UNK).count();
        (features, unknown)
    }

    /// One encoded training example per reference.
    pub fn encode(&self, ex: &TransductionExample) -> Vec<EncodedExample> {
        let source = self.vocab.source.encode(&ex.source);
        let (features, unknown_features) = self.encode_features(ex);
        ex.targets
            .iter()
            .map(|t| EncodedExample {
                id: ex.id.clone(),
                source: source.clone(),
                target: self.vocab.target.encode(t),
                features: features.clone(),
                alignment: lcs_alignment(&ex.source, t),
                unknown_features,
            })
            .collect()
    }

    pub fn encode_all(&self, examples: &[TransductionExample]) -> Vec<EncodedExample> {
        examples.iter().flat_map(|e| self.encode(e)).collect()
    }

    pub fn loss(&self, ex: &EncodedExample) -> Result<f64> {
        self.arch.loss(&self.store, ex)
    }

    pub fn loss_and_grad(&mut self, ex: &EncodedExample) -> Result<f64> {
        self.arch.loss_and_grad(&mut self.store, ex)
    }

    /// Greedy decode; returns output symbols.
    pub fn greedy_decode(&self, ex: &TransductionExample, max_len: usize) -> Result<Vec<String>> {
        let source = self.vocab.source.encode(&ex.source);
        let (features, _) = self.encode_features(ex);
        let out = self.arch.decode(&self.store, &source, &features, max_len)?;
        Ok(self.vocab.target.decode(&out))
    }

    pub fn predict(&self, ex: &TransductionExample) -> Result<Vec<String>> {
        self.greedy_decode(ex, max_decode_len(ex.source.len()))
    }

    fn checkpoint_metadata(&self) -> BTreeMap<String, String> {
        let mut meta = BTreeMap::new();
        meta.insert("model_kind".into(), self.kind().to_string());
        meta.insert("vocab.source".into(), self.vocab.source.hash());
        meta.insert("vocab.target".into(), self.vocab.target.hash());
        meta.insert("vocab.features".into(), self.vocab.features.hash());
        meta.insert("hidden".into(), self.config.hidden.to_string());
        meta.insert("embedding".into(), self.config.embedding.to_string());
        meta.insert("bidirectional".into(), self.config.bidirectional.to_string());
        meta
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.store
            .write_checkpoint(&mut buf, &self.checkpoint_metadata())
            .map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Loads parameter values saved by a model with the same architecture
    /// and vocabularies.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (stored, meta) = ParameterStore::read_checkpoint(&bytes[..])?;
        let expected = self.checkpoint_metadata();
        if meta != expected {
            let key = expected
                .iter()
                .find(|(k, v)| meta.get(*k) != Some(v))
                .map(|(k, _)| k.clone())
                .unwrap_or_default();
            return Err(Error::Checkpoint(format!(
                "{} does not match this model (`{key}` differs)",
                path.display()
            )));
        }
        if let Some((ours, theirs)) = self.store.iter().zip(stored.iter()).find(|(a, b)| a.name != b.name) {
            return Err(Error::Checkpoint(format!(
                "{} holds `{}` where this model has `{}`",
                path.display(),
                theirs.name,
                ours.name
            )));
        }
        self.store.restore_values(&stored.snapshot_values())?;
        self.store = stored;
        Ok(())
    }
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub updates: usize,
    pub unknown_features: usize,
}

/// One pass over `set` in an order shuffled by `epoch_seed`, one Adam
/// update per example.
pub fn train_epoch(model: &mut Model, set: &[EncodedExample], epoch_seed: u64) -> Result<EpochStats> {
    if set.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    let optimizer = model.config.optimizer;
    let mut total = 0.0;
    let mut unknown = 0;
    for &i in &order {
        let ex = &set[i];
        model.store.zero_grad();
        let loss = model.loss_and_grad(ex)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss on example {}", ex.id)));
        }
        adam_update(&mut model.store, &optimizer)
            .map_err(|e| Error::Training(format!("{e} (example {})", ex.id)))?;
        total += loss;
        unknown += ex.unknown_features;
    }
    Ok(EpochStats {
        mean_loss: total / set.len() as f64,
        updates: set.len(),
        unknown_features: unknown,
    })
}

/// Fraction of examples whose greedy decode equals one of their references.
pub fn evaluate_accuracy(model: &Model, dataset: &[TransductionExample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::data("evaluation", "empty dataset"));
    }
    let mut correct = 0usize;
    for ex in dataset {
        if ex.is_correct(&model.predict(ex)?) {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Small seeded model and example for gradient checking one architecture.
pub fn micro_instance(kind: ModelKind, seed: u64) -> Result<(Model, EncodedExample)> {
    let examples = vec![
        TransductionExample::new("micro#0", "abca", "xbcya", vec!["V".into(), "PST".into()]),
        TransductionExample::new("micro#1", "cab", "cax", vec!["N".into()]),
    ];
    let config = ModelConfig {
        kind,
        hidden: 4,
        embedding: 3,
        bidirectional: true,
        optimizer: AdamConfig::default(),
    };
    let model = Model::new(config, &examples, seed)?;
    let ex = model.encode(&examples[0]).remove(0);
    Ok((model, ex))
}

/// Finite-difference check of an architecture's full loss on its micro instance.
pub fn gradcheck_architecture(kind: ModelKind, probes: usize, seed: u64) -> Result<GradCheckReport> {
    let (mut model, ex) = micro_instance(kind, seed)?;
    let arch = model.arch.clone();
    let mut failure = None;
    let report = gradient_check(
        |store| match arch.loss_and_grad(store, &ex) {
            Ok(l) => l,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        &mut model.store,
        probes,
        seed ^ 0xC0FFEE,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BOS, EOS};

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), Some(1));
        assert_eq!(argmax(&[f64::NAN, 0.2]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn model_kind_round_trips_through_strings() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("transformer".parse::<ModelKind>().is_err());
        for k in ModelKind::ALL {
            let v: ModelKind = serde_json::from_str(&format!("\"{k}\"")).unwrap();
            assert_eq!(v, k);
        }
    }

    #[test]
    fn pointer_generator_shares_one_vocabulary() {
        let ex = vec![TransductionExample::new("1", "ab", "bc", vec!["V".into()])];
        let v = ModelVocab::build(ModelKind::PointerGenerator, &ex);
        assert_eq!(v.source, v.target);
        assert!(v.target.contains("a") && v.target.contains("c"));
        let v = ModelVocab::build(ModelKind::AttentionSeq2Seq, &ex);
        assert!(!v.source.contains("c"));
    }

    #[test]
    fn unknown_features_are_counted() {
        let train = vec![TransductionExample::new("1", "ab", "bc", vec!["V".into()])];
        let model = Model::new(ModelConfig::new(ModelKind::PointerGenerator), &train, 1).unwrap();
        let probe = TransductionExample::new("2", "ab", "bc", vec!["V".into(), "FUT".into()]);
        let enc = model.encode(&probe);
        assert_eq!(enc[0].unknown_features, 1);
        assert_eq!(enc[0].features[1], UNK);
    }

    #[test]
    fn multi_reference_examples_expand() {
        let mut ex = TransductionExample::new("1", "ab", "ba", vec![]);
        ex.targets.push(crate::data::chars("bb"));
        let model = Model::new(ModelConfig::new(ModelKind::HardMonotonic), &[ex.clone()], 1).unwrap();
        assert_eq!(model.encode(&ex).len(), 2);
    }

    #[test]
    fn every_architecture_passes_gradient_check() {
        for kind in ModelKind::ALL {
            let report = gradcheck_architecture(kind, 120, 5).unwrap();
            assert!(report.passes(1e-3), "{kind}: {report:?}");
        }
    }

    fn reversal_set() -> Vec<TransductionExample> {
        ["abc", "bca", "cab", "acb"]
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let rev: String = s.chars().rev().collect();
                TransductionExample::new(format!("t{i}"), s, &rev, vec![])
            })
            .collect()
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let train = reversal_set();
        let run = || {
            let mut m = Model::new(ModelConfig::new(ModelKind::AttentionSeq2Seq), &train, 3).unwrap();
            let set = m.encode_all(&train);
            for e in 0..3 {
                train_epoch(&mut m, &set, e).unwrap();
            }
            m.store.snapshot_values()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_step_size_leaves_parameters_unchanged() {
        let train = reversal_set();
        let mut config = ModelConfig::new(ModelKind::HardMonotonic);
        config.optimizer.step_size = 0.0;
        let mut m = Model::new(config, &train, 3).unwrap();
        let before = m.store.snapshot_values();
        let set = m.encode_all(&train);
        train_epoch(&mut m, &set, 0).unwrap();
        assert_eq!(before, m.store.snapshot_values());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let train = reversal_set();
        let mut m = Model::new(ModelConfig::new(ModelKind::PointerGenerator), &train, 3).unwrap();
        assert!(matches!(train_epoch(&mut m, &[], 0), Err(Error::Training(_))));
    }

    #[test]
    fn rigged_hard_monotonic_writes_then_stops() {
        let train = vec![TransductionExample::new("r", "ab", "x", vec![])];
        let mut config = ModelConfig::new(ModelKind::HardMonotonic);
        config.hidden = 2;
        config.embedding = 2;
        let mut m = Model::new(config, &train, 1).unwrap();
        let x = m.vocab().target.index_of("x");
        let h = 2;
        let names = [
            "decoder.action_embed.table",
            "decoder.lstm.w_ih",
            "decoder.lstm.w_hh",
            "decoder.lstm.bias",
            "output.weight",
            "output.bias",
        ];
        for name in names {
            let id = m.store.id(name).unwrap();
            m.store.get_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
        }
        let set = |m: &mut Model, name: &str, k: usize, v: f64| {
            let id = m.store.id(name).unwrap();
            m.store.get_mut(id).values[k] = v;
        };
        // BOS embeds to +e0 and x to -e0; the cell-candidate gate of unit 0
        // reads e0, so the first hidden unit is positive after BOS and
        // negative after WRITE(x).
        set(&mut m, "decoder.action_embed.table", BOS * 2, 1.0);
        set(&mut m, "decoder.action_embed.table", x * 2, -1.0);
        set(&mut m, "decoder.lstm.w_ih", (2 * h) * (2 + h), 5.0);
        let step = m.architecture().as_hard_monotonic().unwrap().step_action();
        for a in 0..=step {
            set(&mut m, "output.bias", a, -10.0);
        }
        set(&mut m, "output.bias", x, 0.0);
        set(&mut m, "output.bias", EOS, 0.0);
        set(&mut m, "output.weight", x * 2 * h, 10.0);
        set(&mut m, "output.weight", EOS * 2 * h, -10.0);

        let src = m.vocab().source.encode(&train[0].source);
        let hm = m.architecture().as_hard_monotonic().unwrap();
        let d = hm.decode_actions(&m.store, &src, 10).unwrap();
        assert_eq!(d.actions, vec![Action::Write(x), Action::Write(EOS)]);
        assert_eq!(d.trajectory, vec![0, 0, 0]);
        assert!(!d.truncated);
        assert_eq!(m.predict(&train[0]).unwrap(), vec!["x".to_string()]);
    }

    #[test]
    fn monotone_trajectories_on_random_models() {
        use rand::Rng;
        let train = reversal_set();
        let mut config = ModelConfig::new(ModelKind::HardMonotonic);
        config.hidden = 8;
        config.embedding = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..1000u64 {
            let m = Model::new(config.clone(), &train, case).unwrap();
            let n = rng.gen_range(1..7);
            let src: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m.vocab().source.len())).collect();
            let hm = m.architecture().as_hard_monotonic().unwrap();
            let d = hm.decode_actions(&m.store, &src, max_decode_len(n)).unwrap();
            assert!(d.trajectory.windows(2).all(|w| w[0] <= w[1]));
            assert!(d.trajectory.iter().all(|&i| i <= n));
        }
    }
}
