//! Task file formats, vocabularies and the synthetic multi-language generator.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// One source sequence with one or more acceptable outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransductionExample {
    /// `file:line` (or a synthetic tag) for diagnostics.
    pub id: String,
    pub source: Vec<String>,
    pub targets: Vec<Vec<String>>,
    pub features: Vec<String>,
}

impl TransductionExample {
    pub fn new(id: impl Into<String>, source: &str, target: &str, features: Vec<String>) -> Self {
        TransductionExample {
            id: id.into(),
            source: chars(source),
            targets: vec![chars(target)],
            features,
        }
    }

    pub fn source_text(&self) -> String {
        self.source.concat()
    }

    pub fn is_correct(&self, prediction: &[String]) -> bool {
        self.targets.iter().any(|t| t.as_slice() == prediction)
    }
}

pub fn chars(s: &str) -> Vec<String> {
    s.chars().map(String::from).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub language: String,
    pub task: String,
    pub train: Vec<TransductionExample>,
    pub dev: Vec<TransductionExample>,
    pub test: Vec<TransductionExample>,
}

impl SplitDataset {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.dev.len(), self.test.len())
    }
}

/// Which side of the examples a vocabulary is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
    /// Source and target characters share one table (needed for copying).
    Both,
    Features,
}

/// Symbol ↔ index bijection with PAD, BOS, EOS, UNK fixed at 0..=3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_symbols<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = symbols
            .into_iter()
            .map(Into::into)
            .filter(|s| !RESERVED.contains(&s.as_str()))
            .collect();
        let symbols: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(sorted)
            .collect();
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocabulary { symbols, index }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.index.contains_key(symbol)
    }

    pub fn index_of(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, symbols: &[String]) -> Vec<usize> {
        symbols.iter().map(|s| self.index_of(s)).collect()
    }

    pub fn symbol(&self, index: usize) -> &str {
        self.symbols.get(index).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.symbol(i).to_string()).collect()
    }

    /// Hex SHA-256 over the symbol table, used to tie checkpoints to vocabularies.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.symbols {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn build_vocab(examples: &[TransductionExample], side: Side) -> Vocabulary {
    let mut seen = BTreeSet::new();
    for ex in examples {
        match side {
            Side::Source => seen.extend(ex.source.iter().cloned()),
            Side::Target => seen.extend(ex.targets.iter().flatten().cloned()),
            Side::Both => {
                seen.extend(ex.source.iter().cloned());
                seen.extend(ex.targets.iter().flatten().cloned());
            }
            Side::Features => seen.extend(ex.features.iter().cloned()),
        }
    }
    Vocabulary::from_symbols(seen)
}

/// On-disk layout of a task's data files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFormat {
    /// `historical<TAB>normalized`
    Norm,
    /// `lemma<TAB>form<TAB>F1;F2;...`
    Sigmorphon,
    /// `source<TAB>target`, consecutive equal sources merge into one example.
    Translit,
}

impl fmt::Display for TaskFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskFormat::Norm => "norm",
            TaskFormat::Sigmorphon => "sigmorphon",
            TaskFormat::Translit => "translit",
        })
    }
}

impl TaskFormat {
    pub fn load(self, path: &Path) -> Result<Vec<TransductionExample>> {
        match self {
            TaskFormat::Norm => load_norm(path),
            TaskFormat::Sigmorphon => load_sigmorphon(path),
            TaskFormat::Translit => load_translit(path),
        }
    }

    pub fn render(self, examples: &[TransductionExample]) -> String {
        let mut out = String::new();
        for ex in examples {
            let src = ex.source_text();
            match self {
                TaskFormat::Norm => {
                    out.push_str(&format!("{src}\t{}\n", ex.targets[0].concat()));
                }
                TaskFormat::Sigmorphon => {
                    out.push_str(&format!(
                        "{src}\t{}\t{}\n",
                        ex.targets[0].concat(),
                        ex.features.join(";")
                    ));
                }
                TaskFormat::Translit => {
                    for t in &ex.targets {
                        out.push_str(&format!("{src}\t{}\n", t.concat()));
                    }
                }
            }
        }
        out
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(Error::data(path.display().to_string(), "file contains no examples"));
    }
    Ok(lines)
}

fn split_fields<'a>(
    path: &Path,
    line_no: usize,
    line: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != expected {
        return Err(Error::data(
            format!("{}:{line_no}", path.display()),
            format!("expected {expected} tab-separated fields, found {}", fields.len()),
        ));
    }
    if let Some(pos) = fields.iter().take(2).position(|f| f.is_empty()) {
        return Err(Error::data(
            format!("{}:{line_no}", path.display()),
            format!("field {} is empty", pos + 1),
        ));
    }
    Ok(fields)
}

pub fn load_norm(path: &Path) -> Result<Vec<TransductionExample>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let f = split_fields(path, n, &line, 2)?;
            Ok(TransductionExample::new(
                format!("{}:{n}", path.display()),
                f[0],
                f[1],
                Vec::new(),
            ))
        })
        .collect()
}

pub fn load_sigmorphon(path: &Path) -> Result<Vec<TransductionExample>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let f = split_fields(path, n, &line, 3)?;
            let features: Vec<String> = f[2]
                .split(';')
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect();
            if features.is_empty() {
                return Err(Error::data(
                    format!("{}:{n}", path.display()),
                    "missing feature bundle",
                ));
            }
            Ok(TransductionExample::new(
                format!("{}:{n}", path.display()),
                f[0],
                f[1],
                features,
            ))
        })
        .collect()
}

pub fn load_translit(path: &Path) -> Result<Vec<TransductionExample>> {
    let mut out: Vec<TransductionExample> = Vec::new();
    for (n, line) in read_lines(path)? {
        let f = split_fields(path, n, &line, 2)?;
        let source = chars(f[0]);
        match out.last_mut() {
            Some(prev) if prev.source == source => {
                let t = chars(f[1]);
                if !prev.targets.contains(&t) {
                    prev.targets.push(t);
                }
            }
            _ => out.push(TransductionExample::new(
                format!("{}:{n}", path.display()),
                f[0],
                f[1],
                Vec::new(),
            )),
        }
    }
    Ok(out)
}

/// Train/dev/test file locations for one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub languages: BTreeMap<String, SplitPaths>,
}

impl DatasetManifest {
    /// Reads a TOML manifest; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = toml::from_str(&text)
            .map_err(|e| Error::data(path.display().to_string(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for paths in manifest.languages.values_mut() {
            for p in [&mut paths.train, &mut paths.dev, &mut paths.test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(manifest)
    }

    pub fn load_language(&self, language: &str, task: &str, format: TaskFormat) -> Result<SplitDataset> {
        let paths = self.languages.get(language).ok_or_else(|| {
            Error::config(format!("language `{language}` not listed in the dataset manifest"))
        })?;
        for p in [&paths.train, &paths.dev, &paths.test] {
            if !p.exists() {
                return Err(Error::data(p.display().to_string(), "dataset file not found"));
            }
        }
        Ok(SplitDataset {
            language: language.to_string(),
            task: task.to_string(),
            train: format.load(&paths.train)?,
            dev: format.load(&paths.dev)?,
            test: format.load(&paths.test)?,
        })
    }
}

/// Parameters of the synthetic task generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub language_count: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    /// Number of character substitution rules per language; suffix rules
    /// scale with it as well.
    pub rule_complexity: usize,
    /// Attach a morphological feature bundle that selects the suffix rule.
    #[serde(default)]
    pub features: bool,
}

const SYNTH_ALPHABET: &[char] = &['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'k', 'l', 'm'];
const SYNTH_BUNDLES: &[&[&str]] = &[&["V", "PST"], &["V", "PRS"], &["N", "PL"], &["ADJ", "CMPR"]];
const SYNTH_MIN_LEN: usize = 3;
const SYNTH_MAX_LEN: usize = 6;

/// A seeded string-rewriting "language".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteSystem {
    /// Applied character by character.
    pub substitutions: BTreeMap<char, char>,
    /// `(trigger final char, suffix)` rules for feature-free tasks.
    pub suffix_rules: Vec<(char, String)>,
    /// Suffix per feature bundle index, for feature-bearing tasks.
    pub bundle_suffixes: Vec<String>,
}

impl RewriteSystem {
    fn generate(rng: &mut ChaCha8Rng, complexity: usize) -> Self {
        let mut letters = SYNTH_ALPHABET.to_vec();
        letters.shuffle(rng);
        let substitutions = letters
            .iter()
            .take(complexity.min(letters.len()))
            .map(|&c| {
                let mut to = c;
                while to == c {
                    to = *SYNTH_ALPHABET.choose(rng).unwrap();
                }
                (c, to)
            })
            .collect();
        let random_suffix = |rng: &mut ChaCha8Rng| -> String {
            let len = rng.gen_range(1..=2);
            (0..len).map(|_| *SYNTH_ALPHABET.choose(rng).unwrap()).collect()
        };
        let mut triggers = SYNTH_ALPHABET.to_vec();
        triggers.shuffle(rng);
        let suffix_rules = triggers
            .iter()
            .take(complexity.max(1).min(triggers.len()))
            .map(|&c| (c, random_suffix(rng)))
            .collect();
        let bundle_suffixes = SYNTH_BUNDLES.iter().map(|_| random_suffix(rng)).collect();
        RewriteSystem {
            substitutions,
            suffix_rules,
            bundle_suffixes,
        }
    }

    pub fn apply(&self, word: &str, bundle: Option<usize>) -> String {
        let mut out: String = word
            .chars()
            .map(|c| *self.substitutions.get(&c).unwrap_or(&c))
            .collect();
        match bundle {
            Some(b) => out.push_str(&self.bundle_suffixes[b]),
            None => {
                let last = word.chars().last();
                if let Some((_, suffix)) = self.suffix_rules.iter().find(|(t, _)| Some(*t) == last) {
                    out.push_str(suffix);
                }
            }
        }
        out
    }
}

/// Derives an independent stream seed; splitmix64 finalizer.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The rewrite system of every synthetic language, pairwise distinct.
pub fn synth_rewrite_systems(config: &SynthConfig) -> Vec<RewriteSystem> {
    let mut systems: Vec<RewriteSystem> = Vec::new();
    for lang in 0..config.language_count {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, lang as u64 + 1));
        let mut system = RewriteSystem::generate(&mut rng, config.rule_complexity);
        while systems.contains(&system) {
            system = RewriteSystem::generate(&mut rng, config.rule_complexity);
        }
        systems.push(system);
    }
    systems
}

/// Generates `language_count` languages named `L1..Ln`, each with its own
/// rewrite system and equal-size, mutually disjoint splits.
pub fn synth_task(config: &SynthConfig) -> Result<Vec<SplitDataset>> {
    if config.language_count < 2 {
        return Err(Error::config("synthetic task needs at least 2 languages"));
    }
    if config.train_size == 0 || config.dev_size == 0 || config.test_size == 0 {
        return Err(Error::config("synthetic split sizes must be at least 1"));
    }
    let task = if config.features { "synthetic-morph" } else { "synthetic" };
    let systems = synth_rewrite_systems(config);
    let mut out = Vec::new();
    for (lang, system) in systems.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed ^ 0x5EED_DA7A, lang as u64 + 1));
        let total = config.train_size + config.dev_size + config.test_size;
        let mut seen = HashSet::new();
        let mut examples = Vec::with_capacity(total);
        while examples.len() < total {
            let len = rng.gen_range(SYNTH_MIN_LEN..=SYNTH_MAX_LEN);
            let word: String = (0..len)
                .map(|_| *SYNTH_ALPHABET.choose(&mut rng).unwrap())
                .collect();
            let bundle = config
                .features
                .then(|| rng.gen_range(0..SYNTH_BUNDLES.len()));
            if !seen.insert((word.clone(), bundle)) {
                continue;
            }
            let target = system.apply(&word, bundle);
            let features = bundle
                .map(|b| SYNTH_BUNDLES[b].iter().map(|s| s.to_string()).collect())
                .unwrap_or_default();
            let id = format!("L{}#{}", lang + 1, examples.len());
            examples.push(TransductionExample::new(id, &word, &target, features));
        }
        let test = examples.split_off(config.train_size + config.dev_size);
        let dev = examples.split_off(config.train_size);
        out.push(SplitDataset {
            language: format!("L{}", lang + 1),
            task: task.to_string(),
            train: examples,
            dev,
            test,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file_with(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn norm_line_is_character_level() {
        let f = file_with("vnd\tund\n");
        let ex = load_norm(f.path()).unwrap();
        assert_eq!(ex[0].source, chars("vnd"));
        assert_eq!(ex[0].targets, vec![chars("und")]);
        assert!(ex[0].features.is_empty());
    }

    #[test]
    fn norm_counts_and_errors() {
        let f = file_with("a\tb\nc\td\ne\tf\n");
        assert_eq!(load_norm(f.path()).unwrap().len(), 3);

        let f = file_with("");
        assert!(matches!(load_norm(f.path()), Err(Error::Data { .. })));

        let f = file_with("ok\tfine\nbroken line\n");
        let err = load_norm(f.path()).unwrap_err();
        assert!(err.to_string().contains(":2"), "{err}");
    }

    #[test]
    fn sigmorphon_fields() {
        let f = file_with("run\tran\tV;PST\nrun\tran\tV;PST\ngo\tgoes\tV\n");
        let ex = load_sigmorphon(f.path()).unwrap();
        assert_eq!(ex.len(), 3, "duplicates are kept");
        assert_eq!(ex[0].source, chars("run"));
        assert_eq!(ex[0].targets[0], chars("ran"));
        assert_eq!(ex[0].features, vec!["V", "PST"]);
        assert_eq!(ex[2].features.len(), 1);

        let f = file_with("run\tran\n");
        let err = load_sigmorphon(f.path()).unwrap_err();
        assert!(err.to_string().contains(":1"));
    }

    #[test]
    fn translit_merges_consecutive_sources() {
        let f = file_with("X\tA\nX\tB\nY\tC\n");
        let ex = load_translit(f.path()).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].targets, vec![chars("A"), chars("B")]);
        assert!(ex[0].is_correct(&chars("B")));
        assert!(!ex[0].is_correct(&chars("C")));
        assert_eq!(ex[1].targets.len(), 1);
    }

    #[test]
    fn vocab_is_sorted_after_reserved() {
        let ex = vec![
            TransductionExample::new("1", "ab", "x", vec![]),
            TransductionExample::new("2", "ba", "y", vec![]),
        ];
        let v = build_vocab(&ex, Side::Source);
        assert_eq!(v.len(), 6);
        assert_eq!(v.index_of("a"), 4);
        assert_eq!(v.index_of("b"), 5);
        assert_eq!(v.decode(&v.encode(&chars("ab"))), chars("ab"));
        assert_eq!(v.index_of("z"), UNK);
        assert_eq!(v.symbol(EOS), "</s>");
        let t = build_vocab(&ex, Side::Target);
        assert_ne!(v.hash(), t.hash());
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        for split in ["train", "dev", "test"] {
            std::fs::write(dir.path().join(format!("{split}.tsv")), "ab\tba\n").unwrap();
        }
        let manifest = dir.path().join("manifest.toml");
        std::fs::write(
            &manifest,
            "[languages.x]\ntrain = \"train.tsv\"\ndev = \"dev.tsv\"\ntest = \"test.tsv\"\n",
        )
        .unwrap();
        let m = DatasetManifest::load(&manifest).unwrap();
        let ds = m.load_language("x", "norm", TaskFormat::Norm).unwrap();
        assert_eq!(ds.counts(), (1, 1, 1));
        assert!(matches!(
            m.load_language("y", "norm", TaskFormat::Norm),
            Err(Error::Config(_))
        ));
    }

    fn synth(seed: u64, features: bool) -> Vec<SplitDataset> {
        synth_task(&SynthConfig {
            seed,
            language_count: 4,
            train_size: 30,
            dev_size: 10,
            test_size: 10,
            rule_complexity: 2,
            features,
        })
        .unwrap()
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth(9, false);
        assert_eq!(a, synth(9, false));
        assert_ne!(a, synth(10, false));
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|d| d.counts() == (30, 10, 10)));
        for d in &a {
            let mut sources = HashSet::new();
            for ex in d.train.iter().chain(&d.dev).chain(&d.test) {
                assert!(sources.insert(ex.source_text()), "splits overlap");
            }
        }
    }

    #[test]
    fn synth_languages_differ() {
        let cfg = SynthConfig {
            seed: 3,
            language_count: 4,
            train_size: 1,
            dev_size: 1,
            test_size: 1,
            rule_complexity: 1,
            features: false,
        };
        let systems = synth_rewrite_systems(&cfg);
        for i in 0..systems.len() {
            for j in i + 1..systems.len() {
                assert_ne!(systems[i], systems[j]);
            }
        }
        let data = synth_task(&cfg).unwrap();
        let ex = &data[2].train[0];
        assert_eq!(ex.targets[0].concat(), systems[2].apply(&ex.source_text(), None));
    }

    #[test]
    fn synth_features_round_trip_through_sigmorphon_format() {
        let a = synth(5, true);
        assert!(a[0].train.iter().all(|e| !e.features.is_empty()));
        let f = file_with(&TaskFormat::Sigmorphon.render(&a[0].train));
        assert_eq!(load_sigmorphon(f.path()).unwrap().len(), a[0].train.len());
    }

    #[test]
    fn synth_rejects_bad_sizes() {
        let mut cfg = SynthConfig {
            seed: 0,
            language_count: 1,
            train_size: 1,
            dev_size: 1,
            test_size: 1,
            rule_complexity: 1,
            features: false,
        };
        assert!(synth_task(&cfg).is_err());
        cfg.language_count = 2;
        cfg.dev_size = 0;
        assert!(synth_task(&cfg).is_err());
    }
}
