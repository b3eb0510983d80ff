//! Experiment configuration file and `key=value` overrides.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{synth_task, DatasetManifest, SplitDataset, SynthConfig, TaskFormat};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind};
use crate::numkernel::AdamConfig;
use crate::stopping::{Rounding, StoppingPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskName {
    Norm,
    Morph,
    Transl,
}

impl TaskName {
    pub fn default_model(self) -> ModelKind {
        match self {
            TaskName::Norm => ModelKind::AttentionSeq2Seq,
            TaskName::Morph => ModelKind::PointerGenerator,
            TaskName::Transl => ModelKind::HardMonotonic,
        }
    }

    pub fn default_policy(self) -> StoppingPolicy {
        match self {
            TaskName::Norm => StoppingPolicy::BestOfBudget { budget: 50 },
            TaskName::Morph => StoppingPolicy::Patience {
                min_epochs: 300,
                window: 100,
            },
            TaskName::Transl => StoppingPolicy::BestOfBudget { budget: 20 },
        }
    }

    pub fn default_format(self) -> TaskFormat {
        match self {
            TaskName::Norm => TaskFormat::Norm,
            TaskName::Morph => TaskFormat::Sigmorphon,
            TaskName::Transl => TaskFormat::Translit,
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskName::Norm => "norm",
            TaskName::Morph => "morph",
            TaskName::Transl => "transl",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    #[serde(default = "SyntheticSection::default_seed")]
    pub seed: u64,
    #[serde(default = "SyntheticSection::default_train")]
    pub train_size: usize,
    #[serde(default = "SyntheticSection::default_eval")]
    pub dev_size: usize,
    #[serde(default = "SyntheticSection::default_eval")]
    pub test_size: usize,
    #[serde(default = "SyntheticSection::default_complexity")]
    pub rule_complexity: usize,
    /// Defaults to on for the morph task.
    #[serde(default)]
    pub features: Option<bool>,
}

impl SyntheticSection {
    fn default_seed() -> u64 {
        7
    }
    fn default_train() -> usize {
        100
    }
    fn default_eval() -> usize {
        50
    }
    fn default_complexity() -> usize {
        2
    }
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            seed: Self::default_seed(),
            train_size: Self::default_train(),
            dev_size: Self::default_eval(),
            test_size: Self::default_eval(),
            rule_complexity: Self::default_complexity(),
            features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub name: TaskName,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<TaskFormat>,
    #[serde(default)]
    pub synthetic: SyntheticSection,
    #[serde(default)]
    pub rounding: Rounding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageList {
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ModelKind>,
    #[serde(default = "ModelSection::default_hidden")]
    pub hidden: usize,
    #[serde(default = "ModelSection::default_embedding")]
    pub embedding: usize,
    #[serde(default = "ModelSection::default_bidirectional")]
    pub bidirectional: bool,
    #[serde(default)]
    pub optimizer: AdamConfig,
}

impl ModelSection {
    fn default_hidden() -> usize {
        64
    }
    fn default_embedding() -> usize {
        32
    }
    fn default_bidirectional() -> bool {
        true
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: None,
            hidden: Self::default_hidden(),
            embedding: Self::default_embedding(),
            bidirectional: Self::default_bidirectional(),
            optimizer: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    #[serde(default)]
    pub base: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSection,
    pub languages: LanguageList,
    #[serde(rename = "dev-languages")]
    pub dev_languages: LanguageList,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<StoppingPolicy>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub seeds: SeedSection,
    #[serde(default)]
    pub output: OutputSection,
}

const POLICY_KEYS: [&str; 5] = [
    "policy.kind",
    "policy.budget",
    "policy.min_epochs",
    "policy.window",
    "policy.epoch",
];

fn leaf_keys(prefix: &str, table: &toml::Table, out: &mut BTreeSet<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => leaf_keys(&key, t, out),
            _ => {
                out.insert(key);
            }
        }
    }
}

/// Dotted keys that `--set` may assign.
pub fn known_keys() -> BTreeSet<String> {
    let template = ExperimentConfig {
        task: TaskSection {
            name: TaskName::Norm,
            data: DataSource::Manifest,
            manifest: Some(PathBuf::new()),
            format: Some(TaskFormat::Norm),
            synthetic: SyntheticSection {
                features: Some(false),
                ..SyntheticSection::default()
            },
            rounding: Rounding::default(),
        },
        languages: LanguageList { names: vec![] },
        dev_languages: LanguageList { names: vec![] },
        policy: None,
        model: ModelSection {
            kind: Some(ModelKind::AttentionSeq2Seq),
            ..ModelSection::default()
        },
        seeds: SeedSection::default(),
        output: OutputSection::default(),
    };
    let table = toml::Table::try_from(&template).expect("config template serializes");
    let mut keys = BTreeSet::new();
    leaf_keys("", &table, &mut keys);
    keys.extend(POLICY_KEYS.iter().map(|k| k.to_string()));
    keys
}

fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `key=value` assignments to a parsed config table. Unknown keys
/// are rejected before anything is changed.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    let known = known_keys();
    let mut parsed = Vec::with_capacity(overrides.len());
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{o}` is not key=value")))?;
        let key = key.trim();
        if !known.contains(key) {
            return Err(Error::config(format!("unknown config key `{key}`")));
        }
        parsed.push((key.to_string(), parse_override_value(value.trim())));
    }
    for (key, value) in parsed {
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut *table;
        for part in &parts[..parts.len() - 1] {
            node = node
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::config(format!("`{part}` is not a section")))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses a config, applies overrides, resolves relative paths against
    /// the file's directory and validates the result.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(m) = &config.task.manifest {
            config.task.manifest = Some(base.join(m));
        }
        config.output.dir = base.join(&config.output.dir);
        Ok(config)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::config(format!("config: {}", e.message())))?;
        apply_overrides(&mut table, overrides)?;
        let config: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let langs = &self.languages.names;
        if langs.is_empty() {
            return Err(Error::config("[languages] names is empty"));
        }
        let mut seen = HashSet::new();
        if let Some(d) = langs.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::config(format!("language `{d}` listed twice")));
        }
        let dev = &self.dev_languages.names;
        if dev.is_empty() {
            return Err(Error::config("[dev-languages] names is empty"));
        }
        if let Some(d) = dev.iter().find(|d| !seen.contains(d.as_str())) {
            return Err(Error::config(format!("development language `{d}` is not in [languages]")));
        }
        let mut dev_seen = HashSet::new();
        if let Some(d) = dev.iter().find(|l| !dev_seen.insert(l.as_str())) {
            return Err(Error::config(format!("development language `{d}` listed twice")));
        }
        if dev.len() == 1 {
            // Its own target epoch would average over nothing.
            return Err(Error::config(
                "a development language that is also a target needs at least one other development language",
            ));
        }
        self.policy().validate()?;
        self.model_config().validate()?;
        if self.task.data == DataSource::Manifest && self.task.manifest.is_none() {
            return Err(Error::config("task.data = \"manifest\" needs task.manifest"));
        }
        Ok(())
    }

    pub fn policy(&self) -> StoppingPolicy {
        self.policy.unwrap_or_else(|| self.task.name.default_policy())
    }

    pub fn format(&self) -> TaskFormat {
        self.task.format.unwrap_or_else(|| self.task.name.default_format())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            kind: self.model.kind.unwrap_or_else(|| self.task.name.default_model()),
            hidden: self.model.hidden,
            embedding: self.model.embedding,
            bidirectional: self.model.bidirectional,
            optimizer: self.model.optimizer,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.task.synthetic;
        SynthConfig {
            seed: s.seed,
            language_count: self.languages.names.len(),
            train_size: s.train_size,
            dev_size: s.dev_size,
            test_size: s.test_size,
            rule_complexity: s.rule_complexity,
            features: s.features.unwrap_or(self.task.name == TaskName::Morph),
        }
    }

    /// Loads every configured language, in configuration order, and checks
    /// that all training sets have the same size.
    pub fn load_datasets(&self) -> Result<Vec<SplitDataset>> {
        let datasets = match self.task.data {
            DataSource::Synthetic => {
                let mut sets = synth_task(&self.synth_config())?;
                for (set, name) in sets.iter_mut().zip(&self.languages.names) {
                    set.language = name.clone();
                }
                sets
            }
            DataSource::Manifest => {
                let path = self.task.manifest.as_deref().expect("validated");
                let manifest = DatasetManifest::load(path)?;
                let task = self.task.name.to_string();
                self.languages
                    .names
                    .iter()
                    .map(|l| manifest.load_language(l, &task, self.format()))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        if let Some(first) = datasets.first() {
            if let Some(other) = datasets.iter().find(|d| d.train.len() != first.train.len()) {
                return Err(Error::data(
                    other.language.clone(),
                    format!(
                        "training set has {} examples but {} has {}; languages must be the same size",
                        other.train.len(),
                        first.language,
                        first.train.len()
                    ),
                ));
            }
        }
        Ok(datasets)
    }
}
