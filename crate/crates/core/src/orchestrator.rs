//! Two-phase protocol: tune an epoch count on development languages, then
//! train every language once and keep both the dev-set-selected and the
//! target-epoch checkpoint from that single run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::data::{mix_seed, SplitDataset};
use crate::error::{Error, Result};
use crate::models::{evaluate_accuracy, train_epoch, EncodedExample, Model, ModelConfig};
use crate::report::{summarize, write_reports, LanguageResult, SummaryTable};
use crate::stopping::{
    devlang_epoch, loo_best_epochs, Decision, Rounding, StoppingPolicy, TargetEpoch,
    TrainingTrace,
};

pub const PHASE_ONE: u64 = 1;
pub const PHASE_TWO: u64 = 2;

/// FNV-1a; stable across platforms and releases.
fn language_hash(language: &str) -> u64 {
    language
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Seed of one run: derived from the base seed, the phase and the language.
pub fn run_seed(base: u64, phase: u64, language: &str) -> u64 {
    mix_seed(mix_seed(base, phase), language_hash(language))
}

/// One training run for one language.
pub trait Session {
    type Snapshot: Send;

    /// Trains epoch `epoch` (1-based) and returns dev accuracy after it.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
    fn test_accuracy(&self, snapshot: &Self::Snapshot) -> Result<f64>;
    fn save(&self, snapshot: &Self::Snapshot, path: &Path) -> Result<()>;
}

/// Creates fresh seeded sessions.
pub trait Trainer: Sync {
    type Session: Session;

    fn start(&self, language: &str, seed: u64) -> Result<Self::Session>;
}

/// What the protocol needs to know, independent of how data is loaded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Protocol {
    pub languages: Vec<String>,
    pub dev_languages: Vec<String>,
    pub policy: StoppingPolicy,
    pub rounding: Rounding,
    pub base_seed: u64,
    pub workers: usize,
}

impl Protocol {
    pub fn from_config(config: &ExperimentConfig, workers: usize) -> Self {
        Protocol {
            languages: config.languages.names.clone(),
            dev_languages: config.dev_languages.names.clone(),
            policy: config.policy(),
            rounding: config.task.rounding,
            base_seed: config.seeds.base,
            workers: workers.max(1),
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .map_err(|e| Error::config(format!("worker pool: {e}")))
    }
}

/// Result of training one session under a policy.
pub struct RunOutcome<S> {
    pub trace: TrainingTrace,
    pub policy_stop: usize,
    pub devset_epoch: usize,
    pub devset: S,
    pub target: Option<(usize, S)>,
}

/// Trains until the policy stops and, if given, `target` epochs are covered.
/// The dev-set selection only considers epochs up to the policy's stop.
pub fn execute_run<S: Session>(
    session: &mut S,
    policy: &StoppingPolicy,
    target: Option<usize>,
) -> Result<RunOutcome<S::Snapshot>> {
    let mut trace = TrainingTrace::new();
    let mut policy_stop = None;
    let mut best: Option<(usize, f64, S::Snapshot)> = None;
    let mut at_target = None;
    let fixed = matches!(policy, StoppingPolicy::FixedEpoch { .. });
    loop {
        let epoch = trace.len() + 1;
        let acc = session.train_epoch(epoch)?;
        trace.push(acc)?;
        if policy_stop.is_none() && (fixed || best.as_ref().is_none_or(|b| acc > b.1)) {
            best = Some((epoch, acc, session.snapshot()));
        }
        if target == Some(epoch) {
            at_target = Some((epoch, session.snapshot()));
        }
        if policy_stop.is_none() && policy.decide(&trace) == Decision::Stop {
            policy_stop = Some(epoch);
        }
        if let Some(stop) = policy_stop {
            if epoch >= stop.max(target.unwrap_or(0)) {
                break;
            }
        }
    }
    let (devset_epoch, _, devset) = best.expect("at least one epoch trained");
    debug_assert_eq!(policy.selected_epoch(&trace), Some(devset_epoch));
    Ok(RunOutcome {
        trace,
        policy_stop: policy_stop.expect("loop exits after stop"),
        devset_epoch,
        devset,
        target: at_target,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOneResult {
    pub best_epochs: BTreeMap<String, usize>,
    pub seeds: BTreeMap<String, u64>,
    pub traces: BTreeMap<String, TrainingTrace>,
}

/// Trains each development language under the policy and records its best
/// epoch. Models are dropped; any failure aborts the phase.
pub fn run_phase_one<T: Trainer>(trainer: &T, protocol: &Protocol) -> Result<PhaseOneResult> {
    let runs: Vec<(String, u64, Result<RunOutcome<_>>)> = protocol.pool()?.install(|| {
        protocol
            .dev_languages
            .par_iter()
            .map(|lang| {
                let seed = run_seed(protocol.base_seed, PHASE_ONE, lang);
                log::info!("phase one: {lang} (seed {seed})");
                let outcome = trainer
                    .start(lang, seed)
                    .and_then(|mut s| execute_run(&mut s, &protocol.policy, None));
                (lang.clone(), seed, outcome)
            })
            .collect()
    });
    let mut result = PhaseOneResult {
        best_epochs: BTreeMap::new(),
        seeds: BTreeMap::new(),
        traces: BTreeMap::new(),
    };
    for (lang, seed, outcome) in runs {
        let outcome = outcome.map_err(|e| Error::PhaseOneAborted(format!("{lang}: {e}")))?;
        log::info!("phase one: {lang} best epoch {}", outcome.devset_epoch);
        result.best_epochs.insert(lang.clone(), outcome.devset_epoch);
        result.seeds.insert(lang.clone(), seed);
        result.traces.insert(lang, outcome.trace);
    }
    Ok(result)
}

/// Target epoch per language: the rounded mean over the other development
/// languages' best epochs.
pub fn compute_target_epochs(
    phase_one: &PhaseOneResult,
    languages: &[String],
    rounding: Rounding,
) -> Result<BTreeMap<String, TargetEpoch>> {
    languages
        .iter()
        .map(|lang| {
            let epochs = loo_best_epochs(&phase_one.best_epochs, lang)?;
            Ok((lang.clone(), devlang_epoch(&epochs, rounding)?))
        })
        .collect()
}

/// A retained checkpoint and its accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub epoch: usize,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub language: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetEpoch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_stop_epoch: Option<usize>,
    pub trace: TrainingTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub devset: Option<Selection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub devlang: Option<Selection>,
}

impl RunRecord {
    fn new(language: &str, seed: u64, target: Option<TargetEpoch>) -> Self {
        RunRecord {
            language: language.to_string(),
            seed,
            target,
            error: None,
            policy_stop_epoch: None,
            trace: TrainingTrace::new(),
            devset: None,
            devlang: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.error.is_none() && self.devset.is_some() && (self.target.is_none() || self.devlang.is_some())
    }

    pub fn language_result(&self) -> Option<LanguageResult> {
        let (ds, dl) = (self.devset.as_ref()?, self.devlang.as_ref()?);
        Some(LanguageResult {
            language: self.language.clone(),
            devset_acc: ds.test_accuracy,
            devset_epoch: ds.epoch as f64,
            devlang_acc: dl.test_accuracy,
            devlang_epoch: dl.epoch as f64,
        })
    }
}

fn relative(path: &Path, root: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

/// One phase-two run. Checkpoints go to `<root>/checkpoints/<language>/`
/// when `root` is given.
pub fn run_language<T: Trainer>(
    trainer: &T,
    protocol: &Protocol,
    language: &str,
    target: Option<TargetEpoch>,
    root: Option<&Path>,
) -> RunRecord {
    let seed = run_seed(protocol.base_seed, PHASE_TWO, language);
    let mut record = RunRecord::new(language, seed, target);
    if let Err(e) = fill_record(trainer, protocol, root, &mut record) {
        log::warn!("phase two: {language} failed: {e}");
        record.error = Some(e.to_string());
    }
    record
}

fn fill_record<T: Trainer>(
    trainer: &T,
    protocol: &Protocol,
    root: Option<&Path>,
    record: &mut RunRecord,
) -> Result<()> {
    log::info!("phase two: {} (seed {})", record.language, record.seed);
    let mut session = trainer.start(&record.language, record.seed)?;
    let target = record.target.map(|t| t.epoch);
    let outcome = execute_run(&mut session, &protocol.policy, target)?;
    record.trace = outcome.trace;
    record.policy_stop_epoch = Some(outcome.policy_stop);
    let dir = root.map(|r| r.join("checkpoints").join(&record.language));
    if let Some(d) = &dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut keep = |name: &str, epoch: usize, snapshot: &<T::Session as Session>::Snapshot| -> Result<Selection> {
        let checkpoint = match (&dir, root) {
            (Some(d), Some(r)) => {
                let path = d.join(format!("{name}-e{epoch}.ckpt"));
                session.save(snapshot, &path)?;
                let reference = relative(&path, r);
                record.trace.set_checkpoint(epoch, reference.clone());
                Some(reference)
            }
            _ => None,
        };
        Ok(Selection {
            epoch,
            dev_accuracy: record.trace.accuracy_at(epoch).unwrap_or(0.0),
            test_accuracy: session.test_accuracy(snapshot)?,
            checkpoint,
        })
    };
    let devset = keep("devset", outcome.devset_epoch, &outcome.devset)?;
    let devlang = match &outcome.target {
        Some((epoch, snapshot)) => Some(keep("devlang", *epoch, snapshot)?),
        None => None,
    };
    record.devset = Some(devset);
    record.devlang = devlang;
    Ok(())
}

/// Trains every language once with a fresh seed, keeping both selections.
/// Failures are recorded per language and do not stop the others.
pub fn run_phase_two<T: Trainer>(
    trainer: &T,
    protocol: &Protocol,
    targets: &BTreeMap<String, TargetEpoch>,
    root: Option<&Path>,
) -> Result<Vec<RunRecord>> {
    let records = protocol.pool()?.install(|| {
        protocol
            .languages
            .par_iter()
            .map(|lang| match targets.get(lang) {
                Some(t) => run_language(trainer, protocol, lang, Some(*t), root),
                None => RunRecord {
                    error: Some(format!("no target epoch for {lang}")),
                    ..RunRecord::new(lang, run_seed(protocol.base_seed, PHASE_TWO, lang), None)
                },
            })
            .collect()
    });
    Ok(records)
}

/// Sessions over real models and datasets.
pub struct ModelTrainer {
    config: ModelConfig,
    datasets: BTreeMap<String, Arc<SplitDataset>>,
}

impl ModelTrainer {
    pub fn new(config: ModelConfig, datasets: Vec<SplitDataset>) -> Self {
        ModelTrainer {
            config,
            datasets: datasets
                .into_iter()
                .map(|d| (d.language.clone(), Arc::new(d)))
                .collect(),
        }
    }
}

pub struct ModelSession {
    model: Model,
    data: Arc<SplitDataset>,
    train: Vec<EncodedExample>,
    seed: u64,
}

impl ModelSession {
    pub fn model(&self) -> &Model {
        &self.model
    }

    fn with_values(&self, values: &[Vec<f64>]) -> Result<Model> {
        let mut model = self.model.clone();
        model.store.restore_values(values)?;
        Ok(model)
    }
}

impl Session for ModelSession {
    type Snapshot = Vec<Vec<f64>>;

    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        let stats = train_epoch(&mut self.model, &self.train, mix_seed(self.seed, epoch as u64))?;
        log::debug!(
            "{} epoch {epoch}: loss {:.4}, unknown features {}",
            self.data.language,
            stats.mean_loss,
            stats.unknown_features
        );
        evaluate_accuracy(&self.model, &self.data.dev)
    }

    fn snapshot(&self) -> Self::Snapshot {
        self.model.store.snapshot_values()
    }

    fn test_accuracy(&self, snapshot: &Self::Snapshot) -> Result<f64> {
        evaluate_accuracy(&self.with_values(snapshot)?, &self.data.test)
    }

    fn save(&self, snapshot: &Self::Snapshot, path: &Path) -> Result<()> {
        self.with_values(snapshot)?.save_checkpoint(path)
    }
}

impl Trainer for ModelTrainer {
    type Session = ModelSession;

    fn start(&self, language: &str, seed: u64) -> Result<ModelSession> {
        let data = self
            .datasets
            .get(language)
            .cloned()
            .ok_or_else(|| Error::config(format!("no dataset for language `{language}`")))?;
        if data.train.is_empty() {
            return Err(Error::data(language, "empty training split"));
        }
        let model = Model::new(self.config.clone(), &data.train, seed)?;
        let train = model.encode_all(&data.train);
        Ok(ModelSession {
            model,
            data,
            train,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<Artifact>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Hashes every file under `root` except the manifest itself and writes
/// `manifest.json`.
pub fn write_manifest(root: &Path, error: Option<&Error>) -> Result<Manifest> {
    let mut files = Vec::new();
    collect_files(root, &mut files).map_err(|e| Error::io(root, e))?;
    let mut artifacts = Vec::new();
    for f in files {
        let path = relative(&f, root);
        if path == "manifest.json" {
            continue;
        }
        let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
        artifacts.push(Artifact {
            path,
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len() as u64,
        });
    }
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        complete: error.is_none(),
        error: error.map(ToString::to_string),
        artifacts,
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::data(path.display().to_string(), e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: SummaryTable,
    pub records: Vec<RunRecord>,
    pub manifest: Manifest,
}

#[derive(Serialize)]
struct PhaseOneFile<'a> {
    #[serde(flatten)]
    result: &'a PhaseOneResult,
    targets: &'a BTreeMap<String, TargetEpoch>,
}

/// Runs both phases with `trainer` and writes all artifacts under `root`.
pub fn run_protocol<T: Trainer>(trainer: &T, protocol: &Protocol, root: &Path) -> Result<ExperimentOutcome> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    match run_protocol_inner(trainer, protocol, root) {
        Ok((summary, records)) => {
            let manifest = write_manifest(root, None)?;
            Ok(ExperimentOutcome {
                summary,
                records,
                manifest,
            })
        }
        Err(e) => {
            write_manifest(root, Some(&e))?;
            Err(e)
        }
    }
}

fn run_protocol_inner<T: Trainer>(
    trainer: &T,
    protocol: &Protocol,
    root: &Path,
) -> Result<(SummaryTable, Vec<RunRecord>)> {
    let phase_one = run_phase_one(trainer, protocol)?;
    let targets = compute_target_epochs(&phase_one, &protocol.languages, protocol.rounding)?;
    write_json(
        &root.join("phase_one.json"),
        &PhaseOneFile {
            result: &phase_one,
            targets: &targets,
        },
    )?;
    let records = run_phase_two(trainer, protocol, &targets, Some(root))?;
    write_json(&root.join("records.json"), &records)?;
    let results: Vec<LanguageResult> = records.iter().filter_map(RunRecord::language_result).collect();
    if results.is_empty() {
        return Err(Error::Training("every phase-two run failed".into()));
    }
    let summary = summarize(&results)?;
    write_reports(root, &summary, &results)?;
    Ok((summary, records))
}

/// Loads data for `config` and runs the full protocol into its output
/// directory.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<ExperimentOutcome> {
    let root = config.output.dir.clone();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let datasets = match config.load_datasets() {
        Ok(d) => d,
        Err(e) => {
            write_manifest(&root, Some(&e))?;
            return Err(e);
        }
    };
    let trainer = ModelTrainer::new(config.model_config(), datasets);
    run_protocol(&trainer, &Protocol::from_config(config, workers), &root)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Session replaying a fixed dev-accuracy curve; snapshots are epochs.
    struct Replay {
        curve: Vec<f64>,
        epoch: usize,
        fail_at: Option<usize>,
    }

    impl Session for Replay {
        type Snapshot = usize;

        fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
            if self.fail_at == Some(epoch) {
                return Err(Error::Training(format!("diverged at {epoch}")));
            }
            self.epoch = epoch;
            Ok(*self.curve.get(epoch - 1).unwrap_or(&0.0))
        }

        fn snapshot(&self) -> usize {
            self.epoch
        }

        fn test_accuracy(&self, s: &usize) -> Result<f64> {
            Ok(*s as f64 / 1000.0)
        }

        fn save(&self, s: &usize, path: &Path) -> Result<()> {
            std::fs::write(path, s.to_string()).map_err(|e| Error::io(path, e))
        }
    }

    struct Peaks(BTreeMap<String, usize>, Option<String>);

    fn peaked(peak: usize, len: usize) -> Vec<f64> {
        (1..=len)
            .map(|e| 0.9 - (e as f64 - peak as f64).abs() * 0.01)
            .collect()
    }

    impl Trainer for Peaks {
        type Session = Replay;

        fn start(&self, language: &str, _seed: u64) -> Result<Replay> {
            Ok(Replay {
                curve: peaked(self.0[language], 200),
                epoch: 0,
                fail_at: (self.1.as_deref() == Some(language)).then_some(3),
            })
        }
    }

    fn protocol(langs: &[&str], dev: &[&str]) -> Protocol {
        Protocol {
            languages: langs.iter().map(|s| s.to_string()).collect(),
            dev_languages: dev.iter().map(|s| s.to_string()).collect(),
            policy: StoppingPolicy::BestOfBudget { budget: 30 },
            rounding: Rounding::default(),
            base_seed: 3,
            workers: 2,
        }
    }

    fn peaks(list: &[(&str, usize)]) -> Peaks {
        Peaks(list.iter().map(|(l, e)| (l.to_string(), *e)).collect(), None)
    }

    #[test]
    fn seeds_differ_by_phase_and_language() {
        assert_ne!(run_seed(1, PHASE_ONE, "L1"), run_seed(1, PHASE_TWO, "L1"));
        assert_ne!(run_seed(1, PHASE_TWO, "L1"), run_seed(1, PHASE_TWO, "L2"));
        assert_eq!(run_seed(1, PHASE_TWO, "L1"), run_seed(1, PHASE_TWO, "L1"));
    }

    #[test]
    fn phase_one_records_best_epochs() {
        let t = peaks(&[("L1", 14), ("L2", 18), ("L3", 19)]);
        let p = protocol(&["L1", "L2", "L3"], &["L1", "L2"]);
        let r = run_phase_one(&t, &p).unwrap();
        assert_eq!(r.best_epochs, [("L1".to_string(), 14), ("L2".to_string(), 18)].into());
        assert_eq!(r, run_phase_one(&t, &p).unwrap());
        let single = run_phase_one(&t, &protocol(&["L1", "L3"], &["L1"])).unwrap();
        assert_eq!(single.best_epochs.len(), 1);
    }

    #[test]
    fn phase_one_failure_aborts() {
        let mut t = peaks(&[("L1", 14), ("L2", 18)]);
        t.1 = Some("L2".into());
        let err = run_phase_one(&t, &protocol(&["L1", "L2"], &["L1", "L2"])).unwrap_err();
        assert!(matches!(err, Error::PhaseOneAborted(m) if m.starts_with("L2")));
    }

    #[test]
    fn target_epochs_leave_one_out() {
        let t = peaks(&[("L1", 14), ("L2", 18), ("L3", 19)]);
        let p = protocol(&["L1", "L2", "L3"], &["L1", "L2"]);
        let one = run_phase_one(&t, &p).unwrap();
        let targets = compute_target_epochs(&one, &p.languages, p.rounding).unwrap();
        assert_eq!(targets["L3"].epoch, 16);
        assert_eq!(targets["L1"].epoch, 18);
        assert_eq!(targets["L2"].epoch, 14);
    }

    #[test]
    fn phase_two_keeps_both_selections_and_extends() {
        let t = peaks(&[("L1", 14), ("L2", 18), ("L3", 19)]);
        let mut p = protocol(&["L1", "L2", "L3"], &["L1", "L2"]);
        p.policy = StoppingPolicy::BestOfBudget { budget: 10 };
        let targets: BTreeMap<String, TargetEpoch> = [(
            "L3".to_string(),
            TargetEpoch {
                epoch: 16,
                raw_mean: 16.0,
            },
        )]
        .into();
        let records = run_phase_two(&t, &p, &targets, None).unwrap();
        let l3 = records.iter().find(|r| r.language == "L3").unwrap();
        assert_eq!(l3.trace.len(), 16);
        assert_eq!(l3.policy_stop_epoch, Some(10));
        assert_eq!(l3.devset.as_ref().unwrap().epoch, 10);
        assert_eq!(l3.devlang.as_ref().unwrap().epoch, 16);
        assert!(records.iter().filter(|r| r.language != "L3").all(|r| r.error.is_some()));
    }

    #[test]
    fn phase_two_failure_is_recorded_and_others_continue() {
        let mut t = peaks(&[("L1", 5), ("L2", 6)]);
        t.1 = Some("L1".into());
        let p = protocol(&["L1", "L2"], &["L1", "L2"]);
        let targets: BTreeMap<String, TargetEpoch> = ["L1", "L2"]
            .iter()
            .map(|l| (l.to_string(), TargetEpoch { epoch: 5, raw_mean: 5.0 }))
            .collect();
        let records = run_phase_two(&t, &p, &targets, None).unwrap();
        assert!(records[0].error.as_deref().unwrap().contains("diverged"));
        assert!(records[1].is_complete());
    }

    #[test]
    fn equal_epochs_give_identical_accuracies() {
        let t = peaks(&[("L1", 12)]);
        let p = protocol(&["L1"], &["L1"]);
        let r = run_language(&t, &p, "L1", Some(TargetEpoch { epoch: 12, raw_mean: 12.0 }), None);
        let res = r.language_result().unwrap();
        assert_eq!(res.devset_acc, res.devlang_acc);
    }
}
