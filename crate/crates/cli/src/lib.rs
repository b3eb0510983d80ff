//! Command-line front end for the devlang harness.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use devlang_core::config::ExperimentConfig;
use devlang_core::data::{synth_task, DatasetManifest, SplitPaths, SynthConfig, TaskFormat};
use devlang_core::models::{gradcheck_architecture, ModelKind};
use devlang_core::orchestrator::{
    run_experiment, run_language, write_json, write_manifest, ModelTrainer, Protocol,
};
use devlang_core::report::{
    compare_with_published, ingest_fixture, render_table, summarize, write_reports, LanguageResult,
    PublishedColumn, PUBLISHED_MORPH, PUBLISHED_NORM, PUBLISHED_TRANSL,
};
use devlang_core::stopping::TargetEpoch;
use devlang_core::Error;

#[derive(Debug, Parser)]
#[command(name = "devlang", version, about = "DevSet vs DevLang early-stopping experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one language once, optionally up to a given target epoch.
    Train(TrainArgs),
    /// Run both protocol phases and write reports.
    RunExperiment(ExperimentArgs),
    /// Recompute the summary table from per-language result fixtures.
    ReplicateTables(ReplicateArgs),
    /// Finite-difference check of one architecture on a micro instance.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic multi-language task to disk.
    SynthData(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// key=value override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Replaces seeds.base.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replaces output.dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long)]
    pub language: String,
    #[arg(long)]
    pub target_epoch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[arg(long, default_value = "fixtures/norm.csv")]
    pub norm: PathBuf,
    #[arg(long, default_value = "fixtures/transl.csv")]
    pub transl: PathBuf,
    #[arg(long, default_value = "fixtures/morph.csv")]
    pub morph: PathBuf,
    /// Also write per-task reports under this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(value_parser = parse_kind)]
    pub architecture: ModelKind,
    #[arg(long, default_value_t = 50)]
    pub probes: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub languages: usize,
    #[arg(long, default_value_t = 100)]
    pub train: usize,
    #[arg(long, default_value_t = 50)]
    pub dev: usize,
    #[arg(long, default_value_t = 50)]
    pub test: usize,
    #[arg(long, default_value_t = 2)]
    pub complexity: usize,
    /// Attach feature bundles (written in the inflection format).
    #[arg(long)]
    pub features: bool,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Core(e) => match e {
                Error::Config(_) => 2,
                Error::Data { .. } | Error::Io { .. } => 3,
                Error::Training(_) | Error::Model(_) | Error::Checkpoint(_) => 4,
                Error::PhaseOneAborted(_) => 5,
            },
        }
    }
}

pub type CliResult = Result<(), CliError>;

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Train(args) => cmd_train(&args, out),
        Command::RunExperiment(args) => cmd_run_experiment(&args, out),
        Command::ReplicateTables(args) => cmd_replicate_tables(&args, out),
        Command::Gradcheck(args) => cmd_gradcheck(&args, out),
        Command::SynthData(args) => cmd_synth_data(&args, out),
    }
}

fn echo(out: &mut dyn Write, text: &str) -> CliResult {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e).into())
}

pub fn load_config(args: &ExperimentArgs) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(&args.config, &args.overrides)?;
    if let Some(seed) = args.seed {
        config.seeds.base = seed;
    }
    if let Some(dir) = &args.out {
        config.output.dir = dir.clone();
    }
    Ok(config)
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> CliResult {
    let config = load_config(&args.experiment)?;
    if !config.languages.names.contains(&args.language) {
        return Err(Error::config(format!("language `{}` is not in [languages]", args.language)).into());
    }
    if args.target_epoch == Some(0) {
        return Err(Error::config("--target-epoch must be at least 1").into());
    }
    let datasets = config.load_datasets()?;
    let trainer = ModelTrainer::new(config.model_config(), datasets);
    let protocol = Protocol::from_config(&config, args.experiment.workers);
    let root = &config.output.dir;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let target = args.target_epoch.map(|epoch| TargetEpoch {
        epoch,
        raw_mean: epoch as f64,
    });
    let record = run_language(&trainer, &protocol, &args.language, target, Some(root));
    let path = root.join(format!("train-{}.json", args.language));
    write_json(&path, &record)?;
    write_manifest(root, None)?;
    if let Some(e) = &record.error {
        return Err(Error::Training(format!("{}: {e}", args.language)).into());
    }
    let mut text = format!("{}: {} epochs, seed {}\n", record.language, record.trace.len(), record.seed);
    for (name, sel) in [("DevSet", &record.devset), ("DevLang", &record.devlang)] {
        if let Some(s) = sel {
            text += &format!(
                "  {name}: epoch {}, dev {:.4}, test {:.4}\n",
                s.epoch, s.dev_accuracy, s.test_accuracy
            );
        }
    }
    text += &format!("record: {}\n", path.display());
    echo(out, &text)
}

pub fn cmd_run_experiment(args: &ExperimentArgs, out: &mut dyn Write) -> CliResult {
    let config = load_config(args)?;
    let outcome = run_experiment(&config, args.workers)?;
    let failed: Vec<&str> = outcome
        .records
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| r.language.as_str())
        .collect();
    let task = config.task.name.to_string().to_uppercase();
    let mut text = render_table(&[(task.as_str(), &outcome.summary)], false);
    if !failed.is_empty() {
        text += &format!("failed languages: {}\n", failed.join(", "));
    }
    echo(out, &text)
}

fn column(path: &Path, published: &PublishedColumn, tolerance: f64, out: &mut dyn Write) -> Result<(Vec<LanguageResult>, Vec<String>), CliError> {
    let results = ingest_fixture(path)?;
    let mut issues = Vec::new();
    if results.len() != published.rows {
        echo(
            out,
            &format!(
                "warning: {} has {} rows, expected {}; skipping the published-value check\n",
                path.display(),
                results.len(),
                published.rows
            ),
        )?;
    } else {
        let summary = summarize(&results)?;
        issues = compare_with_published(&summary, published, tolerance)
            .into_iter()
            .map(|i| format!("{}: {i}", published.task))
            .collect();
    }
    Ok((results, issues))
}

pub fn cmd_replicate_tables(args: &ReplicateArgs, out: &mut dyn Write) -> CliResult {
    let tasks = [
        (&args.morph, &PUBLISHED_MORPH, 0.1),
        (&args.norm, &PUBLISHED_NORM, 0.0),
        (&args.transl, &PUBLISHED_TRANSL, 0.0),
    ];
    let mut columns = Vec::new();
    let mut issues = Vec::new();
    for (path, published, tol) in tasks {
        let (results, mut found) = column(path, published, tol, out)?;
        issues.append(&mut found);
        columns.push((published.task, results));
    }
    let summaries = columns
        .iter()
        .map(|(task, results)| Ok((*task, summarize(results)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let refs: Vec<(&str, &_)> = summaries.iter().map(|(t, s)| (*t, s)).collect();
    echo(out, &render_table(&refs, false))?;
    if let Some(dir) = &args.out {
        for ((task, results), (_, summary)) in columns.iter().zip(&summaries) {
            write_reports(&dir.join(task.to_lowercase()), summary, results)?;
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(issues.join("\n")))
    }
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> CliResult {
    let report = gradcheck_architecture(args.architecture, args.probes, args.seed)?;
    let width = report.groups.iter().map(|g| g.parameter.len()).max().unwrap_or(0);
    let mut text = String::new();
    for g in &report.groups {
        let verdict = if g.max_relative_error <= args.tolerance { "ok" } else { "FAIL" };
        text += &format!(
            "{:width$}  probes {:>3}  max rel err {:.3e}  {verdict}\n",
            g.parameter, g.probes, g.max_relative_error
        );
    }
    text += &format!("{}: worst {:.3e}\n", args.architecture, report.max_relative_error);
    echo(out, &text)?;
    if report.passes(args.tolerance) {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "{}: relative error {:.3e} above {:.1e}",
            args.architecture, report.max_relative_error, args.tolerance
        )))
    }
}

pub fn cmd_synth_data(args: &SynthArgs, out: &mut dyn Write) -> CliResult {
    let config = SynthConfig {
        seed: args.seed,
        language_count: args.languages,
        train_size: args.train,
        dev_size: args.dev,
        test_size: args.test,
        rule_complexity: args.complexity,
        features: args.features,
    };
    let sets = synth_task(&config)?;
    let format = if args.features { TaskFormat::Sigmorphon } else { TaskFormat::Norm };
    let mut manifest = DatasetManifest {
        languages: BTreeMap::new(),
    };
    for set in &sets {
        let dir = args.out.join(&set.language);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (split, examples) in [("train", &set.train), ("dev", &set.dev), ("test", &set.test)] {
            let path = dir.join(format!("{split}.tsv"));
            std::fs::write(&path, format.render(examples)).map_err(|e| Error::io(&path, e))?;
        }
        let rel = |split: &str| PathBuf::from(&set.language).join(format!("{split}.tsv"));
        manifest.languages.insert(
            set.language.clone(),
            SplitPaths {
                train: rel("train"),
                dev: rel("dev"),
                test: rel("test"),
            },
        );
    }
    let path = args.out.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| Error::data("manifest", e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    echo(
        out,
        &format!("wrote {} languages ({format}) and {}\n", sets.len(), path.display()),
    )
}
