//! Command implementations behind the binary: corpus generation,
//! training, evaluation, and hyperparameter sweeps.
//!
//! Every command validates its whole configuration before the first side
//! effect, so a config error never leaves partial outputs behind. Errors
//! carry an exit class: 1 usage/config, 2 data, 3 numeric failure.

pub mod config;
pub mod sweep;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    apply_features, generate_corpus, imbalance_stats, load_features, load_manifest, save_features,
    save_manifest, CorpusError, Dataset, ImbalanceStats,
};
use crate::eval::{
    per_class_report, predict_by_object, render_report_table, report_records,
    score_responses_by_object, EvalError, EvalReport, ReportRecord,
};
use crate::grpo::{self, expected_malformed_rate, GrpoError};
use crate::policy::CheckpointData;
use crate::rewards::RewardError;

pub use config::{InitMode, ResolvedConfig, RunConfig, ScaleDefect};
pub use sweep::{cmd_sweep, GridSpec, SweepRow, SweepSummary};

/// Exit class of a command failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliErrorKind {
    /// Bad invocation or configuration (exit code 1).
    Usage,
    /// Bad or missing data files (exit code 2).
    Data,
    /// Non-finite or out-of-range numerics (exit code 3).
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    kind: CliErrorKind,
    message: String,
}

impl CliError {
    pub fn new(kind: CliErrorKind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError::new(CliErrorKind::Usage, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError::new(CliErrorKind::Data, message)
    }

    pub fn kind(&self) -> CliErrorKind {
        self.kind
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            CliErrorKind::Usage => 1,
            CliErrorKind::Data => 2,
            CliErrorKind::Numeric => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

/// Classify a training-time error: non-finite numerics get exit class 3,
/// everything else is a data problem.
pub(crate) fn classify_grpo(err: GrpoError) -> CliError {
    let kind = match &err {
        GrpoError::NonFiniteGradient => CliErrorKind::Numeric,
        GrpoError::Reward(RewardError::NonFiniteComponent(_))
        | GrpoError::Reward(RewardError::ProbabilityOutOfRange(_)) => CliErrorKind::Numeric,
        _ => CliErrorKind::Data,
    };
    CliError::new(kind, err.to_string())
}

fn data_err(err: impl fmt::Display) -> CliError {
    CliError::data(err.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|err| CliError::data(format!("cannot write {}: {err}", path.display())))
}

/// Load and parse a run config file.
pub fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|err| CliError::usage(format!("cannot read config {}: {err}", path.display())))?;
    RunConfig::from_toml(&text)
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const FEATURES_FILE: &str = "features.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint_final.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const REPORT_RECORDS_FILE: &str = "report.jsonl";

#[derive(Debug, Clone)]
pub struct GenCorpusSummary {
    pub stats: ImbalanceStats,
    pub size: usize,
    pub manifest_path: PathBuf,
    pub features_path: PathBuf,
}

impl fmt::Display for GenCorpusSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "wrote {} samples to {}", self.size, self.manifest_path.display())?;
        writeln!(f, "features: {}", self.features_path.display())?;
        write!(f, "{}", self.stats)
    }
}

/// Generate the configured corpus and write manifest plus feature sidecar.
pub fn cmd_gen_corpus(config: &RunConfig, out: &Path) -> Result<GenCorpusSummary, CliError> {
    let resolved = config.resolve()?;
    let dataset = generate_corpus(&resolved.corpus)
        .map_err(|err| CliError::usage(format!("corpus config: {err}")))?;
    let stats = imbalance_stats(&dataset);

    fs::create_dir_all(out)
        .map_err(|err| CliError::data(format!("cannot create {}: {err}", out.display())))?;
    let manifest_path = out.join(MANIFEST_FILE);
    let features_path = out.join(FEATURES_FILE);
    save_manifest(&dataset, &manifest_path).map_err(data_err)?;
    save_features(&dataset, &features_path).map_err(data_err)?;

    Ok(GenCorpusSummary {
        stats,
        size: dataset.len(),
        manifest_path,
        features_path,
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_malformed_rate: f64,
    pub mean_reward_last_step: f64,
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "trained {} steps", self.steps)?;
        writeln!(
            f,
            "expected malformed rate: {:.2}%",
            self.final_malformed_rate * 100.0
        )?;
        writeln!(f, "log: {}", self.log_path.display())?;
        write!(f, "final checkpoint: {}", self.checkpoint_path.display())
    }
}

/// Train on the configured corpus; write the log and the final checkpoint.
pub fn cmd_train(config: &RunConfig, out: &Path) -> Result<TrainSummary, CliError> {
    let resolved = config.resolve()?;
    let dataset = generate_corpus(&resolved.corpus)
        .map_err(|err| CliError::usage(format!("corpus config: {err}")))?;
    let stats = imbalance_stats(&dataset);
    let reward_cfg = resolved.reward_config(&stats)?;
    let initial = resolved.initial_policy();

    let mut rng = ChaCha8Rng::seed_from_u64(resolved.grpo.seed);
    let run = grpo::train(&initial, &dataset, &reward_cfg, &resolved.grpo, &mut rng)
        .map_err(classify_grpo)?;
    let malformed = expected_malformed_rate(&run.params, &dataset).map_err(classify_grpo)?;

    fs::create_dir_all(out)
        .map_err(|err| CliError::data(format!("cannot create {}: {err}", out.display())))?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let checkpoint_path = out.join(CHECKPOINT_FILE);
    write_file(&log_path, &run.log.to_jsonl())?;
    let checkpoint = CheckpointData::from_params(&run.params);
    let mut checkpoint_json =
        serde_json::to_string(&checkpoint).expect("checkpoint serializes");
    checkpoint_json.push('\n');
    write_file(&checkpoint_path, &checkpoint_json)?;

    let last_step = run.log.steps().last().expect("at least one step");
    Ok(TrainSummary {
        steps: last_step.step,
        final_malformed_rate: malformed,
        mean_reward_last_step: last_step.mean_reward,
        log_path,
        checkpoint_path,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Table,
    Records,
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    /// Checkpoint to predict with; mutually exclusive with `responses`.
    pub checkpoint: Option<PathBuf>,
    /// Raw response file to score; mutually exclusive with `checkpoint`.
    pub responses: Option<PathBuf>,
    /// Manifest with ground-truth labels.
    pub dataset: PathBuf,
    /// Feature sidecar; defaults to `features.bin` next to the manifest.
    pub features: Option<PathBuf>,
    pub out: PathBuf,
    pub format: OutputFormat,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: EvalReport,
    pub records: Vec<ReportRecord>,
    pub table: String,
    pub warnings: Vec<String>,
    pub table_path: PathBuf,
    pub records_path: PathBuf,
}

impl EvalSummary {
    pub fn rendered(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Table => self.table.clone(),
            OutputFormat::Records => {
                let mut out = String::new();
                for record in &self.records {
                    out.push_str(&serde_json::to_string(record).expect("record serializes"));
                    out.push('\n');
                }
                out
            }
        }
    }
}

/// One line of a response file: a sample id and the raw emission text.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseRecord {
    sample_id: String,
    response: String,
}

fn load_responses(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|err| CliError::data(format!("cannot read responses {}: {err}", path.display())))?;
    let mut responses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ResponseRecord = serde_json::from_str(line).map_err(|err| {
            CliError::data(format!("responses line {}: {err}", i + 1))
        })?;
        responses.push((record.sample_id, record.response));
    }
    Ok(responses)
}

fn load_checkpoint(path: &Path) -> Result<crate::policy::PolicyParams, CliError> {
    let text = fs::read_to_string(path).map_err(|err| {
        CliError::data(format!("cannot read checkpoint {}: {err}", path.display()))
    })?;
    let data: CheckpointData = serde_json::from_str(text.trim())
        .map_err(|err| CliError::data(format!("checkpoint {}: {err}", path.display())))?;
    data.into_params()
        .map_err(|err| CliError::data(format!("checkpoint {}: {err}", path.display())))
}

fn classify_eval(err: EvalError) -> CliError {
    CliError::data(err.to_string())
}

fn classify_corpus(err: CorpusError) -> CliError {
    CliError::data(err.to_string())
}

/// Score a dataset, either by predicting with a checkpoint or by parsing
/// an external response file; write table and record reports.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalSummary, CliError> {
    match (&args.checkpoint, &args.responses) {
        (Some(_), Some(_)) => {
            return Err(CliError::usage(
                "pass either a checkpoint or a response file, not both",
            ))
        }
        (None, None) => {
            return Err(CliError::usage(
                "one of --checkpoint or --responses is required",
            ))
        }
        _ => {}
    }

    let loaded = load_manifest(&args.dataset).map_err(classify_corpus)?;
    let mut dataset = loaded.dataset;
    let warnings = loaded.warnings;
    if dataset.is_empty() {
        return Err(CliError::data(format!(
            "dataset {} has no samples",
            args.dataset.display()
        )));
    }

    let grouped = if let Some(responses_path) = &args.responses {
        let responses = load_responses(responses_path)?;
        score_responses_by_object(&responses, &dataset).map_err(classify_eval)?
    } else {
        let checkpoint = load_checkpoint(args.checkpoint.as_ref().expect("checked above"))?;
        attach_features(&mut dataset, args)?;
        predict_by_object(&checkpoint, &dataset).map_err(classify_eval)?
    };

    let report = per_class_report(&grouped).map_err(classify_eval)?;
    let records = report_records(&grouped).map_err(classify_eval)?;
    let table = render_report_table(&report);

    fs::create_dir_all(&args.out)
        .map_err(|err| CliError::data(format!("cannot create {}: {err}", args.out.display())))?;
    let table_path = args.out.join(REPORT_TABLE_FILE);
    let records_path = args.out.join(REPORT_RECORDS_FILE);
    write_file(&table_path, &table)?;
    let mut records_text = String::new();
    for record in &records {
        records_text.push_str(&serde_json::to_string(record).expect("record serializes"));
        records_text.push('\n');
    }
    write_file(&records_path, &records_text)?;

    Ok(EvalSummary {
        report,
        records,
        table,
        warnings,
        table_path,
        records_path,
    })
}

/// Attach sidecar features when the manifest samples carry none.
fn attach_features(dataset: &mut Dataset, args: &EvalArgs) -> Result<(), CliError> {
    if dataset.iter().all(|s| !s.features.is_empty()) {
        return Ok(());
    }
    let sidecar = args.features.clone().unwrap_or_else(|| {
        args.dataset
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(FEATURES_FILE)
    });
    let table = load_features(&sidecar).map_err(|err| {
        CliError::data(format!(
            "prediction needs features; cannot load {}: {err}",
            sidecar.display()
        ))
    })?;
    apply_features(dataset, &table).map_err(classify_corpus)
}
