//! Run directories: lock, manifest, append-only trial log, resume, final
//! artifacts and the markdown report. Also the offline entry points behind
//! the `extract`, `evaluate`, `compare` and `cost` subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::{info, warn};

use crate::agents::{extract_all, prompts::template_versions, render_metrics_table, AgentError, ProposerMode};
use crate::config::{ConfigError, DatasetFormat, RunConfig};
use crate::cost::{estimate_cost, reconcile, CostBreakdown, CostParams, Reconciliation};
use crate::ingest::{ingest, read_records, to_examples, Fields, IngestError};
use crate::lm::http::HttpBackend;
use crate::lm::scripted::{ScriptedLm, TranscriptError};
use crate::lm::{whitespace_tokens, CallTag, Gateway, GenerationParams, Message, ModuleRole, RetryPolicy, UsageLedger};
use crate::metrics::cv::assign_folds;
use crate::metrics::{compute_metrics, MetricsBundle, MetricsConfig, MetricsError};
use crate::model::{
    serialize_feature_schema, DatasetSplits, FeatureMatrix, FeatureRow, FeatureSet, FeatureValue, LabeledExample,
    PromptCandidate,
};
use crate::optimizer::{
    best_by, optimize, OptimizeError, OptimizeOutcome, ResumeState, RunObserver, SearchSpace, TrialRecord,
};

pub const MANIFEST: &str = "manifest.json";
pub const TRIALS: &str = "trials.jsonl";
pub const SPACE: &str = "space.json";
pub const BEST: &str = "best_features.json";
pub const REPORT: &str = "report.md";
pub const USAGE: &str = "usage.json";
pub const LOCK: &str = "run.lock";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("endpoint unreachable: {0}")]
    Endpoint(String),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("run directory {0} is locked by another process (remove {LOCK} if it is stale)")]
    Locked(PathBuf),
    #[error("run directory {dir} belongs to a different configuration: {detail}")]
    ManifestMismatch { dir: PathBuf, detail: String },
    #[error("trial log {path} is corrupt at line {line}: {detail}")]
    CorruptLog { path: PathBuf, line: usize, detail: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes via a temporary file and rename so readers never see partial
/// content.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| RunError::CorruptLog {
        path: path.to_path_buf(),
        line: e.line(),
        detail: e.to_string(),
    })
}

/// Exclusive ownership of a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(RunError::Locked(dir.to_path_buf())),
            Err(e) => Err(RunError::Io { path, source: e }),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Result of reading a trial log: complete records plus the line number of a
/// truncated final record, if any.
#[derive(Debug, Clone, Default)]
pub struct TrialLog {
    pub trials: Vec<TrialRecord>,
    pub truncated_line: Option<usize>,
    /// Byte length of the intact prefix.
    pub valid_len: u64,
}

/// Reads `trials.jsonl`. A final line without newline or that fails to parse
/// is reported as truncated; a bad line elsewhere is corruption.
pub fn read_trial_log(path: &Path) -> Result<TrialLog, RunError> {
    let mut log = TrialLog::default();
    if !path.exists() {
        return Ok(log);
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n').enumerate().peekable();
    while let Some((k, raw)) = lines.next() {
        let last = lines.peek().is_none();
        let complete = raw.ends_with('\n');
        match serde_json::from_str::<TrialRecord>(raw.trim_end()) {
            Ok(t) if complete => {
                log.trials.push(t);
                offset += raw.len() as u64;
            }
            result => {
                if last {
                    warn!(path = %path.display(), line = k + 1, "trial log ends with a truncated record");
                    log.truncated_line = Some(k + 1);
                    break;
                }
                let detail = result.err().map_or("missing newline".to_string(), |e| e.to_string());
                return Err(RunError::CorruptLog {
                    path: path.to_path_buf(),
                    line: k + 1,
                    detail,
                });
            }
        }
    }
    log.valid_len = offset;
    Ok(log)
}

/// Winning candidate as persisted in `best_features.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestFeatures {
    pub trial: u64,
    pub candidate: PromptCandidate,
    pub instruction: String,
    pub combined_score: f64,
    pub f1_score: f64,
    pub interpretability_score: f64,
    pub class_names: Vec<String>,
    pub feature_set: FeatureSet,
}

impl BestFeatures {
    pub fn from_trial(t: &TrialRecord, class_names: &[String]) -> Option<Self> {
        Some(Self {
            trial: t.trial,
            candidate: t.candidate,
            instruction: t.instruction.clone(),
            combined_score: t.combined_score?,
            f1_score: t.f1_score?,
            interpretability_score: t.interpretability_score?,
            class_names: class_names.to_vec(),
            feature_set: t.feature_set.clone()?,
        })
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub seed: u64,
    pub mode: ProposerMode,
    pub n_iter: usize,
    pub model_id: String,
    pub templates: BTreeMap<String, String>,
    pub class_names: Vec<String>,
    pub train_ids: Vec<String>,
    pub annotation_ids: Vec<String>,
}

impl Manifest {
    fn compatible_with(&self, other: &Manifest) -> Result<(), String> {
        if self.config != other.config {
            return Err("configuration differs".into());
        }
        if self.templates != other.templates {
            return Err("prompt template versions differ".into());
        }
        if self.train_ids != other.train_ids || self.annotation_ids != other.annotation_ids {
            return Err("dataset splits differ".into());
        }
        Ok(())
    }
}

/// Appends trials and persists the search space as the optimizer advances.
struct DirObserver {
    dir: PathBuf,
    log: File,
}

impl RunObserver for DirObserver {
    fn on_space(&mut self, space: &SearchSpace) -> std::io::Result<()> {
        write_atomic(&self.dir.join(SPACE), &to_json(space)).map_err(std::io::Error::other)
    }

    fn on_trial(&mut self, trial: &TrialRecord) -> std::io::Result<()> {
        let mut line = serde_json::to_string(trial).map_err(std::io::Error::other)?;
        line.push('\n');
        self.log.write_all(line.as_bytes())?;
        self.log.sync_data()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub mode: Option<ProposerMode>,
    pub scripted_lm: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub outcome: OptimizeOutcome,
    pub best: BestFeatures,
    pub resumed_trials: usize,
    pub usage: UsageLedger,
    pub cost: Option<CostBreakdown>,
    pub reconciliation: Reconciliation,
}

/// Loads a config and applies command-line overrides.
pub fn load_config(config_path: &Path, opts: &RunOptions) -> Result<RunConfig, RunError> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    if let Some(mode) = opts.mode {
        config.mode = mode;
    }
    config.validate()?;
    Ok(config)
}

/// Gateway for the configured endpoint, or for a transcript when given.
pub fn build_gateway(config: &RunConfig, scripted_lm: Option<&Path>) -> Result<Gateway, RunError> {
    match scripted_lm {
        Some(path) => Ok(Gateway::new(
            ScriptedLm::from_path(path)?,
            RetryPolicy::immediate(config.max_retries),
            config.max_in_flight,
        )),
        None => {
            let endpoint = config.endpoint(&|k| std::env::var(k).ok())?;
            let backend = HttpBackend::new(endpoint).map_err(|e| RunError::Endpoint(e.to_string()))?;
            let retry = RetryPolicy {
                max_retries: config.max_retries,
                ..RetryPolicy::default()
            };
            Ok(Gateway::new(backend, retry, config.max_in_flight))
        }
    }
}

/// One tiny request to fail fast before anything is written.
pub fn probe_endpoint(gateway: &Gateway) -> Result<(), RunError> {
    gateway
        .complete(
            CallTag::new(ModuleRole::Probe, None),
            &[Message::user("Reply with OK.")],
            &GenerationParams::greedy(4),
        )
        .map(|_| ())
        .map_err(|e| RunError::Endpoint(e.to_string()))
}

fn default_run_dir(config: &RunConfig) -> PathBuf {
    let mode = match config.mode {
        ProposerMode::Reflective => "reflective",
        ProposerMode::ScalarOnly => "scalar",
    };
    PathBuf::from("runs").join(format!("seed{}-{mode}", config.seed))
}

/// Runs (or resumes) a full optimization and writes the run directory.
pub fn run_optimize(config_path: &Path, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let config = load_config(config_path, opts)?;
    let splits = ingest(&config)?;
    let gateway = build_gateway(&config, opts.scripted_lm.as_deref())?;
    if opts.scripted_lm.is_none() {
        probe_endpoint(&gateway)?;
    }
    let dir = opts.run_dir.clone().unwrap_or_else(|| default_run_dir(&config));
    run_in_dir(&dir, &config, &splits, &gateway)
}

/// Optimization against already-built inputs; used by `run_optimize` and
/// by tests that construct their own gateway.
pub fn run_in_dir(dir: &Path, config: &RunConfig, splits: &DatasetSplits, gateway: &Gateway) -> Result<RunSummary, RunError> {
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seed: config.seed,
        mode: config.mode,
        n_iter: config.effective_n_iter(),
        model_id: gateway.model_id().to_string(),
        templates: template_versions()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        class_names: splits.class_names().to_vec(),
        train_ids: splits.train().iter().map(|e| e.id.clone()).collect(),
        annotation_ids: splits.annotation().iter().map(|e| e.id.clone()).collect(),
    };

    let fresh = !dir.join(MANIFEST).exists();
    let created = !dir.exists();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let lock = RunLock::acquire(dir)?;

    let mut resume = ResumeState::default();
    if fresh {
        write_atomic(&dir.join(MANIFEST), &to_json(&manifest))?;
        let _ = fs::remove_file(dir.join(TRIALS));
        let _ = fs::remove_file(dir.join(SPACE));
    } else {
        let old: Manifest = read_json(&dir.join(MANIFEST))?;
        old.compatible_with(&manifest).map_err(|detail| RunError::ManifestMismatch {
            dir: dir.to_path_buf(),
            detail,
        })?;
        let trials_path = dir.join(TRIALS);
        let log = read_trial_log(&trials_path)?;
        if let Some(line) = log.truncated_line {
            warn!(line, "dropping truncated final trial record before resuming");
            let f = OpenOptions::new().write(true).open(&trials_path).map_err(io_err(&trials_path))?;
            f.set_len(log.valid_len).map_err(io_err(&trials_path))?;
        }
        if dir.join(SPACE).exists() {
            resume.space = Some(read_json(&dir.join(SPACE))?);
        }
        info!(trials = log.trials.len(), "resuming run");
        resume.trials = log.trials;
    }
    let resumed_trials = resume.trials.len();

    let trials_path = dir.join(TRIALS);
    let log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&trials_path)
        .map_err(io_err(&trials_path))?;
    let mut observer = DirObserver {
        dir: dir.to_path_buf(),
        log,
    };
    let outcome = match optimize(splits, gateway, &config.optimizer(), resume, &mut observer) {
        Ok(o) => o,
        Err(e) => {
            drop(lock);
            if created && matches!(e, OptimizeError::Unavailable(_)) {
                let _ = fs::remove_dir_all(dir);
            }
            return Err(e.into());
        }
    };

    let best = BestFeatures::from_trial(&outcome.best, splits.class_names())
        .ok_or_else(|| RunError::Invalid("best trial lacks scores".into()))?;
    write_atomic(&dir.join(BEST), &to_json(&best))?;

    let usage = merged_usage(&outcome.trials, &gateway.usage_ledger());
    write_atomic(&dir.join(USAGE), &to_json(&usage))?;
    let cost = estimate_cost(&measured_cost_params(config, splits, &outcome.best, &usage)).ok();
    let reconciliation = cost
        .as_ref()
        .map(|c| reconcile(&usage, c))
        .unwrap_or(Reconciliation::NoData);
    let report = render_report(&manifest, &outcome, cost.as_ref(), &reconciliation);
    write_atomic(&dir.join(REPORT), &report)?;
    drop(lock);

    Ok(RunSummary {
        run_dir: dir.to_path_buf(),
        outcome,
        best,
        resumed_trials,
        usage,
        cost,
        reconciliation,
    })
}

/// Per-trial usage from the log plus calls not tied to a trial (reflection,
/// probes) from the live gateway.
pub fn merged_usage(trials: &[TrialRecord], live: &UsageLedger) -> UsageLedger {
    let mut ledger = UsageLedger::default();
    for t in trials {
        for (role, totals) in &t.usage {
            ledger.entries.entry(*role).or_default().insert(Some(t.trial), *totals);
        }
    }
    for (role, by_candidate) in &live.entries {
        if let Some(totals) = by_candidate.get(&None) {
            ledger.entries.entry(*role).or_default().insert(None, *totals);
        }
    }
    ledger
}

/// Cost parameters with token lengths measured on this run: the mean
/// proposer prompt from the ledger, mean annotation text and the winning
/// schema, as whitespace-token proxies.
pub fn measured_cost_params(config: &RunConfig, splits: &DatasetSplits, best: &TrialRecord, usage: &UsageLedger) -> CostParams {
    let proposer = usage.role_total(ModuleRole::Proposer);
    let l_phi = if proposer.calls > 0 {
        proposer.prompt_tokens as f64 / proposer.calls as f64
    } else {
        1.0
    };
    let ann = splits.annotation();
    let l_t = ann.iter().map(|e| whitespace_tokens(&e.text)).sum::<u64>() as f64 / ann.len().max(1) as f64;
    let l_f = best
        .feature_set
        .as_ref()
        .map_or(1.0, |fs| whitespace_tokens(&serialize_feature_schema(fs)) as f64);
    CostParams {
        m_fp: config.cost_m_fp,
        m_e: config.cost_m_e,
        m_s: config.cost_m_s,
        l_phi: l_phi.max(1.0),
        l_t: l_t.max(1.0),
        l_f: l_f.max(1.0),
        n_a: ann.len().max(1) as f64,
        n_d: config.n_d as f64,
        n_iter: config.effective_n_iter() as f64,
    }
}

fn render_cost(out: &mut String, cost: Option<&CostBreakdown>, rec: &Reconciliation) {
    let _ = writeln!(out, "## Cost\n");
    if let Some(c) = cost {
        let _ = writeln!(out, "| term | estimate |\n|---|---|");
        let _ = writeln!(out, "| propose | {:.0} |", c.propose_term);
        let _ = writeln!(out, "| extract | {:.0} |", c.extract_term);
        let _ = writeln!(out, "| score | {:.0} |", c.score_term);
        let _ = writeln!(out, "| one evaluation | {:.0} |", c.eval_total);
        let _ = writeln!(out, "| full run | {:.0} |", c.run_total);
        let _ = writeln!(out, "\nPredicted dominant term: {:?}.", c.dominant);
    }
    let _ = writeln!(out, "\nMeasured: {}.\n", rec.render());
}

pub fn render_report(
    manifest: &Manifest,
    outcome: &OptimizeOutcome,
    cost: Option<&CostBreakdown>,
    rec: &Reconciliation,
) -> String {
    let best = &outcome.best;
    let mut out = String::from("# Feature search report\n\n");
    let ok = outcome.trials.iter().filter(|t| t.is_ok()).count();
    let _ = writeln!(
        out,
        "Model `{}`, seed {}, mode {:?}. {} trials ({} ok), {} instructions x {} example sets.\n",
        manifest.model_id,
        manifest.seed,
        manifest.mode,
        outcome.trials.len(),
        ok,
        outcome.space.instructions.len(),
        outcome.space.example_sets.len()
    );
    let _ = writeln!(out, "## Best candidate\n");
    let _ = writeln!(
        out,
        "Trial {} (instruction {}, example set {}): combined {:.4}, macro-F1 {:.4}, interpretability {:.4}.\n",
        best.trial,
        best.candidate.instruction_id,
        best.candidate.example_set_id,
        best.combined_score.unwrap_or(0.0),
        best.f1_score.unwrap_or(0.0),
        best.interpretability_score.unwrap_or(0.0)
    );
    let _ = writeln!(out, "Instruction:\n\n> {}\n", best.instruction.replace('\n', "\n> "));
    if let Some(fs) = &best.feature_set {
        let _ = writeln!(out, "| feature | type | description |\n|---|---|---|");
        for f in fs.features() {
            let _ = writeln!(out, "| {} | {} | {} |", f.name, f.value_type.kind().as_str(), f.description.replace('|', "/"));
        }
        out.push('\n');
    }
    if let Some(m) = &best.metrics {
        let _ = writeln!(out, "## Metrics\n\n```\n{}\n```\n", render_metrics_table(m));
    }
    if let Some(r) = &best.interpretability {
        let _ = writeln!(
            out,
            "## Interpretability\n\n| feature | readable | human_worded | understandable | meaningful | trackable | leakage |\n|---|---|---|---|---|---|---|"
        );
        for f in &r.per_feature {
            let _ = writeln!(
                out,
                "| {} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {} |",
                f.name, f.readable, f.human_worded, f.understandable, f.meaningful, f.trackable, f.leakage_flag
            );
        }
        out.push('\n');
    }
    render_cost(&mut out, cost, rec);
    let _ = writeln!(out, "## Trials\n\n| trial | phase | instruction | example set | combined | F1 | interp | status |\n|---|---|---|---|---|---|---|---|");
    for t in &outcome.trials {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let status = match &t.status {
            crate::optimizer::TrialStatus::Ok => "ok".to_string(),
            crate::optimizer::TrialStatus::Aborted { reason, .. } => format!("aborted ({reason:?})"),
        };
        let _ = writeln!(
            out,
            "| {} | {:?} | {} | {} | {} | {} | {} | {} |",
            t.trial,
            t.phase,
            t.candidate.instruction_id,
            t.candidate.example_set_id,
            fmt(t.combined_score),
            fmt(t.f1_score),
            fmt(t.interpretability_score),
            status
        );
    }
    out
}

/// One realized feature vector in the extract output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedRow {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub values: BTreeMap<String, FeatureValue>,
}

/// Applies a learned schema to a dataset and writes one JSON line per text.
pub fn run_extract(
    config: &RunConfig,
    gateway: &Gateway,
    best_features: &Path,
    dataset: &Path,
    format: DatasetFormat,
    output: &Path,
) -> Result<usize, RunError> {
    let best = BestFeatures::load(best_features)?;
    let fields = Fields {
        text: config.text_field.clone(),
        label: config.label_field.clone(),
        id: config.id_field.clone(),
    };
    let records = read_records(dataset, format, &fields)?;
    let labels: Vec<Option<String>> = records.iter().map(|r| r.label.clone()).collect();
    // empty placeholder label for unlabelled rows
    let examples = to_examples(
        records
            .into_iter()
            .map(|mut r| {
                r.label.get_or_insert_with(String::new);
                r
            })
            .collect(),
    )?;
    if examples.is_empty() {
        return Err(RunError::Invalid("dataset is empty".into()));
    }
    let matrix = extract_all(gateway, None, &examples, &best.feature_set, &config.agent_settings())?;
    let mut out = String::new();
    for (row, label) in matrix.rows().iter().zip(labels) {
        let values = best
            .feature_set
            .names()
            .zip(&row.values)
            .map(|(n, v)| (n.to_string(), v.clone()))
            .collect();
        out.push_str(&serde_json::to_string(&ExtractedRow { id: row.id.clone(), label, values }).expect("serializable"));
        out.push('\n');
    }
    write_atomic(output, &out)?;
    Ok(matrix.n_rows())
}

/// Reads extract output back into a matrix. Labels come from the rows or, by
/// id, from `labels`.
pub fn load_feature_matrix(
    rows_path: &Path,
    fs: &FeatureSet,
    labels: Option<&BTreeMap<String, String>>,
) -> Result<FeatureMatrix, RunError> {
    let text = fs::read_to_string(rows_path).map_err(io_err(rows_path))?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| RunError::CorruptLog {
            path: rows_path.to_path_buf(),
            line: k + 1,
            detail,
        };
        let r: ExtractedRow = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let label = r
            .label
            .clone()
            .filter(|l| !l.is_empty())
            .or_else(|| labels.and_then(|m| m.get(&r.id).cloned()))
            .ok_or_else(|| bad(format!("row `{}` has no label", r.id)))?;
        let values = fs
            .names()
            .map(|n| r.values.get(n).cloned().ok_or_else(|| bad(format!("row `{}` lacks `{n}`", r.id))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(FeatureRow { id: r.id, label, values });
    }
    FeatureMatrix::new(fs.clone(), rows).map_err(|e| RunError::Invalid(e.to_string()))
}

/// Offline re-scoring of a realized matrix; no LM calls.
pub fn run_evaluate(matrix: &FeatureMatrix, class_names: Option<&[String]>, config: &MetricsConfig) -> Result<MetricsBundle, RunError> {
    let classes: Vec<String> = match class_names {
        Some(c) => c.to_vec(),
        None => {
            let mut c: Vec<String> = matrix.rows().iter().map(|r| r.label.clone()).collect();
            c.sort();
            c.dedup();
            c
        }
    };
    if classes.len() < 2 {
        return Err(MetricsError::DegenerateLabels.into());
    }
    assign_folds(matrix, &classes, config.k_folds, config.seed)?;
    Ok(compute_metrics(matrix, &classes, config))
}

pub fn labels_from_dataset(fields: &Fields, dataset: &Path, format: DatasetFormat) -> Result<BTreeMap<String, String>, RunError> {
    let examples: Vec<LabeledExample> = to_examples(read_records(dataset, format, fields)?)?;
    Ok(examples.into_iter().map(|e| (e.id, e.label)).collect())
}

/// Everything `compare` needs from one run directory.
#[derive(Debug, Clone)]
pub struct RunDigest {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub trials: Vec<TrialRecord>,
}

pub fn load_run(dir: &Path) -> Result<RunDigest, RunError> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    let log = read_trial_log(&dir.join(TRIALS))?;
    if let Some(line) = log.truncated_line {
        warn!(dir = %dir.display(), line, "trial log is truncated; ignoring the partial record");
    }
    Ok(RunDigest {
        dir: dir.to_path_buf(),
        manifest,
        trials: log.trials,
    })
}

/// Side-by-side table of runs: the combined-score winner against the
/// F1-only winner, with leakage counts.
pub fn compare_runs(runs: &[RunDigest]) -> String {
    let mut out = String::from(
        "| run | mode | trials | best combined | its F1 | its interp | its leaky features | best F1 | F1 winner's leaky features |\n|---|---|---|---|---|---|---|---|---|\n",
    );
    let leaky = |t: &TrialRecord| t.metrics.as_ref().map_or(0, |m| m.leaky_features().len());
    for r in runs {
        let by_combined = best_by(&r.trials, |t| t.combined_score);
        let by_f1 = best_by(&r.trials, |t| t.f1_score);
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(
            out,
            "| {} | {:?} | {} | {} | {} | {} | {} | {} | {} |",
            r.dir.display(),
            r.manifest.mode,
            r.trials.len(),
            fmt(by_combined.and_then(|t| t.combined_score)),
            fmt(by_combined.and_then(|t| t.f1_score)),
            fmt(by_combined.and_then(|t| t.interpretability_score)),
            by_combined.map_or(0, leaky),
            fmt(by_f1.and_then(|t| t.f1_score)),
            by_f1.map_or(0, leaky),
        );
    }
    out
}

/// Cost estimate from a config and dataset before any run; lengths that need
/// a run (prompt and schema) use the supplied guesses.
pub fn estimate_from_config(config: &RunConfig, splits: &DatasetSplits, l_phi: f64, l_f: f64) -> Result<CostBreakdown, RunError> {
    let ann = splits.annotation();
    let l_t = ann.iter().map(|e| whitespace_tokens(&e.text)).sum::<u64>() as f64 / ann.len().max(1) as f64;
    estimate_cost(&CostParams {
        m_fp: config.cost_m_fp,
        m_e: config.cost_m_e,
        m_s: config.cost_m_s,
        l_phi,
        l_t: l_t.max(1.0),
        l_f,
        n_a: ann.len() as f64,
        n_d: config.n_d as f64,
        n_iter: config.effective_n_iter() as f64,
    })
    .map_err(|e| RunError::Invalid(e.to_string()))
}

/// Reads the ledger written by a finished run.
pub fn load_usage(dir: &Path) -> Result<UsageLedger, RunError> {
    read_json(&dir.join(USAGE))
}

/// Strips wall-clock fields from a trial log line for byte comparisons.
pub fn without_timing(line: &str) -> String {
    let mut v: Value = serde_json::from_str(line).unwrap_or(Value::Null);
    if let Value::Object(m) = &mut v {
        m.remove("wall_time_ms");
    }
    serde_json::to_string(&v).expect("serializable")
}
