//! Candidate evaluation and the full search: seed evaluation, reflective
//! refinement rounds, then TPE over the instruction x example-set grid.

mod tpe;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::agents::{
    build_data_summary, extract_all, performance_feedback, propose_features, reflect_instructions, score_interpretability,
    AgentError, AgentSettings, InterpretabilityReport, ProposerMode, ReflectionInput, DEFAULT_SEED_INSTRUCTION,
};
use crate::lm::{Gateway, ModuleRole, UsageTotals};
use crate::metrics::{compute_metrics, MetricsBundle, MetricsConfig};
use crate::model::{sample_example_sets, DatasetSplits, ExampleSet, FeatureSet, PromptCandidate, TrainTooSmall};

pub use tpe::{Observation, TpeConfig, TpeState};

/// (f1 + lambda * interp) / (1 + lambda).
pub fn combined_score(f1: f64, interp: f64, lambda: f64) -> f64 {
    (f1 + lambda * interp) / (1.0 + lambda)
}

/// Default trial budget: max(N_d^2, 128).
pub fn default_n_iter(n_d: usize) -> usize {
    (n_d * n_d).max(128)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub n_d: usize,
    pub l: usize,
    pub n_fb: usize,
    pub k_reflect: usize,
    /// `None` selects `default_n_iter(n_d)`.
    pub n_iter: Option<usize>,
    pub lambda: f64,
    pub seed: u64,
    pub mode: ProposerMode,
    pub seed_instruction: String,
    /// Example set used for the seed and refresh evaluations.
    pub refine_example_set: usize,
    pub tpe: TpeConfig,
    pub metrics: MetricsConfig,
    pub agents: AgentSettings,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_d: 16,
            l: 16,
            n_fb: 1,
            k_reflect: 4,
            n_iter: None,
            lambda: 0.75,
            seed: 0,
            mode: ProposerMode::Reflective,
            seed_instruction: DEFAULT_SEED_INSTRUCTION.into(),
            refine_example_set: 0,
            tpe: TpeConfig::default(),
            metrics: MetricsConfig::default(),
            agents: AgentSettings::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn effective_n_iter(&self) -> usize {
        self.n_iter.unwrap_or_else(|| default_n_iter(self.n_d))
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("n_d", self.n_d), ("l", self.l), ("k_reflect", self.k_reflect)] {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if self.n_iter == Some(0) {
            return Err("n_iter must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.refine_example_set >= self.n_d {
            return Err("refine_example_set must index an example set".into());
        }
        if self.seed_instruction.trim().is_empty() {
            return Err("seed instruction is empty".into());
        }
        if self.metrics.k_folds < 2 {
            return Err("k_folds must be at least 2".into());
        }
        self.tpe.validate()?;
        for p in [
            &self.agents.proposer,
            &self.agents.extractor,
            &self.agents.scorer,
            &self.agents.feedback,
            &self.agents.reflective,
        ] {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "round", rename_all = "snake_case")]
pub enum InstructionOrigin {
    Seed,
    Reflective(usize),
    Scalar(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub origin: InstructionOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub instructions: Vec<Instruction>,
    pub example_sets: Vec<ExampleSet>,
    /// Index of the first instruction added in each completed refinement round.
    pub round_heads: Vec<Option<usize>>,
}

impl SearchSpace {
    pub fn new(seed_instruction: &str, example_sets: Vec<ExampleSet>) -> Self {
        Self {
            instructions: vec![Instruction {
                text: seed_instruction.trim().to_string(),
                origin: InstructionOrigin::Seed,
            }],
            example_sets,
            round_heads: Vec::new(),
        }
    }

    /// Adds an instruction unless an identical text is already pooled.
    pub fn add_instruction(&mut self, text: &str, origin: InstructionOrigin) -> Option<usize> {
        let text = text.trim();
        if text.is_empty() || self.instructions.iter().any(|i| i.text == text) {
            return None;
        }
        self.instructions.push(Instruction {
            text: text.to_string(),
            origin,
        });
        Some(self.instructions.len() - 1)
    }

    pub fn product_size(&self) -> usize {
        self.instructions.len() * self.example_sets.len()
    }

    pub fn contains(&self, c: &PromptCandidate) -> bool {
        c.instruction_id < self.instructions.len() && c.example_set_id < self.example_sets.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "round", rename_all = "snake_case")]
pub enum TrialPhase {
    Seed,
    Refresh(usize),
    Search,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortReason {
    ProposalFailed,
    ExtractionFailed,
    InterpretabilityScoringFailed,
    EndpointUnavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Aborted { reason: AbortReason, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub phase: TrialPhase,
    pub candidate: PromptCandidate,
    pub instruction: String,
    #[serde(flatten)]
    pub status: TrialStatus,
    pub combined_score: Option<f64>,
    pub f1_score: Option<f64>,
    pub interpretability_score: Option<f64>,
    pub feature_set: Option<FeatureSet>,
    pub interpretability_feedback: Option<String>,
    pub performance_feedback: Option<String>,
    pub metrics: Option<MetricsBundle>,
    pub interpretability: Option<InterpretabilityReport>,
    pub usage: BTreeMap<ModuleRole, UsageTotals>,
    pub wall_time_ms: u64,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok
    }

    /// Score seen by the sampler: aborted trials count as 0.
    pub fn sampler_score(&self) -> f64 {
        self.combined_score.unwrap_or(0.0)
    }
}

/// Best ok-trial by combined score; earliest index wins ties.
pub fn best_trial(trials: &[TrialRecord]) -> Option<&TrialRecord> {
    best_by(trials, |t| t.combined_score)
}

/// Best ok-trial by an arbitrary key; earliest index wins ties.
pub fn best_by(trials: &[TrialRecord], key: impl Fn(&TrialRecord) -> Option<f64>) -> Option<&TrialRecord> {
    let mut best: Option<(&TrialRecord, f64)> = None;
    for t in trials.iter().filter(|t| t.is_ok()) {
        if let Some(s) = key(t) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((t, s));
            }
        }
    }
    best.map(|(t, _)| t)
}

/// Runs one candidate end to end. Never fails: every error becomes an
/// aborted record.
pub fn evaluate_candidate(
    trial: u64,
    phase: TrialPhase,
    candidate: PromptCandidate,
    space: &SearchSpace,
    splits: &DatasetSplits,
    gateway: &Gateway,
    config: &OptimizerConfig,
) -> TrialRecord {
    let started = Instant::now();
    let instruction = space
        .instructions
        .get(candidate.instruction_id)
        .map(|i| i.text.clone())
        .unwrap_or_default();
    let mut record = TrialRecord {
        trial,
        phase,
        candidate,
        instruction: instruction.clone(),
        status: TrialStatus::Ok,
        combined_score: None,
        f1_score: None,
        interpretability_score: None,
        feature_set: None,
        interpretability_feedback: None,
        performance_feedback: None,
        metrics: None,
        interpretability: None,
        usage: BTreeMap::new(),
        wall_time_ms: 0,
    };
    let outcome = run_pipeline(&mut record, candidate, space, splits, gateway, config);
    if let Err((reason, err)) = outcome {
        let reason = match &err {
            AgentError::Lm(e) if e.is_unavailability() => AbortReason::EndpointUnavailable,
            _ => reason,
        };
        warn!(trial, ?reason, error = %err, "trial aborted");
        record.status = TrialStatus::Aborted {
            reason,
            detail: err.to_string(),
        };
        record.combined_score = None;
    }
    record.usage = gateway.usage_ledger().for_candidate(trial);
    record.wall_time_ms = started.elapsed().as_millis() as u64;
    record
}

fn run_pipeline(
    record: &mut TrialRecord,
    candidate: PromptCandidate,
    space: &SearchSpace,
    splits: &DatasetSplits,
    gateway: &Gateway,
    config: &OptimizerConfig,
) -> Result<(), (AbortReason, AgentError)> {
    let trial = Some(record.trial);
    let settings = &config.agents;
    let classes = splits.class_names();
    let example_set = space.example_sets.get(candidate.example_set_id).ok_or((
        AbortReason::ProposalFailed,
        AgentError::Precondition("example set index out of range".into()),
    ))?;
    if !space.contains(&candidate) {
        return Err((
            AbortReason::ProposalFailed,
            AgentError::Precondition("instruction index out of range".into()),
        ));
    }

    let fs = propose_features(gateway, trial, &record.instruction, example_set, classes, settings)
        .map_err(|e| (AbortReason::ProposalFailed, e))?;
    record.feature_set = Some(fs.clone());

    let matrix = extract_all(gateway, trial, splits.annotation(), &fs, settings)
        .map_err(|e| (AbortReason::ExtractionFailed, e))?;
    let metrics = compute_metrics(&matrix, classes, &config.metrics);
    let hints: Vec<String> = metrics.leaky_features().into_iter().map(String::from).collect();

    let report = score_interpretability(gateway, trial, &fs, classes, &hints, settings)
        .map_err(|e| (AbortReason::InterpretabilityScoringFailed, e))?;
    let perf = performance_feedback(gateway, trial, &metrics, settings)
        .map_err(|e| (AbortReason::ExtractionFailed, e))?;

    record.f1_score = Some(metrics.macro_f1);
    record.interpretability_score = Some(report.set_score);
    record.combined_score = Some(combined_score(metrics.macro_f1, report.set_score, config.lambda));
    record.interpretability_feedback = Some(report.feedback_text.clone());
    record.performance_feedback = Some(perf);
    record.metrics = Some(metrics);
    record.interpretability = Some(report);
    Ok(())
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    TrainTooSmall(#[from] TrainTooSmall),
    #[error("endpoint unavailable during the seed evaluation: {0}")]
    Unavailable(String),
    #[error("no trial completed successfully")]
    NoSuccessfulTrial,
    #[error("resume state does not match this run: {0}")]
    ResumeMismatch(String),
    #[error("persisting run state failed: {0}")]
    Sink(#[from] std::io::Error),
}

/// Receives state changes as they happen so a run can be persisted and
/// resumed.
pub trait RunObserver {
    fn on_space(&mut self, _space: &SearchSpace) -> std::io::Result<()> {
        Ok(())
    }
    fn on_trial(&mut self, _trial: &TrialRecord) -> std::io::Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

/// State recovered from an interrupted run.
#[derive(Debug, Clone, Default)]
pub struct ResumeState {
    pub space: Option<SearchSpace>,
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub best: TrialRecord,
    pub trials: Vec<TrialRecord>,
    pub space: SearchSpace,
}

impl OptimizeOutcome {
    pub fn final_feature_set(&self) -> &FeatureSet {
        self.best.feature_set.as_ref().expect("ok trials carry a feature set")
    }
}

struct Run<'a> {
    splits: &'a DatasetSplits,
    gateway: &'a Gateway,
    config: &'a OptimizerConfig,
    observer: &'a mut dyn RunObserver,
    space: SearchSpace,
    trials: Vec<TrialRecord>,
    budget: usize,
}

impl Run<'_> {
    fn evaluated(&self) -> BTreeSet<PromptCandidate> {
        self.trials.iter().map(|t| t.candidate).collect()
    }

    fn can_evaluate(&self) -> bool {
        self.trials.len() < self.budget.min(self.space.product_size())
    }

    fn evaluate(&mut self, phase: TrialPhase, candidate: PromptCandidate) -> Result<&TrialRecord, OptimizeError> {
        let trial = self.trials.len() as u64;
        let record = evaluate_candidate(trial, phase, candidate, &self.space, self.splits, self.gateway, self.config);
        info!(
            trial,
            instruction = candidate.instruction_id,
            example_set = candidate.example_set_id,
            score = ?record.combined_score,
            "trial finished"
        );
        self.observer.on_trial(&record)?;
        self.trials.push(record);
        Ok(self.trials.last().expect("just pushed"))
    }

    fn find_phase(&self, phase: TrialPhase) -> Option<&TrialRecord> {
        self.trials.iter().find(|t| t.phase == phase)
    }

    fn bootstrap(&mut self) -> Result<(), OptimizeError> {
        let set = self.config.refine_example_set;
        if self.find_phase(TrialPhase::Seed).is_none() {
            let seed = self.evaluate(TrialPhase::Seed, PromptCandidate::new(0, set))?;
            if let TrialStatus::Aborted {
                reason: AbortReason::EndpointUnavailable,
                detail,
            } = &seed.status
            {
                return Err(OptimizeError::Unavailable(detail.clone()));
            }
        }
        let summary = build_data_summary(self.splits.train(), self.config.seed)
            .map_err(|e| OptimizeError::Config(e.to_string()))?;

        for round in 1..=self.config.n_fb {
            if self.space.round_heads.len() < round {
                let latest = self
                    .trials
                    .iter()
                    .rev()
                    .find(|t| t.is_ok() && t.phase != TrialPhase::Search)
                    .or_else(|| self.trials.first())
                    .expect("seed trial exists");
                let interp = latest.interpretability_feedback.clone().unwrap_or_else(|| abort_note(latest));
                let perf = latest.performance_feedback.clone().unwrap_or_else(|| abort_note(latest));
                let input = ReflectionInput {
                    summary: &summary,
                    current_instruction: &latest.instruction,
                    interp_feedback: &interp,
                    perf_feedback: &perf,
                    combined_score: latest.sampler_score(),
                    round: round as u64,
                };
                let proposals = reflect_instructions(
                    self.gateway,
                    &input,
                    self.config.k_reflect,
                    self.config.mode,
                    &self.config.agents,
                );
                let origin = match self.config.mode {
                    ProposerMode::Reflective => InstructionOrigin::Reflective(round),
                    ProposerMode::ScalarOnly => InstructionOrigin::Scalar(round),
                };
                let added: Vec<usize> = proposals
                    .iter()
                    .filter_map(|p| self.space.add_instruction(p, origin))
                    .collect();
                self.space.round_heads.push(added.first().copied());
                self.observer.on_space(&self.space)?;
            }
            let head = self.space.round_heads[round - 1];
            if let Some(head) = head {
                if self.find_phase(TrialPhase::Refresh(round)).is_none() && self.can_evaluate() {
                    self.evaluate(TrialPhase::Refresh(round), PromptCandidate::new(head, set))?;
                }
            }
        }
        Ok(())
    }

    fn search(&mut self) -> Result<(), OptimizeError> {
        let mut tpe = TpeState::new(self.config.tpe.clone(), self.config.seed);
        for t in &self.trials {
            tpe.observe(t.candidate, Some(t.sampler_score()));
        }
        while self.can_evaluate() {
            let evaluated = self.evaluated();
            let candidate = tpe.suggest(self.space.instructions.len(), self.space.example_sets.len());
            debug_assert!(!evaluated.contains(&candidate), "unevaluated pairs remain");
            let record = self.evaluate(TrialPhase::Search, candidate)?;
            let score = record.sampler_score();
            tpe.observe(candidate, Some(score));
        }
        Ok(())
    }
}

fn abort_note(t: &TrialRecord) -> String {
    match &t.status {
        TrialStatus::Aborted { reason, detail } => format!("The evaluation was aborted ({reason:?}): {detail}"),
        TrialStatus::Ok => String::new(),
    }
}

/// Full search. Trials (bootstrap included) never exceed
/// min(N_iter, |instructions| x |example sets|) and each pair is evaluated at
/// most once.
pub fn optimize(
    splits: &DatasetSplits,
    gateway: &Gateway,
    config: &OptimizerConfig,
    resume: ResumeState,
    observer: &mut dyn RunObserver,
) -> Result<OptimizeOutcome, OptimizeError> {
    config.validate().map_err(OptimizeError::Config)?;
    let space = match resume.space {
        Some(space) => {
            if space.example_sets.len() != config.n_d {
                return Err(OptimizeError::ResumeMismatch("example-set pool size differs".into()));
            }
            space
        }
        None => {
            let sets = sample_example_sets(splits.train(), config.n_d, config.l, config.seed)?;
            let space = SearchSpace::new(&config.seed_instruction, sets);
            observer.on_space(&space)?;
            space
        }
    };
    for (k, t) in resume.trials.iter().enumerate() {
        if t.trial != k as u64 || !space.contains(&t.candidate) {
            return Err(OptimizeError::ResumeMismatch(format!("trial {k} does not fit the search space")));
        }
    }
    let mut run = Run {
        splits,
        gateway,
        config,
        observer,
        space,
        trials: resume.trials,
        budget: config.effective_n_iter(),
    };
    run.bootstrap()?;
    run.search()?;
    let best = best_trial(&run.trials).cloned().ok_or(OptimizeError::NoSuccessfulTrial)?;
    Ok(OptimizeOutcome {
        best,
        trials: run.trials,
        space: run.space,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined_score_examples() {
        assert_eq!(combined_score(1.0, 1.0, 0.75), 1.0);
        assert_eq!(combined_score(0.37, 0.9, 0.0), 0.37);
        assert!((combined_score(0.8, 0.4, 0.75) - 1.1 / 1.75).abs() < 1e-15);
    }

    #[test]
    fn n_iter_heuristic() {
        assert_eq!(default_n_iter(4), 128);
        assert_eq!(default_n_iter(16), 256);
        assert_eq!(OptimizerConfig::default().effective_n_iter(), 256);
    }

    #[test]
    fn pool_rejects_duplicates() {
        let mut s = SearchSpace::new("seed", vec![]);
        assert_eq!(s.add_instruction(" seed ", InstructionOrigin::Reflective(1)), None);
        assert_eq!(s.add_instruction("other", InstructionOrigin::Reflective(1)), Some(1));
        assert_eq!(s.add_instruction("", InstructionOrigin::Reflective(1)), None);
    }
}
