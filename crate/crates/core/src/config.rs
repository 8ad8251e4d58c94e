//! Flat TOML run configuration with `${VAR}` interpolation in string values.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentSettings, ProposerMode, DEFAULT_SEED_INSTRUCTION};
use crate::lm::{GenerationParams, LmEndpoint};
use crate::metrics::{LeakageConfig, MetricsConfig};
use crate::optimizer::{default_n_iter, OptimizerConfig, TpeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    pub dataset_format: DatasetFormat,
    #[serde(default = "default_text_field")]
    pub text_field: String,
    #[serde(default = "default_label_field")]
    pub label_field: String,
    #[serde(default = "default_id_field")]
    pub id_field: String,
    pub train_per_class: usize,
    pub annotation_size: usize,

    pub seed: u64,
    pub n_d: usize,
    pub l: usize,
    pub n_fb: usize,
    pub k_reflect: usize,
    #[serde(default)]
    pub n_iter: Option<usize>,
    pub lambda: f64,
    pub mode: ProposerMode,
    #[serde(default)]
    pub seed_instruction: Option<String>,
    #[serde(default)]
    pub refine_example_set: usize,

    pub k_folds: usize,
    pub l2: f64,
    pub gamma: f64,
    pub prior_weight: f64,
    pub n_startup: usize,
    #[serde(default = "default_enumeration_limit")]
    pub enumeration_limit: usize,
    #[serde(default = "default_n_candidates")]
    pub n_candidates: usize,
    #[serde(default = "default_mi_threshold")]
    pub leakage_mi_threshold: f64,

    pub endpoint_base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    pub request_timeout_secs: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,

    pub proposer_temperature: f64,
    pub proposer_top_p: f64,
    pub proposer_max_tokens: u32,
    pub extractor_max_tokens: u32,
    pub scorer_max_tokens: u32,
    pub feedback_max_tokens: u32,
    pub reflective_max_tokens: u32,
    pub parse_retries: u32,
    pub context_char_budget: usize,
    pub min_features: usize,
    pub max_features: usize,

    /// Relative model-size weights for the cost estimate.
    #[serde(default = "one")]
    pub cost_m_fp: f64,
    #[serde(default = "one")]
    pub cost_m_e: f64,
    #[serde(default = "one")]
    pub cost_m_s: f64,
}

fn default_text_field() -> String {
    "text".into()
}
fn default_label_field() -> String {
    "label".into()
}
fn default_id_field() -> String {
    "id".into()
}
fn default_enumeration_limit() -> usize {
    4096
}
fn default_n_candidates() -> usize {
    64
}
fn default_mi_threshold() -> f64 {
    0.95
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("environment variable `{0}` referenced by the config is not set")]
    MissingEnv(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("dataset file {0} does not exist")]
    MissingDataset(PathBuf),
}

/// Replaces `${NAME}` with the value of `lookup(NAME)`; `$$` escapes a dollar.
pub fn interpolate(s: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String, ConfigError> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('$') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos + 1..];
        if let Some(after) = tail.strip_prefix('$') {
            out.push('$');
            rest = after;
        } else if let Some(body) = tail.strip_prefix('{') {
            let end = body
                .find('}')
                .ok_or_else(|| ConfigError::Parse(format!("unterminated `${{` in `{s}`")))?;
            let name = &body[..end];
            out.push_str(&lookup(name).ok_or_else(|| ConfigError::MissingEnv(name.to_string()))?);
            rest = &body[end + 1..];
        } else {
            out.push('$');
            rest = tail;
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn interpolate_value(v: &mut toml::Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
    match v {
        toml::Value::String(s) => *s = interpolate(s, lookup)?,
        toml::Value::Array(a) => {
            for x in a {
                interpolate_value(x, lookup)?;
            }
        }
        toml::Value::Table(t) => {
            for (_, x) in t.iter_mut() {
                interpolate_value(x, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

impl RunConfig {
    /// Parses and validates without touching the filesystem. Relative dataset
    /// paths are resolved against `base_dir`.
    pub fn from_toml_str(
        text: &str,
        base_dir: &Path,
        lookup: &dyn Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        let mut value: toml::Value = text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| ConfigError::Parse(e.to_string()))?;
        interpolate_value(&mut value, lookup)?;
        let mut cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if cfg.dataset_path.is_relative() {
            cfg.dataset_path = base_dir.join(&cfg.dataset_path);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, interpolates from the process environment, validates, and checks
    /// that the dataset exists.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::from_toml_str(&text, base, &|k| std::env::var(k).ok())?;
        if !cfg.dataset_path.is_file() {
            return Err(ConfigError::MissingDataset(cfg.dataset_path));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("train_per_class", self.train_per_class),
            ("annotation_size", self.annotation_size),
            ("max_in_flight", self.max_in_flight),
            ("context_char_budget", self.context_char_budget),
            ("min_features", self.min_features),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        if self.min_features > self.max_features {
            return Err(ConfigError::Invalid("min_features exceeds max_features".into()));
        }
        if self.request_timeout_secs == 0 {
            return Err(ConfigError::Invalid("request_timeout_secs must be at least 1".into()));
        }
        for (name, v) in [("cost_m_fp", self.cost_m_fp), ("cost_m_e", self.cost_m_e), ("cost_m_s", self.cost_m_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        self.optimizer().validate().map_err(ConfigError::Invalid)
    }

    pub fn effective_n_iter(&self) -> usize {
        self.n_iter.unwrap_or_else(|| default_n_iter(self.n_d))
    }

    pub fn agent_settings(&self) -> AgentSettings {
        AgentSettings {
            proposer: GenerationParams {
                temperature: self.proposer_temperature,
                top_p: self.proposer_top_p,
                max_tokens: self.proposer_max_tokens,
                seed: Some(self.seed),
            },
            extractor: GenerationParams::greedy(self.extractor_max_tokens),
            scorer: GenerationParams::greedy(self.scorer_max_tokens),
            feedback: GenerationParams::greedy(self.feedback_max_tokens),
            reflective: GenerationParams::greedy(self.reflective_max_tokens),
            parse_retries: self.parse_retries,
            context_char_budget: self.context_char_budget,
            min_features: self.min_features,
            max_features: self.max_features,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            n_d: self.n_d,
            l: self.l,
            n_fb: self.n_fb,
            k_reflect: self.k_reflect,
            n_iter: self.n_iter,
            lambda: self.lambda,
            seed: self.seed,
            mode: self.mode,
            seed_instruction: self
                .seed_instruction
                .clone()
                .unwrap_or_else(|| DEFAULT_SEED_INSTRUCTION.to_string()),
            refine_example_set: self.refine_example_set,
            tpe: TpeConfig {
                gamma: self.gamma,
                prior_weight: self.prior_weight,
                n_startup: self.n_startup,
                enumeration_limit: self.enumeration_limit,
                n_candidates: self.n_candidates,
            },
            metrics: MetricsConfig {
                k_folds: self.k_folds,
                l2: self.l2,
                seed: self.seed,
                leakage: LeakageConfig {
                    mi_threshold: self.leakage_mi_threshold,
                    ..LeakageConfig::default()
                },
                ..MetricsConfig::default()
            },
            agents: self.agent_settings(),
        }
    }

    /// Endpoint settings; the key is read from the named variable.
    pub fn endpoint(&self, lookup: &dyn Fn(&str) -> Option<String>) -> Result<LmEndpoint, ConfigError> {
        let api_key = match &self.api_key_env {
            Some(var) => Some(lookup(var).ok_or_else(|| ConfigError::MissingEnv(var.clone()))?),
            None => None,
        };
        Ok(LmEndpoint {
            base_url: self.endpoint_base_url.clone(),
            model_id: self.model_id.clone(),
            api_key,
            request_timeout: Duration::from_secs(self.request_timeout_secs),
            max_retries: self.max_retries,
            max_in_flight: self.max_in_flight,
        })
    }
}

/// The shipped default configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");
