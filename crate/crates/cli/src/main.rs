use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use featsearch::agents::ProposerMode;
use featsearch::config::DatasetFormat;
use featsearch::cost::reconcile;
use featsearch::ingest::{ingest, Fields};
use featsearch::metrics::MetricsConfig;
use featsearch::run::{
    self, build_gateway, compare_runs, estimate_from_config, labels_from_dataset, load_config, load_feature_matrix,
    load_run, load_usage, measured_cost_params, run_evaluate, run_extract, run_optimize, BestFeatures, RunOptions,
};

#[derive(Parser)]
#[command(name = "featsearch", version, about = "Search for interpretable text features with a language model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Reflective,
    Scalar,
}

impl From<Mode> for ProposerMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Reflective => ProposerMode::Reflective,
            Mode::Scalar => ProposerMode::ScalarOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

impl From<Format> for DatasetFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Jsonl => DatasetFormat::Jsonl,
            Format::Csv => DatasetFormat::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) a feature search and write a run directory.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Answer LM calls from a transcript instead of the endpoint.
        #[arg(long)]
        scripted_lm: Option<PathBuf>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Apply a learned feature schema to a dataset.
    Extract {
        #[arg(long)]
        config: PathBuf,
        /// best_features.json from a run directory.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        scripted_lm: Option<PathBuf>,
    },
    /// Score extracted features offline (no LM calls).
    Evaluate {
        /// JSON-lines output of `extract`.
        #[arg(long)]
        rows: PathBuf,
        /// best_features.json holding the schema.
        #[arg(long)]
        features: PathBuf,
        /// Dataset supplying labels by id, for unlabelled rows.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "jsonl")]
        labels_format: Format,
        #[arg(long, default_value_t = 5)]
        k_folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare finished runs, e.g. reflective against scalar feedback.
    Compare {
        #[arg(long = "run-dir", required = true, num_args = 1..)]
        run_dirs: Vec<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Estimate the cost of a configuration, or reconcile a finished run.
    Cost {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Proposer prompt length guess in tokens.
        #[arg(long, default_value_t = 800.0)]
        prompt_tokens: f64,
        /// Serialized schema length guess in tokens.
        #[arg(long, default_value_t = 400.0)]
        schema_tokens: f64,
    },
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => run::write_atomic(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Optimize {
            config,
            seed,
            mode,
            scripted_lm,
            run_dir,
        } => {
            let opts = RunOptions {
                seed,
                mode: mode.map(Into::into),
                scripted_lm,
                run_dir,
            };
            let summary = run_optimize(&config, &opts)?;
            println!(
                "best trial {} of {}: combined {:.4}, macro-F1 {:.4}, interpretability {:.4}",
                summary.best.trial,
                summary.outcome.trials.len(),
                summary.best.combined_score,
                summary.best.f1_score,
                summary.best.interpretability_score
            );
            println!("run directory: {}", summary.run_dir.display());
        }
        Command::Extract {
            config,
            features,
            input,
            format,
            output,
            scripted_lm,
        } => {
            let cfg = load_config(&config, &RunOptions::default())?;
            let gateway = build_gateway(&cfg, scripted_lm.as_deref())?;
            let n = run_extract(&cfg, &gateway, &features, &input, format.into(), &output)?;
            println!("wrote {n} rows to {}", output.display());
        }
        Command::Evaluate {
            rows,
            features,
            labels,
            labels_format,
            k_folds,
            seed,
            output,
        } => {
            let best = BestFeatures::load(&features)?;
            let label_map = match &labels {
                Some(path) => Some(labels_from_dataset(&Fields::default(), path, labels_format.into())?),
                None => None,
            };
            let matrix = load_feature_matrix(&rows, &best.feature_set, label_map.as_ref())?;
            let config = MetricsConfig {
                k_folds,
                seed,
                ..MetricsConfig::default()
            };
            let bundle = run_evaluate(&matrix, None, &config)?;
            eprintln!("{}", featsearch::agents::render_metrics_table(&bundle));
            emit(&serde_json::to_string_pretty(&bundle)?, output.as_deref())?;
        }
        Command::Compare { run_dirs, output } => {
            let runs = run_dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>()?;
            emit(&compare_runs(&runs), output.as_deref())?;
        }
        Command::Cost {
            config,
            run_dir,
            prompt_tokens,
            schema_tokens,
        } => {
            let cfg = load_config(&config, &RunOptions::default())?;
            let splits = ingest(&cfg)?;
            match run_dir {
                None => {
                    let b = estimate_from_config(&cfg, &splits, prompt_tokens, schema_tokens)?;
                    println!("{}", serde_json::to_string_pretty(&b)?);
                }
                Some(dir) => {
                    let usage = load_usage(&dir)?;
                    let digest = load_run(&dir)?;
                    let Some(best) = featsearch::optimizer::best_trial(&digest.trials) else {
                        bail!("run {} has no successful trial", dir.display());
                    };
                    let params = measured_cost_params(&cfg, &splits, best, &usage);
                    let b = featsearch::cost::estimate_cost(&params)?;
                    println!("{}", serde_json::to_string_pretty(&b)?);
                    println!("{}", reconcile(&usage, &b).render());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "featsearch=warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
