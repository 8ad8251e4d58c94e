//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::fixture;
use featsearch::agents::{AgentSettings, DEFAULT_SEED_INSTRUCTION};
use featsearch::config::RunConfig;
use featsearch::cost::{estimate_cost, CostParams, CostTerm, Reconciliation};
use featsearch::ingest::split_examples;
use featsearch::lm::scripted::ScriptedLm;
use featsearch::lm::{Gateway, ModuleRole, RetryPolicy};
use featsearch::metrics::encode::{ColumnDescriptor, ColumnRole, EncodedMatrix, FitStats};
use featsearch::metrics::logreg::{loss_and_grad, Diagnostics};
use featsearch::metrics::mi::discrete_mi;
use featsearch::metrics::shap::shap_values;
use featsearch::metrics::{mutual_information, train_logreg, ClassifierModel, LeakageReason};
use featsearch::model::{
    sample_example_sets, FeatureDefinition, FeatureMatrix, FeatureRow, FeatureSet, FeatureValue, FeatureValueType,
    PromptCandidate,
};
use featsearch::optimizer::{best_by, combined_score, evaluate_candidate, OptimizerConfig, SearchSpace, TpeConfig, TpeState, TrialPhase};
use featsearch::run::{run_optimize, without_timing, RunOptions, RunSummary, BEST, TRIALS};

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- criterion 1

fn encoded(x: Array2<f64>, means: Vec<f64>) -> EncodedMatrix {
    let p = x.ncols();
    EncodedMatrix {
        columns: (0..p)
            .map(|j| ColumnDescriptor {
                feature: j,
                role: ColumnRole::Numeric,
            })
            .collect(),
        feature_names: (0..p).map(|j| format!("f{j}")).collect(),
        labels: vec![0; x.nrows()],
        n_classes: 0,
        x,
        stats: FitStats {
            features: vec![],
            column_means: means,
        },
    }
}

fn model(w: Array2<f64>, b: Array1<f64>) -> ClassifierModel {
    ClassifierModel {
        classes: (0..w.nrows()).map(|c| format!("c{c}")).collect(),
        weights: w,
        bias: b,
        l2: 0.0,
        diagnostics: Diagnostics {
            iterations: 0,
            final_grad_norm: 0.0,
            converged: true,
            loss_history: vec![],
        },
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Shapley values of class `c` at `x` by enumerating coalitions; absent
/// features are drawn from the background rows.
fn brute_force_shapley(w: &Array2<f64>, b: &Array1<f64>, background: &Array2<f64>, x: &[f64], c: usize) -> Vec<f64> {
    let p = x.len();
    let value = |mask: usize| {
        let mut total = 0.0;
        for row in background.rows() {
            let mut z = b[c];
            for j in 0..p {
                let v = if mask & (1 << j) != 0 { x[j] } else { row[j] };
                z += w[[c, j]] * v;
            }
            total += z;
        }
        total / background.nrows() as f64
    };
    let v: Vec<f64> = (0..1usize << p).map(value).collect();
    (0..p)
        .map(|j| {
            let mut phi = 0.0;
            for mask in 0..1usize << p {
                if mask & (1 << j) != 0 {
                    continue;
                }
                let s = mask.count_ones() as usize;
                let weight = factorial(s) * factorial(p - s - 1) / factorial(p);
                phi += weight * (v[mask | (1 << j)] - v[mask]);
            }
            phi
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_phi: f64 = 0.0;
    let mut worst_local: f64 = 0.0;
    for _ in 0..200 {
        let p = rng.random_range(1..=8);
        let c = rng.random_range(2..=4);
        let n = 12;
        let w = Array2::from_shape_fn((c, p), |_| rng.random_range(-2.0..2.0));
        let b = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-3.0..3.0));
        let means: Vec<f64> = (0..p).map(|j| x.column(j).sum() / n as f64).collect();
        let m = model(w.clone(), b.clone());
        let enc = encoded(x.clone(), means);
        let phi = shap_values(&m, &enc).map_err(|e| e.to_string())?;
        let background_mean_logits: Vec<f64> = (0..c)
            .map(|k| x.rows().into_iter().map(|r| m.logits(r)[k]).sum::<f64>() / n as f64)
            .collect();
        for i in 0..n {
            let xi: Vec<f64> = x.row(i).to_vec();
            let logits = m.logits(x.row(i));
            for k in 0..c {
                let oracle = brute_force_shapley(&w, &b, &x, &xi, k);
                for j in 0..p {
                    worst_phi = worst_phi.max((phi[[i, k, j]] - oracle[j]).abs());
                }
                let sum: f64 = (0..p).map(|j| phi[[i, k, j]]).sum();
                worst_local = worst_local.max((sum - (logits[k] - background_mean_logits[k])).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    check(worst_phi <= 1e-9, format!("max attribution error {worst_phi:e} > 1e-9"))?;
    check(worst_local <= 1e-12, format!("max local-accuracy error {worst_local:e} > 1e-12"))?;
    check(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!(
        "200 models, max |phi - brute force| = {worst_phi:.1e}, max local-accuracy gap = {worst_local:.1e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- criterion 2

fn categorical_matrix(values: &[String], labels: &[String], categories: Vec<String>) -> FeatureMatrix {
    let fs = FeatureSet::new(vec![FeatureDefinition {
        name: "observed_kind".into(),
        value_type: FeatureValueType::Categorical(categories),
        description: "kind".into(),
        extraction_prompt: "kind?".into(),
    }])
    .unwrap();
    let rows = values
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (v, l))| FeatureRow {
            id: format!("r{i}"),
            label: l.clone(),
            values: vec![FeatureValue::Categorical(v.clone())],
        })
        .collect();
    FeatureMatrix::new(fs, rows).unwrap()
}

fn oracle_entropy(xs: &[usize]) -> f64 {
    let mut counts = BTreeMap::new();
    for x in xs {
        *counts.entry(x).or_insert(0usize) += 1;
    }
    let n = xs.len() as f64;
    counts.values().map(|&c| -(c as f64 / n) * (c as f64 / n).ln()).sum()
}

fn criterion_2() -> Outcome {
    let mut notes = Vec::new();
    for (k, expected) in [(2usize, 2f64.ln()), (3, 3f64.ln())] {
        let labels: Vec<String> = (0..30 * k).map(|i| format!("k{}", i % k)).collect();
        let cats: Vec<String> = (0..k).map(|c| format!("k{c}")).collect();
        let m = categorical_matrix(&labels, &labels, cats);
        let mi = mutual_information(&m, 0);
        check((mi - expected).abs() <= 1e-12, format!("{k}-class identity MI {mi} vs {expected}"))?;
        notes.push(format!("ln{k} err {:.1e}", (mi - expected).abs()));
    }
    let labels: Vec<String> = (0..40).map(|i| format!("k{}", i % 2)).collect();
    let constant = vec!["same".to_string(); 40];
    let m = categorical_matrix(&constant, &labels, vec!["same".into(), "other".into()]);
    let mi = mutual_information(&m, 0);
    check(mi == 0.0, format!("constant feature MI {mi} != 0"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..100 {
        let n = rng.random_range(10..200);
        let kf = rng.random_range(1..6);
        let ky = rng.random_range(1..5);
        let xs: Vec<usize> = (0..n).map(|_| rng.random_range(0..kf)).collect();
        let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..ky)).collect();
        let mi = discrete_mi(&xs, &ys);
        let bound = oracle_entropy(&xs).min(oracle_entropy(&ys));
        check(mi <= bound + 1e-12, format!("MI {mi} exceeds min entropy {bound}"))?;
        check(mi >= -1e-12, format!("negative MI {mi}"))?;
        worst = worst.max(mi - bound);
    }
    Ok(format!("{}, constant = 0 exactly, 100 random matrices within bound (max MI - min H = {worst:.1e})", notes.join(", ")))
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_rel: f64 = 0.0;
    let mut monotone_checked = 0;
    for _ in 0..20 {
        let n = rng.random_range(5..40);
        let p = rng.random_range(1..6);
        let c = rng.random_range(2..5);
        let l2 = rng.random_range(0.0..2.0);
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let theta: Vec<f64> = (0..c * p + c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, grad) = loss_and_grad(&theta, x.view(), &labels, c, l2);
        let h = 1e-5;
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for k in 0..theta.len() {
            let mut up = theta.clone();
            up[k] += h;
            let mut down = theta.clone();
            down[k] -= h;
            let fd = (loss_and_grad(&up, x.view(), &labels, c, l2).0 - loss_and_grad(&down, x.view(), &labels, c, l2).0) / (2.0 * h);
            diff2 += (grad[k] - fd).powi(2);
            norm2 += grad[k].powi(2).max(fd.powi(2));
        }
        let rel = diff2.sqrt() / norm2.sqrt().max(1e-12);
        worst_rel = worst_rel.max(rel);

        let classes: Vec<String> = (0..c).map(|k| format!("c{k}")).collect();
        let mut enc = encoded(x, vec![0.0; p]);
        enc.labels = labels;
        enc.n_classes = c;
        let m = train_logreg(&enc, &classes, l2.max(0.1), 1e-6, 500).map_err(|e| e.to_string())?;
        let hist = &m.diagnostics.loss_history;
        check(hist.windows(2).all(|w| w[1] <= w[0]), "loss increased on an accepted step")?;
        monotone_checked += 1;
    }
    check(worst_rel < 1e-5, format!("gradient relative error {worst_rel:e}"))?;

    // separable toy: class decided by the sign pattern of two coordinates
    let mut x = Array2::zeros((80, 2));
    let mut labels = Vec::new();
    for i in 0..80 {
        let c = i % 4;
        let (sx, sy) = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)][c];
        x[[i, 0]] = sx * (1.0 + (i as f64) * 0.01);
        x[[i, 1]] = sy * (1.0 + (i as f64) * 0.02);
        labels.push(c);
    }
    let mut enc = encoded(x.clone(), vec![0.0; 2]);
    enc.labels = labels.clone();
    enc.n_classes = 4;
    let classes: Vec<String> = (0..4).map(|k| format!("c{k}")).collect();
    let m = train_logreg(&enc, &classes, 1.0, 1e-6, 1000).map_err(|e| e.to_string())?;
    let acc = m.predict(x.view()).iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / 80.0;
    check(acc == 1.0, format!("separable toy accuracy {acc}"))?;
    check(
        m.diagnostics.loss_history.windows(2).all(|w| w[1] <= w[0]),
        "loss increased on the toy",
    )?;
    Ok(format!(
        "max gradient relative error {worst_rel:.1e} over 20 instances, toy accuracy 1.0, monotone loss on {} fits",
        monotone_checked + 1
    ))
}

// ---------------------------------------------------------------- criterion 4

fn trials_to_optimum_tpe(seed: u64, score: &dyn Fn(usize, usize) -> f64, optimum: PromptCandidate) -> usize {
    let mut s = TpeState::new(TpeConfig::default(), seed);
    for t in 1..=256 {
        let c = s.suggest(16, 16);
        if c == optimum {
            return t;
        }
        s.observe(c, Some(score(c.instruction_id, c.example_set_id)));
    }
    usize::MAX
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
}

fn criterion_4() -> Outcome {
    let mut tpe = Vec::new();
    let mut random = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        // separable objective with distinct row and column effects
        let mut a: Vec<f64> = (0..16).map(|k| k as f64 / 15.0).collect();
        let mut b = a.clone();
        use rand::seq::SliceRandom;
        a.shuffle(&mut rng);
        b.shuffle(&mut rng);
        let score = |i: usize, j: usize| (a[i] + b[j]) / 2.0;
        let optimum = PromptCandidate::new(
            a.iter().position(|&v| v == 1.0).unwrap(),
            b.iter().position(|&v| v == 1.0).unwrap(),
        );
        tpe.push(trials_to_optimum_tpe(seed, &score, optimum));
        let mut order: Vec<usize> = (0..256).collect();
        order.shuffle(&mut rng);
        random.push(order.iter().position(|&k| k == optimum.instruction_id * 16 + optimum.example_set_id).unwrap() + 1);
    }
    let (mt, mr) = (median(tpe), median(random));
    check(mt < mr, format!("TPE median {mt} not below random median {mr}"))?;

    let mut counts = vec![0usize; 256];
    let draws = 10_000;
    for seed in 0..draws {
        let c = TpeState::new(TpeConfig::default(), seed as u64).suggest(16, 16);
        counts[c.instruction_id * 16 + c.example_set_id] += 1;
    }
    let expected = draws as f64 / 256.0;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(255.0).unwrap().cdf(chi2);
    check(p > 0.001, format!("startup uniformity chi2 = {chi2:.1}, p = {p:.2e}"))?;
    Ok(format!(
        "median trials to optimum: TPE {mt} vs random {mr}; startup chi2 = {chi2:.1} (df 255), p = {p:.3}"
    ))
}

// ------------------------------------------------------- criteria 5, 7 and 8

struct EndToEnd {
    _dir: tempfile::TempDir,
    run_dir: PathBuf,
    summary: RunSummary,
    elapsed: Duration,
}

fn end_to_end(seed: u64) -> Result<EndToEnd, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let inputs = fixture::write_run_inputs(dir.path(), 720, 4, seed);
    let run_dir = dir.path().join("run");
    let start = Instant::now();
    let summary = run_optimize(
        &inputs.config,
        &RunOptions {
            scripted_lm: Some(inputs.transcript.clone()),
            run_dir: Some(run_dir.clone()),
            ..RunOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(EndToEnd {
        _dir: dir,
        run_dir,
        summary,
        elapsed: start.elapsed(),
    })
}

fn first_run() -> &'static Result<EndToEnd, String> {
    static RUN: OnceLock<Result<EndToEnd, String>> = OnceLock::new();
    RUN.get_or_init(|| end_to_end(7))
}

fn criterion_5() -> Outcome {
    let run = first_run().as_ref().map_err(|e| format!("run failed: {e}"))?;
    let best = &run.summary.best;
    let metrics = run.summary.outcome.best.metrics.as_ref().ok_or("best trial has no metrics")?;
    let ranked = metrics.ranked_by_shap();
    let top2: BTreeSet<&str> = ranked.iter().take(2).copied().collect();
    let trials = std::fs::read_to_string(run.run_dir.join(TRIALS)).map_err(|e| e.to_string())?;
    let n_trials = trials.lines().count();
    check(best.combined_score >= 0.9, format!("best combined {:.4} < 0.9", best.combined_score))?;
    check(best.f1_score >= 0.95, format!("macro-F1 {:.4} < 0.95", best.f1_score))?;
    check(
        top2 == BTreeSet::from(["mentions_refund", "asks_question"]),
        format!("top-2 SHAP features {top2:?}"),
    )?;
    check(n_trials == 20, format!("{n_trials} trials, expected min(128, 5 x 4) = 20"))?;
    check(run.elapsed < Duration::from_secs(120), format!("took {:?}", run.elapsed))?;
    let network_calls = run.summary.usage.entries.contains_key(&ModuleRole::Probe);
    check(!network_calls, "endpoint probe issued")?;
    Ok(format!(
        "combined {:.4}, macro-F1 {:.4}, top-2 SHAP {:?}, {n_trials} trials, {:.1}s, scripted backend only",
        best.combined_score,
        best.f1_score,
        &ranked[..2],
        run.elapsed.as_secs_f64()
    ))
}

fn criterion_7() -> Outcome {
    let run = first_run().as_ref().map_err(|e| format!("run failed: {e}"))?;
    let n_a = run.summary.outcome.best.metrics.as_ref().map_or(0, |m| m.n_rows);
    check(n_a == 512, format!("annotation split has {n_a} rows"))?;
    let cost = run.summary.cost.as_ref().ok_or("no cost estimate")?;
    let Reconciliation::Measured {
        extractor_share,
        measured_dominant,
        disagreement,
        ..
    } = run.summary.reconciliation
    else {
        return Err("reconciliation has no data".into());
    };
    check(extractor_share >= 0.9, format!("extractor share {extractor_share:.4} < 0.9"))?;
    check(cost.dominant == CostTerm::Extract, format!("predicted dominant {:?}", cost.dominant))?;
    check(measured_dominant == ModuleRole::Extractor && !disagreement, "measured dominant role disagrees")?;

    let p = CostParams {
        m_fp: 4.0,
        m_e: 4.0,
        m_s: 4.0,
        l_phi: 800.0,
        l_t: 60.0,
        l_f: 400.0,
        n_a: 512.0,
        n_d: 16.0,
        n_iter: 256.0,
    };
    let one = estimate_cost(&p).map_err(|e| e.to_string())?;
    let two = estimate_cost(&CostParams { n_a: 1024.0, ..p.clone() }).map_err(|e| e.to_string())?;
    check(two.extract_term == 2.0 * one.extract_term, "extract term not linear in N_A")?;
    check(one.extract_term == 512.0 * 4.0 * 460.0, format!("extract term {}", one.extract_term))?;
    check(one.run_total / one.eval_total == 16.0 + 256.0, "run total is not (N_d + N_iter) evaluations")?;
    Ok(format!(
        "extractor share {:.4} of {} tokens, predicted and measured dominant = extract, N_A doubling exact",
        extractor_share,
        run.summary.usage.total().total()
    ))
}

fn criterion_8() -> Outcome {
    let a = first_run().as_ref().map_err(|e| format!("first run failed: {e}"))?;
    let b = end_to_end(7)?;
    let read = |d: &Path, f: &str| std::fs::read_to_string(d.join(f)).map_err(|e| e.to_string());
    let strip = |s: String| s.lines().map(without_timing).collect::<Vec<_>>();
    let (ta, tb) = (strip(read(&a.run_dir, TRIALS)?), strip(read(&b.run_dir, TRIALS)?));
    check(ta == tb, "trial logs differ")?;
    check(read(&a.run_dir, BEST)? == read(&b.run_dir, BEST)?, "best_features.json differs")?;
    Ok(format!("{} trial lines and best_features.json identical across two runs", ta.len()))
}

// ---------------------------------------------------------------- criterion 6

const CLEAN_INSTRUCTION: &str = "Describe concrete wording cues the writer uses";
const LEAKY_INSTRUCTION: &str = "Describe anything that predicts the ticket type";

fn criterion_6() -> Outcome {
    let corpus = fixture::generate(600, 23);
    let t = fixture::transcript(
        &corpus,
        &[(CLEAN_INSTRUCTION, &fixture::CLEAN[..]), (LEAKY_INSTRUCTION, &fixture::LEAKY[..])],
    );
    let gateway = Gateway::new(ScriptedLm::new(t).map_err(|e| e.to_string())?, RetryPolicy::immediate(0), 8);
    let splits = split_examples(corpus.examples(), 16, 512, 5).map_err(|e| e.to_string())?;
    let sets = sample_example_sets(splits.train(), 1, 16, 5).map_err(|e| e.to_string())?;
    let mut space = SearchSpace::new(CLEAN_INSTRUCTION, sets);
    space.add_instruction(LEAKY_INSTRUCTION, featsearch::optimizer::InstructionOrigin::Reflective(1));
    let config = OptimizerConfig {
        n_d: 1,
        agents: AgentSettings::default(),
        ..OptimizerConfig::default()
    };
    check(config.lambda == 0.75, "lambda is not 0.75")?;
    let trials: Vec<_> = (0..2)
        .map(|i| evaluate_candidate(i as u64, TrialPhase::Search, PromptCandidate::new(i, 0), &space, &splits, &gateway, &config))
        .collect();
    for t in &trials {
        check(t.is_ok(), format!("trial {} aborted: {:?}", t.trial, t.status))?;
    }
    let by_f1 = best_by(&trials, |t| t.f1_score).ok_or("no f1 winner")?;
    let by_combined = best_by(&trials, |t| t.combined_score).ok_or("no combined winner")?;
    check(by_f1.instruction == LEAKY_INSTRUCTION, "F1-only argmax is not the leaky candidate")?;
    check(by_combined.instruction == CLEAN_INSTRUCTION, "combined argmax is not the clean candidate")?;

    let leaky = &trials[1];
    let echo = leaky
        .metrics
        .as_ref()
        .and_then(|m| m.feature("label_echo"))
        .ok_or("label_echo missing from metrics")?;
    let by_name = echo.leakage_reasons.iter().any(|r| matches!(r, LeakageReason::NameToken { .. }));
    let by_mi = echo.leakage_reasons.iter().any(|r| matches!(r, LeakageReason::HighMutualInformation { .. }));
    check(by_name && by_mi, format!("label_echo reasons {:?}", echo.leakage_reasons))?;
    let report = leaky.interpretability.as_ref().ok_or("no interpretability report")?;
    let echo_interp = report.per_feature.iter().find(|f| f.name == "label_echo").ok_or("echo not scored")?;
    check(echo_interp.leakage_flag && echo_interp.contribution() == 0.0, "echo still contributes")?;

    // independent recomputation of the combined scores
    for t in &trials {
        let expect = combined_score(t.f1_score.unwrap(), t.interpretability_score.unwrap(), 0.75);
        let oracle = (t.f1_score.unwrap() + 0.75 * t.interpretability_score.unwrap()) / 1.75;
        check((expect - oracle).abs() < 1e-15 && t.combined_score == Some(expect), "combined score mismatch")?;
    }
    let fmt = |t: &featsearch::optimizer::TrialRecord| {
        format!(
            "F1 {:.4} / interp {:.4} / combined {:.4}",
            t.f1_score.unwrap(),
            t.interpretability_score.unwrap(),
            t.combined_score.unwrap()
        )
    };
    Ok(format!(
        "leaky {} vs clean {}; label_echo flagged by name token and MI",
        fmt(&trials[1]),
        fmt(&trials[0])
    ))
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let cfg = RunConfig::load(&path).map_err(|e| e.to_string())?;
    let opt = cfg.optimizer();
    let agents = cfg.agent_settings();
    let checks: [(&str, bool); 12] = [
        ("N_d = 16", cfg.n_d == 16),
        ("l = 16", cfg.l == 16),
        ("N_fb = 1", cfg.n_fb == 1),
        ("lambda = 0.75", cfg.lambda == 0.75),
        ("annotation = 512", cfg.annotation_size == 512),
        ("train = 16 per class", cfg.train_per_class == 16),
        ("proposer temperature 0.75", agents.proposer.temperature == 0.75),
        ("proposer top-p 0.95", agents.proposer.top_p == 0.95),
        (
            "greedy elsewhere",
            [&agents.extractor, &agents.scorer, &agents.feedback, &agents.reflective]
                .iter()
                .all(|p| p.is_greedy()),
        ),
        ("N_iter unset in file", cfg.n_iter.is_none()),
        ("N_iter = max(N_d^2, 128) = 256", opt.effective_n_iter() == 256),
        ("seed instruction default", opt.seed_instruction == DEFAULT_SEED_INSTRUCTION),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    check(failed.is_empty(), format!("failed: {failed:?}"))?;
    opt.validate()?;
    Ok(format!("{} settings verified against configs/default.toml", checks.len()))
}

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("SHAP oracle equivalence", criterion_1),
        ("MI exactness", criterion_2),
        ("logistic regression correctness", criterion_3),
        ("TPE beats random", criterion_4),
        ("end-to-end synthetic recovery", criterion_5),
        ("leakage regularization", criterion_6),
        ("cost-model reconciliation", criterion_7),
        ("determinism", criterion_8),
        ("default configuration", criterion_9),
    ];
    let mut failures = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {} [PASS] {name}: {detail}", k + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {} [FAIL] {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
