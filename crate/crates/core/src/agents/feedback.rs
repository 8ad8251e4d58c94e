use std::fmt::Write as _;

use tracing::warn;

use crate::lm::{CallTag, Field, Gateway, Message, ModuleRole, Shape};
use crate::metrics::MetricsBundle;

use super::prompts::PERFORMANCE_FEEDBACK;
use super::{AgentError, AgentSettings};

/// Plain-text table of the dataset-level measurements.
pub fn render_metrics_table(metrics: &MetricsBundle) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "macro_f1: {:.4} over {} texts", metrics.macro_f1, metrics.n_rows);
    let _ = writeln!(out, "labels: {}", metrics.class_names.join(", "));
    let _ = writeln!(out, "\nfeature | shap_importance | mutual_information | coverage | leakage");
    for f in &metrics.per_feature {
        let _ = writeln!(
            out,
            "{} | {:.4} | {:.4} | {:.3} | {}",
            f.name,
            f.shap_importance,
            f.mutual_information,
            f.coverage,
            if f.leakage_flag { "flagged" } else { "-" }
        );
    }
    let confusions = top_confusions(metrics, 3);
    if !confusions.is_empty() {
        let _ = writeln!(out, "\nmost frequent confusions (true -> predicted: count):");
        for (t, p, n) in confusions {
            let _ = writeln!(out, "{t} -> {p}: {n}");
        }
    }
    if let Some(note) = &metrics.note {
        let _ = writeln!(out, "\nnote: {note}");
    }
    out.trim_end().to_string()
}

fn top_confusions(metrics: &MetricsBundle, n: usize) -> Vec<(&str, &str, u64)> {
    let mut cells = Vec::new();
    for (i, row) in metrics.confusion.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if i != j && c > 0 {
                cells.push((i, j, c));
            }
        }
    }
    cells.sort_by(|a, b| b.2.cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    cells
        .into_iter()
        .take(n)
        .filter_map(|(i, j, c)| Some((metrics.class_names.get(i)?.as_str(), metrics.class_names.get(j)?.as_str(), c)))
        .collect()
}

fn zero_coverage(metrics: &MetricsBundle) -> Vec<&str> {
    metrics
        .per_feature
        .iter()
        .filter(|f| f.coverage == 0.0)
        .map(|f| f.name.as_str())
        .collect()
}

/// Deterministic feedback used when the LM is unavailable.
pub fn fallback_feedback(metrics: &MetricsBundle) -> String {
    let mut out = format!(
        "Cross-validated macro-F1 is {:.4}. Features by importance: {}.",
        metrics.macro_f1,
        metrics.ranked_by_shap().join(", ")
    );
    let zero = zero_coverage(metrics);
    if !zero.is_empty() {
        let _ = write!(out, " Never extracted, so useless: {}.", zero.join(", "));
    }
    let leaky = metrics.leaky_features();
    if !leaky.is_empty() {
        let _ = write!(out, " Leaking the label, replace them: {}.", leaky.join(", "));
    }
    for (t, p, n) in top_confusions(metrics, 1) {
        let _ = write!(out, " The most common error is {t} predicted as {p} ({n} texts).");
    }
    out
}

/// Turns the metrics into prose feedback with one LM call, falling back to a
/// template on failure. Zero-coverage features are always named.
pub fn performance_feedback(
    gateway: &Gateway,
    candidate: Option<u64>,
    metrics: &MetricsBundle,
    settings: &AgentSettings,
) -> Result<String, AgentError> {
    if metrics.per_feature.is_empty() {
        return Err(AgentError::Precondition("metrics carry no features".into()));
    }
    let shape = Shape::Object(vec![
        Field::required("reasoning", Shape::String, "think step by step"),
        Field::required("feedback", Shape::String, "feedback for the next feature set"),
    ]);
    let system = PERFORMANCE_FEEDBACK.render(&[("schema", &shape.describe())]);
    let user = format!("Measurements:\n{}", render_metrics_table(metrics));
    let reply = gateway.complete_structured(
        CallTag::new(ModuleRole::PerformanceFeedback, candidate),
        &[Message::system(system), Message::user(user)],
        &settings.feedback,
        &shape,
        settings.parse_retries,
    );
    let mut text = match reply {
        Ok((value, _)) => value["feedback"].as_str().unwrap_or_default().trim().to_string(),
        Err(e) => {
            warn!(error = %e, "performance feedback failed; using template");
            String::new()
        }
    };
    if text.is_empty() {
        return Ok(fallback_feedback(metrics));
    }
    let unmentioned: Vec<&str> = zero_coverage(metrics)
        .into_iter()
        .filter(|n| !text.contains(n))
        .collect();
    if !unmentioned.is_empty() {
        let _ = write!(text, "\n\nNever extracted: {}.", unmentioned.join(", "));
    }
    Ok(text)
}
