//! The non-LM executor: feature encoding, logistic regression, macro-F1,
//! linear SHAP, mutual information, coverage and the leakage guard.

pub mod cv;
pub mod encode;
pub mod leakage;
pub mod logreg;
pub mod mi;
pub mod shap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::FeatureMatrix;

pub use cv::{cross_validated_f1, macro_f1_from_confusion, CvOutcome};
pub use encode::{encode, EncodedMatrix, FitStats};
pub use leakage::{detect_leakage, LeakageConfig, LeakageFlag, LeakageReason};
pub use logreg::{train_logreg, ClassifierModel};
pub use mi::mutual_information;
pub use shap::linear_shap;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("only one class is present in the labels")]
    DegenerateLabels,
    #[error("class `{class}` has {have} examples, need at least {need} for cross-validation")]
    TooFewPerClass { class: String, have: usize, need: usize },
    #[error("too few rows to fit: {0}")]
    TooFewRows(usize),
    #[error("label `{0}` is not in the class list")]
    UnknownLabel(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite values during training")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub k_folds: usize,
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub leakage: LeakageConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            k_folds: 5,
            l2: 1.0,
            tol: 1e-6,
            max_iter: 1000,
            seed: 0,
            leakage: LeakageConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub per_feature: Vec<f64>,
    pub mean: f64,
}

/// Fraction of rows with a non-missing value, per feature.
pub fn coverage(matrix: &FeatureMatrix) -> Coverage {
    let n = matrix.n_rows();
    let k = matrix.feature_set().len();
    let per_feature: Vec<f64> = (0..k)
        .map(|j| {
            if n == 0 {
                return 0.0;
            }
            matrix.column(j).filter(|v| !v.is_missing()).count() as f64 / n as f64
        })
        .collect();
    let mean = if k == 0 {
        0.0
    } else {
        per_feature.iter().sum::<f64>() / k as f64
    };
    Coverage { per_feature, mean }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMetrics {
    pub name: String,
    pub shap_importance: f64,
    pub mutual_information: f64,
    pub coverage: f64,
    pub leakage_flag: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub leakage_reasons: Vec<LeakageReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub n_train: usize,
    pub n_validation: usize,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
}

/// Everything the executor reports about one realized feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub macro_f1: f64,
    pub class_names: Vec<String>,
    pub per_feature: Vec<FeatureMetrics>,
    pub confusion: Vec<Vec<u64>>,
    pub folds: Vec<FoldSummary>,
    pub n_rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl MetricsBundle {
    pub fn feature(&self, name: &str) -> Option<&FeatureMetrics> {
        self.per_feature.iter().find(|f| f.name == name)
    }

    pub fn leaky_features(&self) -> Vec<&str> {
        self.per_feature
            .iter()
            .filter(|f| f.leakage_flag)
            .map(|f| f.name.as_str())
            .collect()
    }

    /// Feature names ordered by decreasing SHAP importance (ties by schema order).
    pub fn ranked_by_shap(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.per_feature.len()).collect();
        idx.sort_by(|&a, &b| {
            self.per_feature[b]
                .shap_importance
                .total_cmp(&self.per_feature[a].shap_importance)
                .then(a.cmp(&b))
        });
        idx.into_iter().map(|i| self.per_feature[i].name.as_str()).collect()
    }
}

/// Scores a realized feature matrix: cross-validated macro-F1, SHAP importances
/// averaged over the fold models on their validation rows, MI, coverage and
/// leakage flags. Classifier failures yield a zero-F1 bundle with a note.
pub fn compute_metrics(matrix: &FeatureMatrix, class_names: &[String], config: &MetricsConfig) -> MetricsBundle {
    let cov = coverage(matrix);
    let flags = detect_leakage(matrix, class_names, &config.leakage);
    let k = matrix.feature_set().len();
    let mi: Vec<f64> = (0..k).map(|j| mutual_information(matrix, j)).collect();

    let mut bundle = MetricsBundle {
        macro_f1: 0.0,
        class_names: class_names.to_vec(),
        per_feature: matrix
            .feature_set()
            .names()
            .enumerate()
            .map(|(j, name)| {
                let reasons = flags
                    .iter()
                    .find(|f| f.feature == name)
                    .map(|f| f.reasons.clone())
                    .unwrap_or_default();
                FeatureMetrics {
                    name: name.to_string(),
                    shap_importance: 0.0,
                    mutual_information: mi[j],
                    coverage: cov.per_feature[j],
                    leakage_flag: !reasons.is_empty(),
                    leakage_reasons: reasons,
                }
            })
            .collect(),
        confusion: vec![vec![0; class_names.len()]; class_names.len()],
        folds: vec![],
        n_rows: matrix.n_rows(),
        note: None,
    };

    if matrix.n_rows() > 0 && cov.mean == 0.0 {
        bundle.note = Some("no feature values were extracted; every value is missing".into());
        return bundle;
    }

    let outcome = match cross_validated_f1(
        matrix,
        class_names,
        config.k_folds,
        config.l2,
        config.tol,
        config.max_iter,
        config.seed,
    ) {
        Ok(o) => o,
        Err(e) => {
            bundle.note = Some(format!("classifier evaluation failed: {e}"));
            return bundle;
        }
    };

    let mut sums = vec![0.0; k];
    let mut denom = 0.0;
    for fold in &outcome.folds {
        match shap::shap_abs_sums(&fold.model, &fold.validation) {
            Ok(s) => {
                for (acc, v) in sums.iter_mut().zip(s) {
                    *acc += v;
                }
                denom += (fold.validation.n_rows() * fold.model.n_classes()) as f64;
            }
            Err(e) => {
                bundle.note = Some(format!("attribution failed: {e}"));
                return bundle;
            }
        }
    }
    for (fm, s) in bundle.per_feature.iter_mut().zip(sums) {
        fm.shap_importance = if denom > 0.0 { s / denom } else { 0.0 };
    }
    bundle.macro_f1 = outcome.macro_f1;
    bundle.confusion = outcome.confusion;
    bundle.folds = outcome
        .folds
        .iter()
        .map(|f| FoldSummary {
            n_train: f.n_train,
            n_validation: f.validation_rows.len(),
            iterations: f.model.diagnostics.iterations,
            final_grad_norm: f.model.diagnostics.final_grad_norm,
            converged: f.model.diagnostics.converged,
        })
        .collect();
    bundle
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureDefinition, FeatureRow, FeatureSet, FeatureValue, FeatureValueType, MissingReason};

    fn flag(name: &str) -> FeatureDefinition {
        FeatureDefinition {
            name: name.into(),
            value_type: FeatureValueType::Boolean,
            description: "d".into(),
            extraction_prompt: "p".into(),
        }
    }

    #[test]
    fn coverage_fractions() {
        let fs = FeatureSet::new(vec![flag("a"), flag("b")]).unwrap();
        let rows = (0..512)
            .map(|i| FeatureRow {
                id: i.to_string(),
                label: "x".into(),
                values: vec![
                    FeatureValue::Boolean(true),
                    if i < 128 {
                        FeatureValue::Missing(MissingReason::ParseFailed)
                    } else {
                        FeatureValue::Boolean(false)
                    },
                ],
            })
            .collect();
        let m = FeatureMatrix::new(fs, rows).unwrap();
        let c = coverage(&m);
        assert_eq!(c.per_feature, vec![1.0, 0.75]);
        assert_eq!(c.mean, 0.875);
    }

    #[test]
    fn all_missing_matrix_gives_zero_bundle() {
        let fs = FeatureSet::new(vec![flag("a"), flag("b")]).unwrap();
        let rows = (0..40)
            .map(|i| FeatureRow {
                id: i.to_string(),
                label: if i % 2 == 0 { "x" } else { "y" }.into(),
                values: vec![FeatureValue::Missing(MissingReason::ExtractionRefused); 2],
            })
            .collect();
        let m = FeatureMatrix::new(fs, rows).unwrap();
        let b = compute_metrics(&m, &["x".into(), "y".into()], &MetricsConfig::default());
        assert_eq!(b.macro_f1, 0.0);
        assert!(b.note.is_some());
        assert_eq!(b.per_feature.iter().map(|f| f.coverage).collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(b.per_feature.iter().map(|f| f.name.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
    }
}
