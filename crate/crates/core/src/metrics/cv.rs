//! Stratified k-fold cross-validation with pooled macro-F1.

use sha2::{Digest, Sha256};

use crate::model::FeatureMatrix;

use super::encode::{encode, EncodedMatrix};
use super::logreg::{train_logreg, ClassifierModel};
use super::MetricsError;

/// Confusion matrix with rows = true class, columns = predicted class.
pub type Confusion = Vec<Vec<u64>>;

pub struct FoldOutcome {
    pub model: ClassifierModel,
    /// Validation rows encoded with the training fold's statistics.
    pub validation: EncodedMatrix,
    /// Positions of the validation rows in the input matrix.
    pub validation_rows: Vec<usize>,
    pub n_train: usize,
}

pub struct CvOutcome {
    pub macro_f1: f64,
    pub confusion: Confusion,
    pub folds: Vec<FoldOutcome>,
    /// Pooled out-of-fold prediction per input row.
    pub predictions: Vec<usize>,
}

/// Macro-averaged F1 over all classes; a class with no true or predicted
/// members contributes 0.
pub fn macro_f1_from_confusion(confusion: &Confusion) -> f64 {
    let c = confusion.len();
    if c == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (k, row) in confusion.iter().enumerate() {
        let tp = row[k] as f64;
        let fn_: f64 = row.iter().sum::<u64>() as f64 - tp;
        let fp: f64 = (0..c).map(|r| confusion[r][k]).sum::<u64>() as f64 - tp;
        let denom = 2.0 * tp + fp + fn_;
        if denom > 0.0 {
            total += 2.0 * tp / denom;
        }
    }
    total / c as f64
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], n_classes: usize) -> Confusion {
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        m[t][p] += 1;
    }
    m
}

/// Fold key for an example id. Keyed by id rather than row position so the
/// assignment is invariant to row order.
pub fn fold_key(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Stratified fold index for every row.
pub fn assign_folds(
    matrix: &FeatureMatrix,
    class_names: &[String],
    k_folds: usize,
    seed: u64,
) -> Result<Vec<usize>, MetricsError> {
    let mut members: Vec<Vec<(u64, &str, usize)>> = vec![Vec::new(); class_names.len()];
    for (i, row) in matrix.rows().iter().enumerate() {
        let c = class_names
            .iter()
            .position(|n| *n == row.label)
            .ok_or_else(|| MetricsError::UnknownLabel(row.label.clone()))?;
        members[c].push((fold_key(seed, &row.id), row.id.as_str(), i));
    }
    let mut folds = vec![0; matrix.n_rows()];
    for (c, group) in members.iter_mut().enumerate() {
        if group.len() < k_folds {
            return Err(MetricsError::TooFewPerClass {
                class: class_names[c].clone(),
                have: group.len(),
                need: k_folds,
            });
        }
        group.sort();
        for (rank, &(_, _, i)) in group.iter().enumerate() {
            folds[i] = rank % k_folds;
        }
    }
    Ok(folds)
}

/// Stratified k-fold estimate of macro-F1. Encoding is fitted on each training
/// fold and applied to its validation fold; predictions are pooled across
/// folds and scored once.
pub fn cross_validated_f1(
    matrix: &FeatureMatrix,
    class_names: &[String],
    k_folds: usize,
    l2: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<CvOutcome, MetricsError> {
    if k_folds < 2 {
        return Err(MetricsError::ShapeMismatch(format!("k_folds must be at least 2, got {k_folds}")));
    }
    let folds = assign_folds(matrix, class_names, k_folds, seed)?;
    // Canonical row order so training sums do not depend on input order.
    let mut order: Vec<usize> = (0..matrix.n_rows()).collect();
    order.sort_by_key(|&i| (fold_key(seed, &matrix.rows()[i].id), matrix.rows()[i].id.clone()));

    let mut predictions = vec![0usize; matrix.n_rows()];
    let mut truth = vec![0usize; matrix.n_rows()];
    let mut outcomes = Vec::with_capacity(k_folds);
    for fold in 0..k_folds {
        let train_idx: Vec<usize> = order.iter().copied().filter(|&i| folds[i] != fold).collect();
        let val_idx: Vec<usize> = order.iter().copied().filter(|&i| folds[i] == fold).collect();
        let train_enc = encode(&matrix.select(&train_idx), class_names, None)?;
        let val_enc = encode(&matrix.select(&val_idx), class_names, Some(&train_enc.stats))?;
        let model = train_logreg(&train_enc, class_names, l2, tol, max_iter)?;
        for (&i, p) in val_idx.iter().zip(model.predict(val_enc.x.view())) {
            predictions[i] = p;
        }
        for (&i, &y) in val_idx.iter().zip(&val_enc.labels) {
            truth[i] = y;
        }
        outcomes.push(FoldOutcome {
            model,
            validation: val_enc,
            validation_rows: val_idx,
            n_train: train_idx.len(),
        });
    }

    let confusion = confusion_matrix(&truth, &predictions, class_names.len());
    Ok(CvOutcome {
        macro_f1: macro_f1_from_confusion(&confusion),
        confusion,
        folds: outcomes,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_one() {
        let truth = vec![0, 1, 2, 0, 1, 2];
        let m = confusion_matrix(&truth, &truth, 3);
        assert_eq!(macro_f1_from_confusion(&m), 1.0);
    }

    #[test]
    fn hand_computed_macro_f1() {
        // class 0: tp 2, fp 1, fn 0 -> 0.8; class 1: tp 1, fp 0, fn 1 -> 2/3
        let m = vec![vec![2, 0], vec![1, 1]];
        assert!((macro_f1_from_confusion(&m) - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_contributes_zero() {
        let m = vec![vec![3, 0], vec![0, 0]];
        assert_eq!(macro_f1_from_confusion(&m), 0.5);
    }
}
