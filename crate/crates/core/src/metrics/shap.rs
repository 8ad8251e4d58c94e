//! Exact SHAP values for linear models under the feature-independence
//! (interventional) baseline: `phi[i, c, j] = W[c, j] * (x[i, j] - mean[j])`.

use ndarray::Array3;

use super::encode::EncodedMatrix;
use super::logreg::ClassifierModel;
use super::MetricsError;

fn check_shapes(model: &ClassifierModel, enc: &EncodedMatrix) -> Result<(), MetricsError> {
    if model.n_features() != enc.n_cols() || enc.stats.column_means.len() != enc.n_cols() {
        return Err(MetricsError::ShapeMismatch(format!(
            "model has {} columns, encoding has {}",
            model.n_features(),
            enc.n_cols()
        )));
    }
    Ok(())
}

/// Column-level attributions, shaped `[rows, classes, columns]`.
pub fn shap_values(model: &ClassifierModel, enc: &EncodedMatrix) -> Result<Array3<f64>, MetricsError> {
    check_shapes(model, enc)?;
    let (n, c, p) = (enc.n_rows(), model.n_classes(), enc.n_cols());
    let base = &enc.stats.column_means;
    Ok(Array3::from_shape_fn((n, c, p), |(i, k, j)| {
        model.weights[[k, j]] * (enc.x[[i, j]] - base[j])
    }))
}

/// Sum over rows and classes of `|sum of attributions within the feature's
/// column group|`, one entry per source feature. Divide by `rows * classes`
/// for the mean.
pub fn shap_abs_sums(model: &ClassifierModel, enc: &EncodedMatrix) -> Result<Vec<f64>, MetricsError> {
    check_shapes(model, enc)?;
    let base = &enc.stats.column_means;
    let n_features = enc.feature_names.len();
    let mut sums = vec![0.0; n_features];
    let mut group = vec![0.0; n_features];
    for i in 0..enc.n_rows() {
        for k in 0..model.n_classes() {
            group.iter_mut().for_each(|g| *g = 0.0);
            for (j, col) in enc.columns.iter().enumerate() {
                group[col.feature] += model.weights[[k, j]] * (enc.x[[i, j]] - base[j]);
            }
            for (s, g) in sums.iter_mut().zip(&group) {
                *s += g.abs();
            }
        }
    }
    Ok(sums)
}

/// Per-feature importance: mean over rows and classes of the absolute grouped
/// attribution.
pub fn linear_shap(model: &ClassifierModel, enc: &EncodedMatrix) -> Result<Vec<f64>, MetricsError> {
    let denom = (enc.n_rows() * model.n_classes()) as f64;
    let sums = shap_abs_sums(model, enc)?;
    if denom == 0.0 {
        return Ok(vec![0.0; sums.len()]);
    }
    Ok(sums.into_iter().map(|s| s / denom).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::logreg::Diagnostics;
    use crate::metrics::test_support::raw_encoded;
    use ndarray::{Array1, Array2};

    fn model(weights: Array2<f64>) -> ClassifierModel {
        let c = weights.nrows();
        ClassifierModel {
            classes: (0..c).map(|i| format!("c{i}")).collect(),
            bias: Array1::from_elem(c, 0.3),
            weights,
            l2: 1.0,
            diagnostics: Diagnostics {
                iterations: 0,
                final_grad_norm: 0.0,
                converged: true,
                loss_history: vec![],
            },
        }
    }

    #[test]
    fn local_accuracy() {
        let x = Array2::from_shape_vec((2, 3), vec![1.0, -2.0, 0.5, 0.0, 4.0, -1.0]).unwrap();
        let mut enc = raw_encoded(x, vec![0, 1], 2);
        enc.stats.column_means = vec![0.25, 1.0, 0.0];
        let m = model(Array2::from_shape_vec((2, 3), vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap());
        let phi = shap_values(&m, &enc).unwrap();
        let base = Array1::from(enc.stats.column_means.clone());
        for i in 0..2 {
            let fx = m.logits(enc.x.row(i));
            let fb = m.logits(base.view());
            for k in 0..2 {
                let s: f64 = (0..3).map(|j| phi[[i, k, j]]).sum();
                assert!((s - (fx[k] - fb[k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn baseline_row_has_zero_attribution() {
        let x = Array2::from_shape_vec((1, 1), vec![0.7]).unwrap();
        let mut enc = raw_encoded(x, vec![0], 2);
        enc.stats.column_means = vec![0.7];
        let m = model(Array2::from_shape_vec((2, 1), vec![3.0, -2.0]).unwrap());
        assert!(shap_values(&m, &enc).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(linear_shap(&m, &enc).unwrap(), vec![0.0]);
    }

    #[test]
    fn grouped_importance_sums_inside_group_before_abs() {
        let x = Array2::from_shape_vec((1, 2), vec![1.0, 1.0]).unwrap();
        let mut enc = raw_encoded(x, vec![0], 1);
        enc.columns[1].feature = 0;
        enc.feature_names.truncate(1);
        let m = model(Array2::from_shape_vec((1, 2), vec![2.0, -2.0]).unwrap());
        assert_eq!(linear_shap(&m, &enc).unwrap(), vec![0.0]);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let enc = raw_encoded(Array2::zeros((2, 2)), vec![0, 1], 2);
        let m = model(Array2::zeros((2, 3)));
        assert!(matches!(linear_shap(&m, &enc), Err(MetricsError::ShapeMismatch(_))));
    }
}
