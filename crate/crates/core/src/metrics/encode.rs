use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::model::{FeatureMatrix, FeatureValue, FeatureValueType};

use super::MetricsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", content = "category", rename_all = "snake_case")]
pub enum ColumnRole {
    Numeric,
    MissingIndicator,
    Category(String),
    MissingCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDescriptor {
    /// Index of the source feature in the schema.
    pub feature: usize,
    pub role: ColumnRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureStats {
    /// Mean of observed values, used to impute missing rows.
    Boolean { mean: f64 },
    Numeric { mean: f64, std: f64 },
    Categorical,
}

/// Statistics computed on the fitted rows and reused to transform held-out rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub features: Vec<FeatureStats>,
    /// Mean of each encoded column over the fitted rows.
    pub column_means: Vec<f64>,
}

/// Dense design matrix built from a [`FeatureMatrix`].
#[derive(Debug, Clone)]
pub struct EncodedMatrix {
    pub columns: Vec<ColumnDescriptor>,
    pub feature_names: Vec<String>,
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub stats: FitStats,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    pub fn baseline(&self) -> Array1<f64> {
        Array1::from(self.stats.column_means.clone())
    }
}

fn column_layout(matrix: &FeatureMatrix) -> Vec<ColumnDescriptor> {
    let mut cols = Vec::new();
    for (j, def) in matrix.feature_set().features().iter().enumerate() {
        match &def.value_type {
            FeatureValueType::Boolean => cols.push(ColumnDescriptor {
                feature: j,
                role: ColumnRole::Numeric,
            }),
            FeatureValueType::Integer | FeatureValueType::Real => {
                cols.push(ColumnDescriptor {
                    feature: j,
                    role: ColumnRole::Numeric,
                });
                cols.push(ColumnDescriptor {
                    feature: j,
                    role: ColumnRole::MissingIndicator,
                });
            }
            FeatureValueType::Categorical(cats) => {
                for c in cats {
                    cols.push(ColumnDescriptor {
                        feature: j,
                        role: ColumnRole::Category(c.clone()),
                    });
                }
                cols.push(ColumnDescriptor {
                    feature: j,
                    role: ColumnRole::MissingCategory,
                });
            }
        }
    }
    cols
}

fn numeric(v: &FeatureValue) -> Option<f64> {
    match v {
        FeatureValue::Integer(i) => Some(*i as f64),
        FeatureValue::Real(x) => Some(*x),
        FeatureValue::Boolean(b) => Some(if *b { 1.0 } else { 0.0 }),
        _ => None,
    }
}

fn fit_feature_stats(matrix: &FeatureMatrix) -> Vec<FeatureStats> {
    matrix
        .feature_set()
        .features()
        .iter()
        .enumerate()
        .map(|(j, def)| {
            let observed: Vec<f64> = matrix.column(j).filter_map(numeric).collect();
            let mean = if observed.is_empty() {
                0.0
            } else {
                observed.iter().sum::<f64>() / observed.len() as f64
            };
            match def.value_type {
                FeatureValueType::Boolean => FeatureStats::Boolean { mean },
                FeatureValueType::Integer | FeatureValueType::Real => {
                    let var = if observed.is_empty() {
                        0.0
                    } else {
                        observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / observed.len() as f64
                    };
                    FeatureStats::Numeric {
                        mean,
                        std: var.sqrt(),
                    }
                }
                FeatureValueType::Categorical(_) => FeatureStats::Categorical,
            }
        })
        .collect()
}

/// Encodes a feature matrix into a dense design matrix.
///
/// With `fit = None` the statistics are computed from `matrix` itself (fit
/// mode); otherwise the given statistics are applied (transform mode).
/// Boolean features take one column in {0,1}, missing rows are imputed with
/// the fitted mean. Integer and real features take a standardized column plus a
/// missing indicator; missing rows sit at the fitted mean (0 after
/// standardization). Categorical features are one-hot with an extra MISSING
/// column.
pub fn encode(
    matrix: &FeatureMatrix,
    class_names: &[String],
    fit: Option<&FitStats>,
) -> Result<EncodedMatrix, MetricsError> {
    let labels = matrix
        .rows()
        .iter()
        .map(|r| {
            class_names
                .iter()
                .position(|c| *c == r.label)
                .ok_or_else(|| MetricsError::UnknownLabel(r.label.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    if fit.is_none() {
        if matrix.n_rows() < 2 {
            return Err(MetricsError::TooFewRows(matrix.n_rows()));
        }
        let mut present = vec![false; class_names.len()];
        for &y in &labels {
            present[y] = true;
        }
        if present.iter().filter(|&&p| p).count() < 2 {
            return Err(MetricsError::DegenerateLabels);
        }
    }

    let columns = column_layout(matrix);
    let feature_stats = match fit {
        Some(s) => {
            if s.features.len() != matrix.feature_set().len() || s.column_means.len() != columns.len() {
                return Err(MetricsError::ShapeMismatch(
                    "fit statistics do not match the feature schema".into(),
                ));
            }
            s.features.clone()
        }
        None => fit_feature_stats(matrix),
    };

    let n = matrix.n_rows();
    let mut x = Array2::<f64>::zeros((n, columns.len()));
    for (i, row) in matrix.rows().iter().enumerate() {
        for (c, col) in columns.iter().enumerate() {
            let v = &row.values[col.feature];
            x[[i, c]] = match (&col.role, &feature_stats[col.feature]) {
                (ColumnRole::Numeric, FeatureStats::Boolean { mean }) => numeric(v).unwrap_or(*mean),
                (ColumnRole::Numeric, FeatureStats::Numeric { mean, std }) => match numeric(v) {
                    Some(val) if *std > 0.0 => (val - mean) / std,
                    _ => 0.0,
                },
                (ColumnRole::MissingIndicator, _) => f64::from(u8::from(v.is_missing())),
                (ColumnRole::Category(cat), _) => {
                    f64::from(u8::from(matches!(v, FeatureValue::Categorical(s) if s == cat)))
                }
                (ColumnRole::MissingCategory, _) => f64::from(u8::from(v.is_missing())),
                (role, stats) => unreachable!("column role {role:?} paired with {stats:?}"),
            };
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }

    let column_means = match fit {
        Some(s) => s.column_means.clone(),
        None => x.mean_axis(ndarray::Axis(0)).expect("n >= 2").to_vec(),
    };

    Ok(EncodedMatrix {
        columns,
        feature_names: matrix.feature_set().names().map(str::to_string).collect(),
        x,
        labels,
        n_classes: class_names.len(),
        stats: FitStats {
            features: feature_stats,
            column_means,
        },
    })
}
