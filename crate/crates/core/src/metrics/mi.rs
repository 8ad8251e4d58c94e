//! Plug-in mutual information between a discretized feature and the label.

use std::collections::HashMap;
use std::hash::Hash;

use crate::model::{FeatureMatrix, FeatureValue};

/// Maximum number of equal-frequency bins for numeric features.
pub const MAX_BINS: usize = 8;

/// Discrete bucket of a feature value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Bucket {
    Missing,
    Bool(bool),
    Category(String),
    Bin(usize),
}

/// `sum p(x,y) ln(p(x,y) / (p(x) p(y)))` over observed cells, in nats.
pub fn discrete_mi<A: Eq + Hash, B: Eq + Hash>(xs: &[A], ys: &[B]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "paired samples");
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    let mut joint: HashMap<(&A, &B), u64> = HashMap::new();
    let mut px: HashMap<&A, u64> = HashMap::new();
    let mut py: HashMap<&B, u64> = HashMap::new();
    for (x, y) in xs.iter().zip(ys) {
        *joint.entry((x, y)).or_default() += 1;
        *px.entry(x).or_default() += 1;
        *py.entry(y).or_default() += 1;
    }
    let n = n as u64;
    // Sum in a fixed order so the result does not depend on hash iteration.
    let mut terms: Vec<(u64, u64, u64)> = joint
        .iter()
        .map(|((x, y), &nxy)| (nxy, px[x], py[y]))
        .collect();
    terms.sort_unstable();
    let mi: f64 = terms
        .into_iter()
        .map(|(nxy, nx, ny)| {
            let ratio = (nxy as u128 * n as u128) as f64 / (nx as u128 * ny as u128) as f64;
            nxy as f64 / n as f64 * ratio.ln()
        })
        .sum();
    mi.max(0.0)
}

/// Plug-in entropy in nats.
pub fn entropy<A: Eq + Hash>(xs: &[A]) -> f64 {
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    let mut counts: HashMap<&A, u64> = HashMap::new();
    for x in xs {
        *counts.entry(x).or_default() += 1;
    }
    let mut c: Vec<u64> = counts.into_values().collect();
    c.sort_unstable();
    c.into_iter()
        .map(|k| {
            let p = k as f64 / n as f64;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Equal-frequency bin per value, using `min(MAX_BINS, #distinct)` bins.
/// Tied values always share a bin.
pub fn equal_frequency_bins(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    if n == 0 {
        return vec![];
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let bins = MAX_BINS.min(distinct.len());
    values
        .iter()
        .map(|v| {
            // rank of the first occurrence of v
            let rank = sorted.partition_point(|s| s.total_cmp(v).is_lt());
            (rank * bins / n).min(bins - 1)
        })
        .collect()
}

/// Discretizes one feature column: booleans and categories by value, numbers by
/// equal-frequency bins over observed values, Missing as its own bucket.
pub fn discretize(matrix: &FeatureMatrix, feature: usize) -> Vec<Bucket> {
    let numeric: Vec<f64> = matrix
        .column(feature)
        .filter_map(|v| match v {
            FeatureValue::Integer(i) => Some(*i as f64),
            FeatureValue::Real(x) => Some(*x),
            _ => None,
        })
        .collect();
    let mut bins = equal_frequency_bins(&numeric).into_iter();
    matrix
        .column(feature)
        .map(|v| match v {
            FeatureValue::Missing(_) => Bucket::Missing,
            FeatureValue::Boolean(b) => Bucket::Bool(*b),
            FeatureValue::Categorical(c) => Bucket::Category(c.clone()),
            FeatureValue::Integer(_) | FeatureValue::Real(_) => Bucket::Bin(bins.next().expect("one bin per numeric value")),
        })
        .collect()
}

/// MI between feature `feature` (by schema position) and the row labels.
pub fn mutual_information(matrix: &FeatureMatrix, feature: usize) -> f64 {
    let xs = discretize(matrix, feature);
    let ys: Vec<&str> = matrix.rows().iter().map(|r| r.label.as_str()).collect();
    discrete_mi(&xs, &ys)
}

pub fn mutual_information_by_name(matrix: &FeatureMatrix, name: &str) -> Option<f64> {
    matrix
        .feature_set()
        .position(name)
        .map(|j| mutual_information(matrix, j))
}

/// Entropy of the row labels in nats.
pub fn label_entropy(matrix: &FeatureMatrix) -> f64 {
    let ys: Vec<&str> = matrix.rows().iter().map(|r| r.label.as_str()).collect();
    entropy(&ys)
}
