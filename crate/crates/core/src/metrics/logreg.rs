//! Multinomial logistic regression trained full-batch with L-BFGS directions
//! and Armijo backtracking.
//!
//! Objective: `sum_i -log softmax(W x_i + b)[y_i] + (l2 / 2) * ||W||^2`.
//! The bias is not regularized. Parameters are flattened as `W` (row-major,
//! `C x p`) followed by `b` (`C`).

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::encode::EncodedMatrix;
use super::MetricsError;

const LBFGS_MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
/// Consecutive accepted steps with negligible decrease before giving up.
const STALL_LIMIT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
    /// Objective value at the start and after every accepted step.
    #[serde(skip)]
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub classes: Vec<String>,
    /// `C x p`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub l2: f64,
    pub diagnostics: Diagnostics,
}

impl ClassifierModel {
    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weights.dot(&x) + &self.bias
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t()) + &self.bias;
        for mut row in z.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        z
    }

    /// Arg-max class per row; ties go to the lowest class index.
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        let z = x.dot(&self.weights.t()) + &self.bias;
        z.rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// Objective value and gradient at flattened parameters `theta`.
pub fn loss_and_grad(
    theta: &[f64],
    x: ArrayView2<f64>,
    labels: &[usize],
    n_classes: usize,
    l2: f64,
) -> (f64, Vec<f64>) {
    let p = x.ncols();
    let (w_flat, b) = theta.split_at(n_classes * p);
    let w = ArrayView2::from_shape((n_classes, p), w_flat).expect("theta shape");
    let b = ArrayView1::from(b);

    let mut z = x.dot(&w.t()) + b;
    let mut loss = 0.0;
    for (mut r, &y) in z.rows_mut().into_iter().zip(labels) {
        let max = r.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + r.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - r[y];
        r.mapv_inplace(|v| (v - lse).exp());
        r[y] -= 1.0;
    }
    // z now holds P - Y
    let gw = z.t().dot(&x) + &(&w * l2);
    let gb = z.sum_axis(ndarray::Axis(0));
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();

    let mut grad: Vec<f64> = gw.iter().copied().collect();
    grad.extend(gb.iter());
    (loss, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// L-BFGS two-loop recursion: approximates `-H g`.
fn lbfgs_direction(grad: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

type Step = (Vec<f64>, f64, Vec<f64>);

/// Halves the step until the Armijo condition holds.
fn backtrack(
    eval: &impl Fn(&[f64]) -> (f64, Vec<f64>),
    theta: &[f64],
    dir: &[f64],
    loss: f64,
    slope: f64,
    mut step: f64,
) -> Option<Step> {
    for _ in 0..MAX_BACKTRACKS {
        let cand: Vec<f64> = theta.iter().zip(dir).map(|(t, d)| t + step * d).collect();
        let (l, g) = eval(&cand);
        if l.is_finite() && l <= loss + ARMIJO_C1 * step * slope {
            return Some((cand, l, g));
        }
        step *= 0.5;
    }
    None
}

/// Fits a multinomial logistic regression on an encoded matrix.
pub fn train_logreg(
    enc: &EncodedMatrix,
    classes: &[String],
    l2: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ClassifierModel, MetricsError> {
    let n_classes = classes.len();
    if n_classes != enc.n_classes {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} class names for an encoding with {} classes",
            n_classes, enc.n_classes
        )));
    }
    if n_classes < 2 || enc.n_rows() < n_classes {
        return Err(MetricsError::TooFewRows(enc.n_rows()));
    }
    let p = enc.n_cols();
    let x = enc.x.view();
    let labels = &enc.labels;
    let eval = |theta: &[f64]| loss_and_grad(theta, x, labels, n_classes, l2);

    let mut theta = vec![0.0; n_classes * p + n_classes];
    let (mut loss, mut grad) = eval(&theta);
    let mut history = vec![loss];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = inf_norm(&grad) < tol;
    let mut stalled = 0;

    while !converged && iterations < max_iter {
        let mut dir = lbfgs_direction(&grad, &memory);
        let mut slope = dot(&grad, &dir);
        if slope.is_nan() || slope >= 0.0 {
            memory.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &dir);
        }
        let mut step = if memory.is_empty() {
            (1.0 / inf_norm(&grad)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = backtrack(&eval, &theta, &dir, loss, slope, step);
        if accepted.is_none() && !memory.is_empty() {
            memory.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &dir);
            step = (1.0 / inf_norm(&grad)).min(1.0);
            accepted = backtrack(&eval, &theta, &dir, loss, slope, step);
        }
        let Some((cand, new_loss, new_grad)) = accepted else {
            break;
        };
        if loss - new_loss <= 1e-15 * loss.abs().max(1.0) {
            stalled += 1;
        } else {
            stalled = 0;
        }

        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if memory.len() == LBFGS_MEMORY {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        theta = cand;
        loss = new_loss;
        grad = new_grad;
        history.push(loss);
        iterations += 1;
        converged = inf_norm(&grad) < tol;
        if stalled >= STALL_LIMIT {
            break;
        }
    }

    if !loss.is_finite() || theta.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let (w_flat, b) = theta.split_at(n_classes * p);
    Ok(ClassifierModel {
        classes: classes.to_vec(),
        weights: Array2::from_shape_vec((n_classes, p), w_flat.to_vec()).expect("shape"),
        bias: Array1::from(b.to_vec()),
        l2,
        diagnostics: Diagnostics {
            iterations,
            final_grad_norm: inf_norm(&grad),
            converged,
            loss_history: history,
        },
    })
}
