//! Contrastive and similarity-regression objectives with exact gradients.

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone)]
pub struct InfoNceOutput {
    pub loss: f64,
    pub grad_a: Matrix,
    pub grad_b: Matrix,
}

#[derive(Debug, Clone)]
pub struct StsOutput {
    pub loss: f64,
    /// Gradient with respect to each predicted cosine.
    pub grad: Vec<f64>,
}

/// Cross-entropy of `logits` against `target`, plus the softmax.
///
/// Written as `(max - logit[target]) + ln_1p(sum of the non-max terms)` so
/// that a confidently correct row keeps its tiny loss instead of cancelling
/// to zero.
fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let (arg, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(ai, am), (i, v)| if v > am { (i, v) } else { (ai, am) });
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let rest: f64 = exps
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, e)| e)
        .sum();
    let loss = (max - logits[target]) + rest.ln_1p();
    let z = 1.0 + rest;
    (loss, exps.into_iter().map(|e| e / z).collect())
}

/// Symmetric in-batch InfoNCE over paired rows of `a` and `b`.
///
/// `S = a·bᵀ / temperature`; the loss averages the row-wise and column-wise
/// cross-entropies with the diagonal as target. Swapping `a` and `b` yields
/// bitwise the same loss.
pub fn info_nce_loss(a: &Matrix, b: &Matrix, temperature: f64) -> Result<InfoNceOutput> {
    let n = a.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("InfoNCE needs at least 2 pairs, got {n}")));
    }
    if b.rows() != n || b.cols() != a.cols() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }

    let mut sim = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let s = dot(a.row(i), b.row(j)) / temperature;
            if !s.is_finite() {
                return Err(Error::NonFinite(format!("similarity ({i}, {j})")));
            }
            sim.set(i, j, s);
        }
    }

    // dL/dS, filled from both directions
    let mut grad_sim = Matrix::zeros(n, n);
    let scale = 0.5 / n as f64;

    let mut row_total = 0.0;
    for i in 0..n {
        let (loss, probs) = cross_entropy(sim.row(i), i);
        row_total += loss;
        for (j, p) in probs.into_iter().enumerate() {
            let g = p - f64::from(u8::from(i == j));
            grad_sim.set(i, j, grad_sim.get(i, j) + scale * g);
        }
    }
    let mut col_total = 0.0;
    for j in 0..n {
        let column: Vec<f64> = (0..n).map(|i| sim.get(i, j)).collect();
        let (loss, probs) = cross_entropy(&column, j);
        col_total += loss;
        for (i, p) in probs.into_iter().enumerate() {
            let g = p - f64::from(u8::from(i == j));
            grad_sim.set(i, j, grad_sim.get(i, j) + scale * g);
        }
    }
    let loss = 0.5 * (row_total / n as f64 + col_total / n as f64);

    let d = a.cols();
    let mut grad_a = Matrix::zeros(n, d);
    let mut grad_b = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            let g = grad_sim.get(i, j) / temperature;
            if g == 0.0 {
                continue;
            }
            for (ga, bv) in grad_a.row_mut(i).iter_mut().zip(b.row(j)) {
                *ga += g * bv;
            }
            for (gb, av) in grad_b.row_mut(j).iter_mut().zip(a.row(i)) {
                *gb += g * av;
            }
        }
    }
    Ok(InfoNceOutput { loss, grad_a, grad_b })
}

/// Mean squared error between `(cos + 1) / 2` and the gold score in `[0, 1]`.
pub fn sts_loss(pred_cosines: &[f64], gold_scores: &[f64]) -> Result<StsOutput> {
    let n = pred_cosines.len();
    if n == 0 || gold_scores.len() != n {
        return Err(Error::InvalidArgument(format!(
            "STS loss needs equal non-empty inputs, got {} predictions and {} gold scores",
            n,
            gold_scores.len()
        )));
    }
    if let Some(g) = gold_scores.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::InvalidArgument(format!("gold score {g} outside [0, 1]")));
    }
    if let Some(p) = pred_cosines.iter().find(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("predicted cosine {p}")));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (p, g) in pred_cosines.iter().zip(gold_scores) {
        let diff = 0.5 * (p + 1.0) - g;
        loss += diff * diff;
        // d/dp of diff² is 2·diff·½
        grad.push(diff / n as f64);
    }
    Ok(StsOutput {
        loss: loss / n as f64,
        grad,
    })
}
