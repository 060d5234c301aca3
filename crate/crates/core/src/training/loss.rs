use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
}

/// `W_c = (N_max / N_c)^β`: the most frequent class gets exactly 1.
pub fn compute_class_weights(counts: &[usize], beta: f64) -> Result<ClassWeights, TrainError> {
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(TrainError::ZeroClassCount { class });
    }
    let max = counts.iter().copied().max().unwrap_or(1) as f64;
    Ok(ClassWeights {
        weights: counts
            .iter()
            .map(|&c| {
                let ratio = max / c as f64;
                if ratio == 1.0 {
                    1.0
                } else {
                    ratio.powf(beta)
                }
            })
            .collect(),
    })
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

fn smoothed_target(k: usize, target: usize, eps: f64) -> impl Fn(usize) -> f64 {
    let off = eps / k as f64;
    let on = 1.0 - eps + off;
    move |c| if c == target { on } else { off }
}

/// `W_target · (−Σ_c q_c log softmax(logits)_c)` with
/// `q = (1−ε+ε/K on the target, ε/K elsewhere)`.
pub fn smoothed_weighted_ce(logits: &[f64], target: usize, weights: &ClassWeights, eps: f64) -> Result<f64, TrainError> {
    let k = logits.len();
    if target >= k || weights.weights.len() != k {
        return Err(TrainError::BadTarget { target, num_classes: k });
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(TrainError::NonFiniteLogits);
    }
    let q = smoothed_target(k, target, eps);
    let ls = log_softmax(logits);
    Ok(weights.weights[target] * -(0..k).map(|c| q(c) * ls[c]).sum::<f64>())
}

/// Batch-mean loss and its gradient with respect to the logits.
pub fn smoothed_weighted_ce_batch(logits: &Array2<f64>, targets: &[usize], weights: &[f64], eps: f64) -> (f64, Array2<f64>) {
    let (b, k) = logits.dim();
    let mut grad = Array2::zeros((b, k));
    let mut total = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let t = targets[i];
        let w = weights[t];
        let q = smoothed_target(k, t, eps);
        let ls = log_softmax(row.as_slice().expect("standard layout"));
        total += w * -(0..k).map(|c| q(c) * ls[c]).sum::<f64>();
        for c in 0..k {
            grad[[i, c]] = w * (ls[c].exp() - q(c)) / b as f64;
        }
    }
    (total / b as f64, grad)
}
