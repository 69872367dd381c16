use super::tensor::Real;
use super::{NeuralError, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against class `target`.
///
/// Returns the loss and `softmax(logits) - onehot(target)`.
pub fn softmax_xent<F: Real>(logits: &[F], target: usize) -> Result<(F, Vec<F>)> {
    if target >= logits.len() {
        return Err(NeuralError::TargetOutOfRange {
            target,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let shifted: Vec<F> = logits.iter().map(|&z| z - max).collect();
    let sum: F = shifted.iter().map(|&z| z.exp()).sum();
    let log_sum = sum.ln();
    let loss = log_sum - shifted[target];
    let mut grad: Vec<F> = shifted.iter().map(|&z| (z - log_sum).exp()).collect();
    grad[target] -= F::one();
    Ok((loss, grad))
}
