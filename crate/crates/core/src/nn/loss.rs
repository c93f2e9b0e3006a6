use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Mean softmax cross-entropy over a `[classes, batch]` logit tensor.
///
/// Returns the loss, d(loss)/d(logits) and the number of correct argmax predictions.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> (T, Tensor<T>, usize) {
    let (classes, n) = (logits.channels, logits.batch);
    assert_eq!(logits.plane(), 1, "logits must be flat");
    assert_eq!(labels.len(), n, "one label per batch column");
    let inv_n = T::one() / T::of_usize(n);
    let mut grad = logits.zeros_like();
    let mut loss = T::zero();
    let mut correct = 0;
    for (b, &label) in labels.iter().enumerate() {
        assert!(label < classes, "label {label} outside {classes} classes");
        let col = |c: usize| logits.data[c * n + b];
        let (best, max) = (0..classes).fold((0, T::neg_infinity()), |(bi, bv), c| if col(c) > bv { (c, col(c)) } else { (bi, bv) });
        if best == label {
            correct += 1;
        }
        let denom: T = (0..classes).map(|c| (col(c) - max).exp()).sum();
        let log_denom = denom.ln();
        loss += -(col(label) - max - log_denom);
        for c in 0..classes {
            let p = (col(c) - max - log_denom).exp();
            let target = if c == label { T::one() } else { T::zero() };
            grad.data[c * n + b] = (p - target) * inv_n;
        }
    }
    (loss * inv_n, grad, correct)
}

/// Index of the largest entry per batch column; ties resolve to the smaller index.
pub fn argmax_columns<T: Scalar>(scores: &Tensor<T>) -> Vec<usize> {
    let (classes, n) = (scores.channels, scores.batch);
    (0..n)
        .map(|b| {
            let mut best = 0;
            for c in 1..classes {
                if scores.data[c * n + b] > scores.data[best * n + b] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_classes() {
        let logits = Tensor::<f64>::zeros(4, 2, 1, 1);
        let (loss, grad, _) = softmax_cross_entropy(&logits, &[0, 3]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        // column sums of the gradient vanish
        for b in 0..2 {
            let s: f64 = (0..4).map(|c| grad.data[c * 2 + b]).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_prefers_lower_index_on_ties() {
        let t = Tensor::from_vec(3, 1, 1, 1, vec![1.0f32, 1.0, 0.5]);
        assert_eq!(argmax_columns(&t), vec![0]);
    }
}
