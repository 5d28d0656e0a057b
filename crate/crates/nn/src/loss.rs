//! Losses. Each returns the scalar loss and the gradient with respect to
//! its first argument, with reductions accumulated in f64.

use ndarray::{Array2, ArrayD, Ix2};

use crate::sigmoid_scalar;

/// Tversky loss over soft predictions in `[0, 1]`:
/// `1 - (TP + eps) / (TP + alpha*FP + beta*FN + eps)` with soft counts
/// `TP = sum(p*g)`, `FP = sum(p*(1-g))`, `FN = sum((1-p)*g)`.
///
/// `alpha = beta = 0.5` recovers the Dice loss. Returns the loss and
/// `dL/dp` elementwise.
pub fn tversky_loss(
    pred: &ArrayD<f32>,
    target: &ArrayD<f32>,
    alpha: f64,
    beta: f64,
    eps: f64,
) -> (f64, ArrayD<f32>) {
    assert_eq!(pred.shape(), target.shape(), "tversky: shape mismatch");
    let mut tp = 0.0f64;
    let mut fp = 0.0f64;
    let mut fneg = 0.0f64;
    for (&p, &g) in pred.iter().zip(target.iter()) {
        let (p, g) = (p as f64, g as f64);
        tp += p * g;
        fp += p * (1.0 - g);
        fneg += (1.0 - p) * g;
    }
    let num = tp + eps;
    let den = tp + alpha * fp + beta * fneg + eps;
    let loss = 1.0 - num / den;
    let den2 = den * den;
    let grad = ndarray::Zip::from(pred)
        .and(target)
        .map_collect(|&_p, &g| {
            let g = g as f64;
            let dnum = g;
            let dden = g + alpha * (1.0 - g) - beta * g;
            (-(dnum * den - num * dden) / den2) as f32
        });
    (loss, grad)
}

/// Mean binary cross-entropy computed from logits, with the usual
/// log-sum-exp stabilization. Returns `dL/dlogits`.
pub fn bce_with_logits(logits: &ArrayD<f32>, target: &ArrayD<f32>) -> (f64, ArrayD<f32>) {
    assert_eq!(logits.shape(), target.shape(), "bce: shape mismatch");
    let n = logits.len() as f64;
    assert!(n > 0.0, "bce: empty input");
    let mut loss = 0.0f64;
    for (&z, &t) in logits.iter().zip(target.iter()) {
        let (z, t) = (z as f64, t as f64);
        loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
    }
    loss /= n;
    let grad = ndarray::Zip::from(logits)
        .and(target)
        .map_collect(|&z, &t| ((sigmoid_scalar(z) as f64 - t as f64) / n) as f32);
    (loss, grad)
}

/// Mean softmax cross-entropy over `[N, K]` logits against class indices.
/// Returns `dL/dlogits`.
pub fn softmax_cross_entropy(logits: &ArrayD<f32>, classes: &[usize]) -> (f64, ArrayD<f32>) {
    let z = logits
        .view()
        .into_dimensionality::<Ix2>()
        .expect("softmax loss expects [N, K] logits");
    let (n, k) = z.dim();
    assert_eq!(n, classes.len(), "softmax loss: batch size mismatch");
    assert!(n > 0, "softmax loss: empty batch");
    let probs = softmax_rows_view(&z);
    let mut loss = 0.0f64;
    let mut grad = probs.clone();
    for (i, &cls) in classes.iter().enumerate() {
        assert!(cls < k, "softmax loss: class {cls} out of range");
        loss -= (probs[[i, cls]] as f64).max(1e-30).ln();
        grad[[i, cls]] -= 1.0;
    }
    loss /= n as f64;
    grad.mapv_inplace(|v| v / n as f32);
    (loss, grad.into_dyn())
}

fn softmax_rows_view(z: &ndarray::ArrayView2<f32>) -> Array2<f32> {
    let (n, k) = z.dim();
    let mut out = Array2::<f32>::zeros((n, k));
    for i in 0..n {
        let row = z.row(i);
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for &v in row {
            sum += ((v - m) as f64).exp();
        }
        for (j, &v) in row.iter().enumerate() {
            out[[i, j]] = (((v - m) as f64).exp() / sum) as f32;
        }
    }
    out
}

/// Row-wise softmax of `[N, K]` scores.
pub fn softmax_rows(z: &Array2<f32>) -> Array2<f32> {
    softmax_rows_view(&z.view())
}
