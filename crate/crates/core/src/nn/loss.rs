use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::network::sigmoid;

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Sigmoid outputs against a multi-hot target.
    Bce,
    Mse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient with respect to the network's final (pre-sigmoid) output.
    pub grad: Array2<f64>,
}

impl LossKind {
    pub fn evaluate(self, logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> LossOutput {
        match self {
            LossKind::Bce => bce_loss(logits.mapv(sigmoid).view(), targets),
            LossKind::Mse => mse_loss(logits, targets),
        }
    }

    /// Per-entry contributions to the loss, already divided by the batch
    /// size; they sum to [`evaluate`](Self::evaluate)'s loss up to rounding.
    pub fn elementwise(self, logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(logits.dim(), targets.dim(), "loss shapes differ");
        let batch = logits.nrows().max(1) as f64;
        let mut out = Array2::zeros(logits.dim());
        Zip::from(&mut out).and(&logits).and(&targets).for_each(|o, &z, &h| {
            *o = match self {
                LossKind::Bce => {
                    let p = sigmoid(z).clamp(CLAMP, 1.0 - CLAMP);
                    -(h * p.ln() + (1.0 - h) * (1.0 - p).ln()) / batch
                }
                LossKind::Mse => (z - h) * (z - h) / batch,
            }
        });
        out
    }
}

/// Binary cross-entropy summed over classes and averaged over the batch.
/// The gradient is taken with respect to the logits: `(h_hat - h) / batch`.
pub fn bce_loss(outputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> LossOutput {
    assert_eq!(outputs.dim(), targets.dim(), "bce shapes differ");
    let batch = outputs.nrows().max(1) as f64;
    let mut total = 0.0;
    Zip::from(&outputs).and(&targets).for_each(|&p, &h| {
        let p = p.clamp(CLAMP, 1.0 - CLAMP);
        total -= h * p.ln() + (1.0 - h) * (1.0 - p).ln();
    });
    let grad = (&outputs - &targets) / batch;
    LossOutput {
        loss: total / batch,
        grad,
    }
}

/// Squared Euclidean error averaged over the batch; gradient `2 (pred - target) / batch`.
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> LossOutput {
    assert_eq!(pred.dim(), target.dim(), "mse shapes differ");
    let batch = pred.nrows().max(1) as f64;
    let diff = &pred - &target;
    let loss = diff.mapv(|d| d * d).sum() / batch;
    LossOutput {
        loss,
        grad: diff * (2.0 / batch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bce_half_probability() {
        let out = bce_loss(array![[0.5]].view(), array![[1.0]].view());
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((out.grad[[0, 0]] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn bce_perfect_prediction() {
        let out = bce_loss(array![[1.0, 0.0]].view(), array![[1.0, 0.0]].view());
        assert!(out.loss < 1e-11);
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_examples() {
        let zero = mse_loss(array![[1.0, 2.0]].view(), array![[1.0, 2.0]].view());
        assert_eq!(zero.loss, 0.0);
        let out = mse_loss(array![[0.0, 0.0]].view(), array![[3.0, 4.0]].view());
        assert_eq!(out.loss, 25.0);
        assert_eq!(out.grad, array![[-6.0, -8.0]]);
    }

    #[test]
    fn elementwise_terms_sum_to_loss() {
        let logits = array![[0.3, -2.0, 5.0], [1.5, 0.0, -0.7]];
        let targets = array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        for kind in [LossKind::Bce, LossKind::Mse] {
            let total = kind.evaluate(logits.view(), targets.view()).loss;
            let terms = kind.elementwise(logits.view(), targets.view());
            assert!((terms.sum() - total).abs() < 1e-12, "{kind:?}");
        }
    }
}
