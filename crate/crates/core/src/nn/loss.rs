/// Training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SoftmaxCrossEntropy { target: usize },
}

/// Scalar differentiated by [`ClassifierModel::input_gradient`](super::ClassifierModel::input_gradient).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Loss(LossKind),
    /// The largest logit; ties resolve to the lowest class index.
    MaxLogit,
}

impl Objective {
    pub fn cross_entropy(target: usize) -> Self {
        Objective::Loss(LossKind::SoftmaxCrossEntropy { target })
    }
}

/// Numerically stable softmax cross-entropy and its gradient w.r.t. logits.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[target];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[target] -= 1.0;
    (loss, grad)
}
