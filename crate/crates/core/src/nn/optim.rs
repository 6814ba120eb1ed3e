use super::model::ClassifierModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum and L2 weight decay.
///
/// `v ← μ v + (g + λ θ)`, `θ ← θ − lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr >= 0.0) || !(0.0..1.0).contains(&momentum) || !(weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bad optimiser settings lr={lr} momentum={momentum} weight_decay={weight_decay}"
            )));
        }
        Ok(Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        if self.velocity.len() != params.len() {
            self.velocity = vec![0.0; params.len()];
        }
        for ((p, v), &g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= self.lr * *v;
        }
    }

    /// One optimisation step on a batch. Returns the batch-mean loss measured
    /// before the update.
    pub fn step(&mut self, model: &mut ClassifierModel, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let (loss, grad) = model.loss_and_param_grad(batch, labels)?;
        self.apply(model.params_mut(), &grad);
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;

    fn separable_pair() -> (Tensor, Vec<usize>) {
        let mut a = vec![0.0; 64];
        let mut b = vec![0.0; 64];
        a[0] = 1.0;
        b[1] = 1.0;
        (Tensor::new(vec![2, 1, 8, 8], [a, b].concat()).unwrap(), vec![0, 1])
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut m = ClassifierModel::new(ModelSpec::mlp((1, 8, 8), &[5], 2), 1).unwrap();
        let before = m.params().to_vec();
        let (x, y) = separable_pair();
        let mut opt = Sgd::new(0.0, 0.9, 5e-4).unwrap();
        for _ in 0..3 {
            opt.step(&mut m, &x, &y).unwrap();
        }
        assert_eq!(m.params(), &before[..]);
    }

    #[test]
    fn convex_problem_descends() {
        let mut m = ClassifierModel::new(ModelSpec::linear((1, 8, 8), 2), 4).unwrap();
        let (x, y) = separable_pair();
        let mut opt = Sgd::new(0.1, 0.0, 0.0).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let loss = opt.step(&mut m, &x, &y).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
    }

    #[test]
    fn plain_step_matches_analytic_gradient() {
        // Softmax regression: dL/dW = (softmax(Wx + b) - onehot) xᵀ.
        let m0 = ClassifierModel::new(ModelSpec::linear((1, 8, 8), 3), 9).unwrap();
        let x: Vec<f64> = (0..64).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        let w = m0.params();
        let z: Vec<f64> = (0..3)
            .map(|o| w[192 + o] + (0..64).map(|i| w[o * 64 + i] * x[i]).sum::<f64>())
            .collect();
        let zmax = z.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
        let s: f64 = e.iter().sum();
        let mut expected = w.to_vec();
        let lr = 0.3;
        for o in 0..3 {
            let d = e[o] / s - if o == 1 { 1.0 } else { 0.0 };
            for i in 0..64 {
                expected[o * 64 + i] -= lr * d * x[i];
            }
            expected[192 + o] -= lr * d;
        }
        let mut m = m0.clone();
        let mut opt = Sgd::new(lr, 0.0, 0.0).unwrap();
        opt.step(&mut m, &Tensor::new(vec![1, 1, 8, 8], x).unwrap(), &[1])
            .unwrap();
        for (a, b) in m.params().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn label_out_of_range() {
        let mut m = ClassifierModel::new(ModelSpec::linear((1, 8, 8), 2), 4).unwrap();
        let (x, _) = separable_pair();
        let mut opt = Sgd::new(0.1, 0.9, 0.0).unwrap();
        assert!(opt.step(&mut m, &x, &[0, 2]).is_err());
    }
}
