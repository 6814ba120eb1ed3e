//! Helpers shared by the integration test binaries.
#![allow(dead_code)]

use freqadv_core::analysis::average_ranks;
use freqadv_core::data::{generate_synthetic, Dataset, Normalization, SyntheticSpec};
use freqadv_core::nn::{softmax_cross_entropy, ClassifierModel, LayerSpec, ModelSpec};
use freqadv_core::training::{train, TrainConfig};
use freqadv_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS_8: f64 = 8.0 / 255.0;
pub const ALPHA_2: f64 = 2.0 / 255.0;

/// Conv, ReLU, max-pool, flatten and dense layers in one small network.
pub fn every_layer_spec() -> ModelSpec {
    use LayerSpec::*;
    ModelSpec {
        input: (2, 8, 8),
        layers: vec![
            Conv3x3 { out: 3 },
            Relu,
            MaxPool2,
            Conv3x3 { out: 4 },
            Relu,
            MaxPool2,
            Flatten,
            Dense { out: 6 },
            Relu,
            Dense { out: 3 },
        ],
    }
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose one-sided differences disagree, i.e. where the
    /// function has a ReLU or max-pool kink within the probe step.
    pub kinks: usize,
}

impl FdReport {
    fn merge(&mut self, other: FdReport) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.checked += other.checked;
        self.kinks += other.kinks;
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central-difference probe of `f` at every coordinate of `x` against the
/// analytic gradient `grad`.
fn probe(x: &mut [f64], grad: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> FdReport {
    const H: f64 = 1e-6;
    let mut rep = FdReport::default();
    let f0 = f(x);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + H;
        let fp = f(x);
        x[i] = orig - H;
        let fm = f(x);
        x[i] = orig;
        let fwd = (fp - f0) / H;
        let bwd = (f0 - fm) / H;
        if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-3) {
            rep.kinks += 1;
            continue;
        }
        rep.checked += 1;
        rep.max_rel_err = rep.max_rel_err.max(rel_err(grad[i], (fp - fm) / (2.0 * H)));
    }
    rep
}

/// Finite-difference check of input and parameter gradients of the
/// cross-entropy loss for a randomly initialised model.
pub fn finite_difference_check(spec: &ModelSpec, seed: u64) -> FdReport {
    let model = ClassifierModel::new(spec.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let (c, h, w) = spec.input;
    let n = c * h * w;
    let classes = model.classes();
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let label = rng.random_range(0..classes);

    let loss_at = |m: &ClassifierModel, x: &[f64]| softmax_cross_entropy(&m.logits(x).unwrap(), label).0;

    let (_, gx) = model
        .objective_and_input_gradient(&x, freqadv_core::nn::Objective::cross_entropy(label))
        .unwrap();
    let mut rep = probe(&mut x, &gx, |xx| loss_at(&model, xx));

    let batch = Tensor::new(vec![1, c, h, w], x.clone()).unwrap();
    let (_, gp) = model.loss_and_param_grad(&batch, &[label]).unwrap();
    let mut params = model.params().to_vec();
    let spec2 = spec.clone();
    let prep = probe(&mut params, &gp, |p| {
        let m = ClassifierModel::from_params(spec2.clone(), p.to_vec()).unwrap();
        loss_at(&m, &x)
    });
    rep.merge(prep);
    rep
}

pub struct Fixture {
    pub spec: SyntheticSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub norm: Normalization,
    pub init: ClassifierModel,
    pub cfg: TrainConfig,
}

pub fn synthetic_fixture() -> Fixture {
    let spec = SyntheticSpec::default();
    let (train, test) = generate_synthetic(&spec).unwrap();
    let norm = Normalization::from_dataset(&train).unwrap();
    let init = ClassifierModel::new(ModelSpec::mlp(spec.shape, &[64], spec.classes), 1).unwrap();
    let cfg = TrainConfig {
        epochs: 15,
        lr: 0.02,
        batch_size: 32,
        seed: 1,
        eval_every: 15,
        eval_samples: 200,
        ..TrainConfig::default()
    };
    Fixture {
        spec,
        train,
        test,
        norm,
        init,
        cfg,
    }
}

pub fn train_standard(f: &Fixture) -> ClassifierModel {
    train(f.init.clone(), &f.train, &f.test, &f.norm, &f.cfg).unwrap().model
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&ra), mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}
