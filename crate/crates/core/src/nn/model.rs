use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::layers::{self, LayerSpec, Shape3};
use super::loss::{softmax_cross_entropy, LossKind, Objective};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// Architecture descriptor: input shape plus a layer stack.
///
/// Text form: `1x32x32:flatten,dense64,relu,dense4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input: Shape3,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Fully connected network with ReLU between hidden layers.
    pub fn mlp(input: Shape3, hidden: &[usize], classes: usize) -> Self {
        let mut layers = vec![LayerSpec::Flatten];
        for &h in hidden {
            layers.push(LayerSpec::Dense { out: h });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { out: classes });
        ModelSpec { input, layers }
    }

    /// Two conv-relu-pool blocks followed by a dense head.
    pub fn small_cnn(input: Shape3, channels: (usize, usize), classes: usize) -> Self {
        use LayerSpec::*;
        ModelSpec {
            input,
            layers: vec![
                Conv3x3 { out: channels.0 },
                Relu,
                MaxPool2,
                Conv3x3 { out: channels.1 },
                Relu,
                MaxPool2,
                Flatten,
                Dense { out: classes },
            ],
        }
    }

    /// Single dense layer, i.e. a linear (affine) classifier.
    pub fn linear(input: Shape3, classes: usize) -> Self {
        Self::mlp(input, &[], classes)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (c, h, w) = self.input;
        write!(f, "{c}x{h}x{w}:")?;
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("malformed model descriptor {s:?}"));
        let (shape, layers) = s.split_once(':').ok_or_else(bad)?;
        let dims: Vec<usize> = shape
            .split('x')
            .map(|d| d.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [c, h, w] = dims[..] else {
            return Err(bad());
        };
        let layers = layers.split(',').map(str::parse).collect::<Result<Vec<LayerSpec>>>()?;
        Ok(ModelSpec {
            input: (c, h, w),
            layers,
        })
    }
}

#[derive(Debug, Clone)]
struct LayerSlot {
    spec: LayerSpec,
    input: Shape3,
    offset: usize,
    len: usize,
}

/// Differentiable image classifier with a flat parameter vector.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    spec: ModelSpec,
    slots: Vec<LayerSlot>,
    classes: usize,
    params: Vec<f64>,
}

/// Activations recorded by a single-sample forward pass.
///
/// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().expect("trace has an input")
    }
}

impl ClassifierModel {
    /// Builds the model with all parameters zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let (c, h, w) = spec.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("empty input shape {:?}", spec.input)));
        }
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Shape(format!(
                "input height and width must be multiples of 8, got {h}x{w}"
            )));
        }
        let mut slots = Vec::with_capacity(spec.layers.len());
        let mut shape = spec.input;
        let mut offset = 0;
        for layer in &spec.layers {
            let len = layer.param_count(shape);
            slots.push(LayerSlot {
                spec: *layer,
                input: shape,
                offset,
                len,
            });
            offset += len;
            shape = layer.output_shape(shape)?;
        }
        if shape.1 != 1 || shape.2 != 1 || !matches!(spec.layers.last(), Some(LayerSpec::Dense { .. })) {
            return Err(Error::Shape(format!(
                "model must end in a dense layer, final shape {shape:?}"
            )));
        }
        Ok(ClassifierModel {
            classes: shape.0,
            spec,
            slots,
            params: vec![0.0; offset],
        })
    }

    /// He-normal weights drawn from the `Init` stream of `seed`, zero biases.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        let mut rng = rng::stream(seed, Stream::Init);
        for slot in &model.slots {
            let fan_in = slot.spec.fan_in(slot.input);
            if fan_in == 0 {
                continue;
            }
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let nw = slot.spec.weight_count(slot.input);
            for p in &mut model.params[slot.offset..slot.offset + nw] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(model)
    }

    pub fn from_params(spec: ModelSpec, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        if params.len() != model.params.len() {
            return Err(Error::Shape(format!(
                "model needs {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> Shape3 {
        self.spec.input
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Parameter range `(offset, len)` of each layer.
    pub fn layer_param_ranges(&self) -> Vec<(LayerSpec, usize, usize)> {
        self.slots.iter().map(|s| (s.spec, s.offset, s.len)).collect()
    }

    fn sample_len(&self) -> usize {
        let (c, h, w) = self.spec.input;
        c * h * w
    }

    fn check_sample(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.sample_len() {
            return Err(Error::Shape(format!(
                "model expects {:?} samples ({} values), got {}",
                self.spec.input,
                self.sample_len(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Splits a `(C,H,W)` or `(B,C,H,W)` tensor into per-sample slices.
    fn samples<'a>(&self, x: &'a Tensor) -> Result<Vec<&'a [f64]>> {
        let (c, h, w) = self.spec.input;
        let s = x.shape();
        let ok = match s.len() {
            3 => s == [c, h, w],
            4 => s[1..] == [c, h, w],
            _ => false,
        };
        if !ok {
            return Err(Error::Shape(format!(
                "expected (B, {c}, {h}, {w}) or ({c}, {h}, {w}), got {s:?}"
            )));
        }
        Ok(x.data().chunks(self.sample_len()).collect())
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_sample(x)?;
        let mut activations = Vec::with_capacity(self.slots.len() + 1);
        activations.push(x.to_vec());
        for slot in &self.slots {
            let p = &self.params[slot.offset..slot.offset + slot.len];
            let y = layers::forward(&slot.spec, slot.input, p, activations.last().unwrap());
            activations.push(y);
        }
        let trace = Trace { activations };
        if !trace.logits().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("forward pass".into()));
        }
        Ok(trace)
    }

    /// Logits for one sample given as a flat slice.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.activations.pop().unwrap())
    }

    /// Logits for a `(B,C,H,W)` batch, shape `(B, classes)`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        if batch.ndim() != 4 {
            return Err(Error::Shape(format!(
                "forward expects a (B, C, H, W) batch, got {:?}",
                batch.shape()
            )));
        }
        let samples = self.samples(batch)?;
        let rows: Vec<Vec<f64>> = samples.par_iter().map(|x| self.logits(x)).collect::<Result<_>>()?;
        Tensor::new(vec![rows.len(), self.classes], rows.into_iter().flatten().collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Back-propagates `dlogits` through a recorded trace.
    pub fn backward(&self, trace: &Trace, dlogits: &[f64], mut dparams: Option<&mut [f64]>) -> Result<Vec<f64>> {
        let mut dy = dlogits.to_vec();
        for (i, slot) in self.slots.iter().enumerate().rev() {
            let p = &self.params[slot.offset..slot.offset + slot.len];
            let dp = dparams
                .as_deref_mut()
                .map(|d| &mut d[slot.offset..slot.offset + slot.len]);
            dy = layers::backward(&slot.spec, slot.input, p, &trace.activations[i], &dy, dp);
        }
        if !dy.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("input gradient".into()));
        }
        Ok(dy)
    }

    /// Objective value and its gradient w.r.t. one input sample.
    pub fn objective_and_input_gradient(&self, x: &[f64], objective: Objective) -> Result<(f64, Vec<f64>)> {
        let trace = self.trace(x)?;
        let (value, dlogits) = self.objective_grad(trace.logits(), objective)?;
        Ok((value, self.backward(&trace, &dlogits, None)?))
    }

    fn objective_grad(&self, logits: &[f64], objective: Objective) -> Result<(f64, Vec<f64>)> {
        match objective {
            Objective::Loss(LossKind::SoftmaxCrossEntropy { target }) => {
                if target >= self.classes {
                    return Err(Error::InvalidArgument(format!(
                        "target {target} out of range for {} classes",
                        self.classes
                    )));
                }
                Ok(softmax_cross_entropy(logits, target))
            }
            Objective::MaxLogit => {
                let k = argmax(logits);
                let mut d = vec![0.0; logits.len()];
                d[k] = 1.0;
                Ok((logits[k], d))
            }
        }
    }

    /// Gradient of the objective w.r.t. the input. Accepts a single `(C,H,W)`
    /// sample or a `(B,C,H,W)` batch; for a batch each sample is
    /// differentiated independently with the same objective.
    pub fn input_gradient(&self, x: &Tensor, objective: Objective) -> Result<Tensor> {
        let samples = self.samples(x)?;
        let grads: Vec<Vec<f64>> = samples
            .par_iter()
            .map(|s| self.objective_and_input_gradient(s, objective).map(|(_, g)| g))
            .collect::<Result<_>>()?;
        Tensor::new(x.shape().to_vec(), grads.into_iter().flatten().collect())
    }

    /// Mean cross-entropy over the batch and its gradient w.r.t. parameters.
    ///
    /// Per-sample gradients are computed in parallel and reduced in sample
    /// order, so the result does not depend on the thread count.
    pub fn loss_and_param_grad(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        let samples = self.samples(batch)?;
        if samples.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        const CHUNK: usize = 8;
        let partials: Vec<(f64, Vec<f64>)> = samples
            .par_chunks(CHUNK)
            .zip(labels.par_chunks(CHUNK))
            .map(|(xs, ys)| {
                let mut grad = vec![0.0; self.params.len()];
                let mut loss = 0.0;
                for (x, &y) in xs.iter().zip(ys) {
                    let trace = self.trace(x)?;
                    let (l, dlogits) = softmax_cross_entropy(trace.logits(), y);
                    loss += l;
                    self.backward(&trace, &dlogits, Some(&mut grad))?;
                }
                Ok((loss, grad))
            })
            .collect::<Result<_>>()?;
        let n = labels.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (l, g) in partials {
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        if !grad.iter().all(|g| g.is_finite()) || !loss.is_finite() {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        Ok((loss / n, grad))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_text_round_trip() {
        let s = ModelSpec::small_cnn((3, 32, 32), (8, 16), 10);
        assert_eq!(
            s.to_string(),
            "3x32x32:conv8,relu,pool,conv16,relu,pool,flatten,dense10"
        );
        assert_eq!(s.to_string().parse::<ModelSpec>().unwrap(), s);
        assert!("3x32:dense4".parse::<ModelSpec>().is_err());
        assert!("1x8x8:dense0".parse::<ModelSpec>().is_err());
        assert!("1x8x8:mystery".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ClassifierModel::zeros(ModelSpec::mlp((1, 12, 16), &[], 2)).is_err());
        let no_head = ModelSpec {
            input: (1, 8, 8),
            layers: vec![LayerSpec::Conv3x3 { out: 2 }],
        };
        assert!(ClassifierModel::zeros(no_head).is_err());
        let m = ClassifierModel::zeros(ModelSpec::mlp((1, 8, 8), &[], 3)).unwrap();
        assert!(m.forward(&Tensor::zeros(&[2, 1, 8, 16])).is_err());
        assert!(m.forward(&Tensor::zeros(&[1, 8, 8])).is_err());
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = ClassifierModel::zeros(ModelSpec::small_cnn((1, 16, 16), (2, 3), 4)).unwrap();
        let x = Tensor::from_fn(&[3, 1, 16, 16], |i| (i as f64).sin());
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_dense_layer() {
        // 1x8x8 input whose first three pixels feed an identity map.
        let spec = ModelSpec::linear((1, 8, 8), 3);
        let mut params = vec![0.0; 3 * 64 + 3];
        for i in 0..3 {
            params[i * 64 + i] = 1.0;
        }
        let m = ClassifierModel::from_params(spec, params).unwrap();
        let mut x = vec![0.0; 64];
        x[..3].copy_from_slice(&[1.0, 2.0, 3.0]);
        assert_eq!(m.logits(&x).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn max_logit_gradient_of_linear_model_is_weight_row() {
        let spec = ModelSpec::linear((1, 8, 8), 2);
        let m = ClassifierModel::new(spec, 3).unwrap();
        let x = Tensor::from_fn(&[1, 8, 8], |i| (i as f64 * 0.37).cos());
        let logits = m.logits(x.data()).unwrap();
        let k = argmax(&logits);
        let g = m.input_gradient(&x, Objective::MaxLogit).unwrap();
        assert_eq!(g.data(), &m.params()[k * 64..(k + 1) * 64]);
    }

    #[test]
    fn max_logit_ties_pick_lowest_class() {
        let m = ClassifierModel::zeros(ModelSpec::linear((1, 8, 8), 3)).unwrap();
        assert_eq!(argmax(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
        let (v, _) = m.objective_and_input_gradient(&[0.0; 64], Objective::MaxLogit).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn saturated_cross_entropy_has_vanishing_gradient() {
        let spec = ModelSpec::linear((1, 8, 8), 2);
        let mut params = vec![0.0; 2 * 64 + 2];
        params[0] = 1.0;
        let mut prev = f64::INFINITY;
        for scale in [1.0, 10.0, 100.0, 1000.0] {
            let mut p = params.clone();
            p[0] = scale;
            let m = ClassifierModel::from_params(spec.clone(), p).unwrap();
            let mut x = vec![0.0; 64];
            x[0] = 1.0;
            let (_, g) = m
                .objective_and_input_gradient(&x, Objective::Loss(LossKind::SoftmaxCrossEntropy { target: 0 }))
                .unwrap();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= prev && (norm < prev || norm == 0.0));
            prev = norm;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn non_finite_is_an_error() {
        let spec = ModelSpec::linear((1, 8, 8), 2);
        let mut params = vec![0.0; 2 * 64 + 2];
        params[0] = f64::NAN;
        let m = ClassifierModel::from_params(spec, params).unwrap();
        assert!(matches!(m.logits(&[1.0; 64]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn batch_equivariance() {
        let m = ClassifierModel::new(ModelSpec::small_cnn((1, 16, 16), (3, 4), 3), 5).unwrap();
        let a = Tensor::from_fn(&[1, 16, 16], |i| (i as f64 * 0.1).sin());
        let b = Tensor::from_fn(&[1, 16, 16], |i| (i as f64 * 0.3).cos());
        let single = m.forward(&Tensor::stack(std::slice::from_ref(&a)).unwrap()).unwrap();
        let pair = m.forward(&Tensor::stack(&[b, a]).unwrap()).unwrap();
        assert_eq!(single.data(), &pair.data()[3..]);
    }

    #[test]
    fn linear_model_is_homogeneous() {
        // Zero biases: forward(a x) = a forward(x).
        let m = ClassifierModel::new(ModelSpec::linear((1, 8, 8), 4), 2).unwrap();
        let x: Vec<f64> = (0..64).map(|i| (i as f64).sqrt()).collect();
        let ax: Vec<f64> = x.iter().map(|v| v * 2.5).collect();
        let y = m.logits(&x).unwrap();
        let ya = m.logits(&ax).unwrap();
        for (a, b) in y.iter().zip(&ya) {
            assert!((2.5 * a - b).abs() < 1e-12);
        }
    }
}
