//! A classifier viewed through its input normalisation, so that callers work
//! in raw pixel space `[0, 1]`.

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::nn::{argmax, ClassifierModel, Objective};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct PixelModel<'a> {
    model: &'a ClassifierModel,
    norm: &'a Normalization,
}

impl<'a> PixelModel<'a> {
    pub fn new(model: &'a ClassifierModel, norm: &'a Normalization) -> Result<Self> {
        if norm.channels() != model.input_shape().0 {
            return Err(Error::Shape(format!(
                "normalisation has {} channels, model expects {}",
                norm.channels(),
                model.input_shape().0
            )));
        }
        Ok(PixelModel { model, norm })
    }

    pub fn model(&self) -> &'a ClassifierModel {
        self.model
    }

    pub fn normalization(&self) -> &'a Normalization {
        self.norm
    }

    pub fn classes(&self) -> usize {
        self.model.classes()
    }

    fn normalized(&self, x: &Tensor) -> Result<Tensor> {
        self.norm.normalize(x)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.model.logits(self.normalized(x)?.data())
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Objective value and gradient w.r.t. the raw pixels of one `(C,H,W)` sample.
    pub fn objective_and_gradient(&self, x: &Tensor, objective: Objective) -> Result<(f64, Tensor)> {
        let (v, mut g) = self
            .model
            .objective_and_input_gradient(self.normalized(x)?.data(), objective)?;
        let (_, h, w) = self.model.input_shape();
        self.norm.pull_back_gradient(&mut g, h * w);
        Ok((v, Tensor::new(x.shape().to_vec(), g)?))
    }

    pub fn loss_and_gradient(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor)> {
        self.objective_and_gradient(x, Objective::cross_entropy(label))
    }
}
