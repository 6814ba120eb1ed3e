//! Datasets: CIFAR-10 binary ingestion, a synthetic dataset with known
//! class-carrying frequencies, normalisation and batching.

mod batch;
mod cifar;
mod normalize;
mod synthetic;

pub use batch::{batch_iter, shuffled_batches, BatchIter};
pub use cifar::{load_cifar10_binary, read_records, write_records, CIFAR_SHAPE};
pub use normalize::Normalization;
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::nn::Shape3;
use crate::tensor::Tensor;

/// Image with pixels in `[0, 1]`, shape `(C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
    pub classes: usize,
    pub shape: Shape3,
}

impl Dataset {
    pub fn new(images: Vec<LabeledImage>, classes: usize, shape: Shape3) -> Result<Self> {
        let (c, h, w) = shape;
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Shape(format!("image extents {h}x{w} are not multiples of 8")));
        }
        for img in &images {
            if img.pixels.shape() != [c, h, w] {
                return Err(Error::Shape(format!(
                    "image shape {:?} differs from dataset shape {shape:?}",
                    img.pixels.shape()
                )));
            }
            if img.label >= classes {
                return Err(Error::InvalidArgument(format!(
                    "label {} out of range for {classes} classes",
                    img.label
                )));
            }
        }
        Ok(Dataset { images, classes, shape })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|i| i.label).collect()
    }

    /// First `n` images (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            images: self.images.iter().take(n).cloned().collect(),
            classes: self.classes,
            shape: self.shape,
        }
    }

    /// Stacks the selected images into a `(B, C, H, W)` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let pixels: Vec<Tensor> = indices.iter().map(|&i| self.images[i].pixels.clone()).collect();
        let labels = indices.iter().map(|&i| self.images[i].label).collect();
        Ok((Tensor::stack(&pixels)?, labels))
    }
}
