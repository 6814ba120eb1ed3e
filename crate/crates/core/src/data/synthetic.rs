//! Synthetic images whose class signal sits in a chosen DCT band.
//!
//! Every 8×8 block of every channel is built in the DCT domain: a mid-grey DC
//! term, the class template on the informative band, independent random
//! coefficients on the nuisance band, and nothing elsewhere. After the
//! inverse transform, Gaussian pixel noise is added and pixels are clamped to
//! `[0, 1]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, LabeledImage};
use crate::dct::{Band, DctPlan, BLOCK};
use crate::error::{Error, Result};
use crate::nn::Shape3;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub shape: Shape3,
    pub informative: Band,
    pub nuisance: Band,
    /// Standard deviation of template coefficients.
    pub template_amplitude: f64,
    /// Nuisance coefficients are uniform in `[-a, a]`.
    pub nuisance_amplitude: f64,
    /// Pixel noise standard deviation.
    pub noise_sigma: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 4,
            shape: (1, 32, 32),
            informative: Band::new(1, 8).unwrap(),
            nuisance: Band::new(40, 55).unwrap(),
            template_amplitude: 0.1,
            nuisance_amplitude: 0.25,
            noise_sigma: 0.02,
            train_per_class: 256,
            test_per_class: 128,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.informative.overlaps(&self.nuisance) {
            return Err(Error::InvalidArgument(format!(
                "informative band {} overlaps nuisance band {}",
                self.informative, self.nuisance
            )));
        }
        if self.informative.contains(0) || self.nuisance.contains(0) {
            return Err(Error::InvalidArgument("bands must not include the DC term".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        let (c, h, w) = self.shape;
        if c == 0 || h == 0 || w == 0 || h % BLOCK != 0 || w % BLOCK != 0 {
            return Err(Error::Shape(format!("bad image shape {:?}", self.shape)));
        }
        if !(self.noise_sigma >= 0.0) || !(self.nuisance_amplitude >= 0.0) || !(self.template_amplitude >= 0.0) {
            return Err(Error::InvalidArgument("amplitudes must be non-negative".into()));
        }
        Ok(())
    }

    /// Per-class coefficient on each informative frequency.
    pub fn templates(&self) -> Vec<Vec<f64>> {
        let mut rng = rng::substream(self.seed, Stream::Data, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..self.classes)
            .map(|_| {
                self.informative
                    .indices()
                    .map(|_| self.template_amplitude * normal.sample(&mut rng))
                    .collect()
            })
            .collect()
    }

    fn render<R: Rng>(&self, plan: &DctPlan, template: &[f64], rng: &mut R) -> Tensor {
        let (c, h, w) = self.shape;
        let zz = plan.zigzag();
        let mut coeffs = Tensor::zeros(&[c, h, w]);
        let data = coeffs.data_mut();
        for ch in 0..c {
            for by in (0..h).step_by(BLOCK) {
                for bx in (0..w).step_by(BLOCK) {
                    let mut set = |z: usize, v: f64| {
                        let (r, col) = zz.position(z);
                        data[ch * h * w + (by + r) * w + bx + col] = v;
                    };
                    set(0, 0.5 * BLOCK as f64);
                    for (z, &t) in self.informative.indices().zip(template) {
                        set(z, t);
                    }
                    for z in self.nuisance.indices() {
                        let v = if self.nuisance_amplitude > 0.0 {
                            rng.random_range(-self.nuisance_amplitude..=self.nuisance_amplitude)
                        } else {
                            0.0
                        };
                        set(z, v);
                    }
                }
            }
        }
        let mut x = plan.inverse(&coeffs).expect("validated shape");
        if self.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.noise_sigma).unwrap();
            x.data_mut().iter_mut().for_each(|p| *p += noise.sample(rng));
        }
        x.data_mut().iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
        x
    }

    fn split(&self, per_class: usize, stream_index: u64) -> Result<Dataset> {
        let plan = DctPlan::global();
        let templates = self.templates();
        let mut rng = rng::substream(self.seed, Stream::Data, stream_index);
        let images = (0..per_class * self.classes)
            .map(|i| {
                let label = i % self.classes;
                LabeledImage {
                    pixels: self.render(plan, &templates[label], &mut rng),
                    label,
                }
            })
            .collect();
        Dataset::new(images, self.classes, self.shape)
    }
}

/// Generates `(train, test)`; identical for identical specs.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    Ok((
        spec.split(spec.train_per_class, 1)?,
        spec.split(spec.test_per_class, 2)?,
    ))
}
