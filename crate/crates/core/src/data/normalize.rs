use std::collections::BTreeMap;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel affine input normalisation `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::InvalidArgument("mean and std lengths differ".into()));
        }
        if std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("std must be positive, got {std:?}")));
        }
        Ok(Normalization { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Per-channel statistics over every pixel of the dataset.
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let (c, h, w) = data.shape;
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        let plane = h * w;
        let n = (data.len() * plane) as f64;
        let mut mean = vec![0.0; c];
        for img in &data.images {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += img.pixels.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for img in &data.images {
            for (ch, v) in var.iter_mut().enumerate() {
                *v += img.pixels.data()[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|p| (p - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(1e-8)).collect();
        Normalization::new(mean, std)
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn channel_layout(&self, x: &Tensor) -> Result<usize> {
        let s = x.shape();
        if s.len() < 3 || s[s.len() - 3] != self.channels() {
            return Err(Error::Shape(format!(
                "expected {} channels in (.., C, H, W), got {s:?}",
                self.channels()
            )));
        }
        Ok(s[s.len() - 1] * s[s.len() - 2])
    }

    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        let plane = self.channel_layout(x)?;
        let mut out = x.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let ch = i % self.channels();
            let (m, s) = (self.mean[ch], self.std[ch]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }

    pub fn denormalize(&self, x: &Tensor) -> Result<Tensor> {
        let plane = self.channel_layout(x)?;
        let mut out = x.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let ch = i % self.channels();
            let (m, s) = (self.mean[ch], self.std[ch]);
            chunk.iter_mut().for_each(|v| *v = *v * s + m);
        }
        Ok(out)
    }

    /// Chain rule through the normalisation: scales a gradient taken w.r.t.
    /// normalised input into one w.r.t. raw pixels.
    pub fn pull_back_gradient(&self, g: &mut [f64], plane: usize) {
        for (i, chunk) in g.chunks_mut(plane).enumerate() {
            let s = self.std[i % self.channels()];
            chunk.iter_mut().for_each(|v| *v /= s);
        }
    }

    pub fn write_meta(&self, meta: &mut BTreeMap<String, String>) {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        meta.insert("norm_mean".into(), join(&self.mean));
        meta.insert("norm_std".into(), join(&self.std));
    }

    pub fn read_meta(meta: &BTreeMap<String, String>) -> Result<Option<Self>> {
        let parse = |key: &str| -> Result<Option<Vec<f64>>> {
            meta.get(key)
                .map(|s| {
                    s.split(',')
                        .map(|v| {
                            v.parse::<f64>()
                                .map_err(|_| Error::CorruptCheckpoint(format!("bad {key} value {v:?}")))
                        })
                        .collect()
                })
                .transpose()
        };
        match (parse("norm_mean")?, parse("norm_std")?) {
            (Some(m), Some(s)) => Ok(Some(Normalization::new(m, s)?)),
            (None, None) => Ok(None),
            _ => Err(Error::CorruptCheckpoint("partial normalisation metadata".into())),
        }
    }
}
