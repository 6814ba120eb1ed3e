//! Frequency-importance metrics: DCT of perturbation gradients,
//! vulnerability by frequency, occlusion scores and robustness heatmaps.

use rayon::prelude::*;

use crate::attacks::{self, AttackConfig};
use crate::data::Dataset;
use crate::dct::{band_partition, Band, DctPlan, Domain, FrequencyMask, NUM_FREQS};
use crate::error::{Error, Result};
use crate::nn::Objective;
use crate::pixel::PixelModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Mean |DCT(∇_δ y_max)|.
    PerturbationGradient,
    /// Accuracy (percent) under a single-frequency attack.
    Vulnerability,
    /// Mean |logit_c(x) − logit_c(x without f)|.
    Occlusion,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::PerturbationGradient => "perturbation_gradient",
            Metric::Vulnerability => "vulnerability",
            Metric::Occlusion => "occlusion",
        }
    }
}

/// One value per zigzag frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub values: [f64; NUM_FREQS],
    pub metric: Metric,
    pub samples: usize,
    pub model_id: String,
    /// Samples whose attack failed; they contribute their clean gradient.
    pub attack_failures: usize,
}

impl SpectrumReport {
    pub fn with_model_id(mut self, id: impl Into<String>) -> Self {
        self.model_id = id.into();
        self
    }

    pub fn argmax(&self) -> usize {
        crate::nn::argmax(&self.values)
    }

    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for z in 1..NUM_FREQS {
            if self.values[z] < self.values[best] {
                best = z;
            }
        }
        best
    }
}

fn require_nonempty(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        Err(Error::InvalidArgument("dataset is empty".into()))
    } else {
        Ok(())
    }
}

/// Attacks each sample, takes `∇ y_max` at the adversarial image, and
/// averages the absolute blockwise DCT coefficients per zigzag index.
pub fn perturbation_gradient_spectrum(
    model: &PixelModel,
    data: &Dataset,
    attack: &AttackConfig,
    seed: u64,
) -> Result<SpectrumReport> {
    require_nonempty(data)?;
    attack.validate()?;
    let plan = DctPlan::global();
    let zz = plan.zigzag();
    let (c, h, w) = data.shape;
    let per_sample: Vec<([f64; NUM_FREQS], bool)> = data
        .images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let (adv, failed) =
                match attacks::attack(model, &img.pixels, img.label, attack, attacks::sample_seed(seed, i)) {
                    Ok(r) => (r.adversarial, false),
                    Err(_) => (img.pixels.clone(), true),
                };
            let (_, g) = model.objective_and_gradient(&adv, Objective::MaxLogit)?;
            let coeffs = plan.forward(&g)?;
            let mut acc = [0.0; NUM_FREQS];
            for plane in coeffs.data().chunks(h * w) {
                for r in 0..h {
                    for col in 0..w {
                        acc[zz.index(r % 8, col % 8)] += plane[r * w + col].abs();
                    }
                }
            }
            Ok((acc, failed))
        })
        .collect::<Result<_>>()?;
    let per_freq_count = (data.len() * c * (h / 8) * (w / 8)) as f64;
    let mut values = [0.0; NUM_FREQS];
    let mut failures = 0;
    for (acc, failed) in &per_sample {
        for (v, a) in values.iter_mut().zip(acc) {
            *v += a;
        }
        failures += *failed as usize;
    }
    values.iter_mut().for_each(|v| *v /= per_freq_count);
    Ok(SpectrumReport {
        values,
        metric: Metric::PerturbationGradient,
        samples: data.len(),
        model_id: String::new(),
        attack_failures: failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    PerFrequency,
    /// Equal zigzag bands (4 or 16 in practice).
    Bands(usize),
}

impl Granularity {
    pub fn bands(&self) -> Result<Vec<Band>> {
        match self {
            Granularity::PerFrequency => (0..NUM_FREQS).map(Band::single).collect(),
            Granularity::Bands(n) => band_partition(*n),
        }
    }
}

/// Accuracy (percent) under attacks restricted to each band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandScores {
    pub bands: Vec<Band>,
    pub values: Vec<f64>,
    pub samples: usize,
}

impl BandScores {
    /// The per-frequency case as a spectrum.
    pub fn to_spectrum(&self) -> Option<SpectrumReport> {
        if self.bands.len() != NUM_FREQS || self.bands.iter().enumerate().any(|(z, b)| b.lo() != z || b.len() != 1) {
            return None;
        }
        let mut values = [0.0; NUM_FREQS];
        values.copy_from_slice(&self.values);
        Some(SpectrumReport {
            values,
            metric: Metric::Vulnerability,
            samples: self.samples,
            model_id: String::new(),
            attack_failures: 0,
        })
    }

    /// Band with the lowest accuracy (first one on ties).
    pub fn most_vulnerable(&self) -> Band {
        let mut best = 0;
        for i in 1..self.values.len() {
            if self.values[i] < self.values[best] {
                best = i;
            }
        }
        self.bands[best]
    }
}

/// For each band (or single frequency) run DCT-PGD restricted to it and
/// record the model's accuracy on the adversarial images. The base config's
/// own constraint is replaced by each band's mask.
pub fn vulnerability_scores(
    model: &PixelModel,
    data: &Dataset,
    base: &AttackConfig,
    granularity: Granularity,
    seed: u64,
) -> Result<BandScores> {
    require_nonempty(data)?;
    let bands = granularity.bands()?;
    let values = bands
        .iter()
        .map(|b| band_accuracy(model, data, base, &FrequencyMask::from_band(*b), seed))
        .collect::<Result<_>>()?;
    Ok(BandScores {
        bands,
        values,
        samples: data.len(),
    })
}

fn band_accuracy(
    model: &PixelModel,
    data: &Dataset,
    base: &AttackConfig,
    mask: &FrequencyMask,
    seed: u64,
) -> Result<f64> {
    let cfg = base.clone().with_mask(*mask);
    attacks::robust_accuracy(model, data, &cfg, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassSource {
    TrueLabel,
    Predicted,
}

/// `O_f = mean_x |logit_c(x) − logit_c(x_f̂)|`, where `x_f̂` has frequency `f`
/// removed from every block and channel.
pub fn occlusion_scores(model: &PixelModel, data: &Dataset, source: ClassSource) -> Result<SpectrumReport> {
    require_nonempty(data)?;
    let plan = DctPlan::global();
    let per_sample: Vec<[f64; NUM_FREQS]> = data
        .images
        .par_iter()
        .map(|img| {
            let logits = model.logits(&img.pixels)?;
            let c = match source {
                ClassSource::TrueLabel => img.label,
                ClassSource::Predicted => crate::nn::argmax(&logits),
            };
            let mut out = [0.0; NUM_FREQS];
            for (z, o) in out.iter_mut().enumerate() {
                let removed = plan.apply_mask(&img.pixels, &FrequencyMask::without(z)?, Domain::Spatial)?;
                *o = (logits[c] - model.logits(&removed)?[c]).abs();
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut values = [0.0; NUM_FREQS];
    for s in &per_sample {
        for (v, x) in values.iter_mut().zip(s) {
            *v += x;
        }
    }
    values.iter_mut().for_each(|v| *v /= data.len() as f64);
    Ok(SpectrumReport {
        values,
        metric: Metric::Occlusion,
        samples: data.len(),
        model_id: String::new(),
        attack_failures: 0,
    })
}

/// Accuracy (percent) of each trained model (rows) under each attack mask
/// (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// `None` marks a row whose model was unavailable.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl HeatmapGrid {
    pub fn row_mean(&self, i: usize) -> Option<f64> {
        let vals: Vec<f64> = self.cells[i].iter().flatten().copied().collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

pub fn robustness_heatmap(
    models: &[(String, Option<PixelModel>)],
    masks: &[(String, FrequencyMask)],
    data: &Dataset,
    base: &AttackConfig,
    seed: u64,
) -> Result<HeatmapGrid> {
    require_nonempty(data)?;
    let cells = models
        .iter()
        .map(|(_, model)| match model {
            Some(m) => masks
                .iter()
                .map(|(_, mask)| band_accuracy(m, data, base, mask, seed).map(Some))
                .collect::<Result<Vec<_>>>(),
            None => Ok(vec![None; masks.len()]),
        })
        .collect::<Result<_>>()?;
    Ok(HeatmapGrid {
        row_labels: models.iter().map(|(l, _)| l.clone()).collect(),
        col_labels: masks.iter().map(|(l, _)| l.clone()).collect(),
        cells,
    })
}

/// Rank-based remap to `[0, 1]`: value of rank r (0-based, ties sharing the
/// mean rank) maps to `r / (n − 1)`. A single value maps to 0.5.
pub fn histogram_equalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("nothing to equalise".into()));
    }
    let n = values.len();
    if n == 1 {
        return Ok(vec![0.5]);
    }
    let ranks = average_ranks(values);
    Ok(ranks.iter().map(|r| r / (n - 1) as f64).collect())
}

/// 0-based ranks; tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = mean;
        }
        i = j + 1;
    }
    ranks
}
