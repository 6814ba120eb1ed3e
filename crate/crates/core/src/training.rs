//! Training regimes: standard, adversarial (min-max with any attack from
//! [`crate::attacks`] as the inner maximiser) and frequency-drop.
//!
//! Randomness is split per purpose (see [`crate::rng`]): parameter init,
//! batch shuffling, drop masks and attack random starts each draw from their
//! own stream, so a zero-budget adversarial run or a `p = 0` drop run
//! reproduces standard training exactly.

use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;

use crate::attacks::{self, AttackConfig};
use crate::data::{shuffled_batches, Dataset, Normalization};
use crate::dct::{Band, DctPlan, Domain, FrequencyMask};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, ClassifierModel, Sgd};
use crate::pixel::PixelModel;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

const DIVERGENCE_LOSS: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub enum Regime {
    Standard,
    /// `min_θ max_{‖δ‖ ≤ ε} L(h(x + δ))` with the given inner attack.
    Adversarial(AttackConfig),
    /// Each training image has the DCT coefficients of `band` zeroed
    /// independently with probability `p`, freshly drawn per presentation.
    FreqDrop {
        band: Band,
        p: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Epochs at which the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub regime: Regime,
    /// Evaluate every `eval_every` epochs (and always after the last one).
    pub eval_every: usize,
    /// Number of test images used for adversarial evaluation.
    pub eval_samples: usize,
    /// Attack used for the per-epoch robust accuracy; defaults to the
    /// regime's inner attack.
    pub eval_attack: Option<AttackConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 0.05,
            decay_epochs: Vec::new(),
            decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            seed: 0,
            regime: Regime::Standard,
            eval_every: 1,
            eval_samples: 512,
            eval_attack: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.eval_every == 0 {
            return bad("eval cadence must be >= 1".into());
        }
        match &self.regime {
            Regime::Adversarial(a) => a.validate()?,
            Regime::FreqDrop { p, .. } if !(0.0..=1.0).contains(p) => {
                return bad(format!("drop rate {p} outside [0, 1]"))
            }
            _ => {}
        }
        if let Some(a) = &self.eval_attack {
            a.validate()?;
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.decay_factor.powi(decays as i32)
    }

    fn eval_attack(&self) -> Option<&AttackConfig> {
        self.eval_attack.as_ref().or(match &self.regime {
            Regime::Adversarial(a) => Some(a),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Percent.
    pub clean_acc: Option<f64>,
    /// Percent.
    pub adv_acc: Option<f64>,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }

    pub fn final_clean_acc(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|e| e.clean_acc)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ClassifierModel,
    pub log: TrainLog,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig, norm: &Normalization) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model)
            .with_meta("epochs", cfg.epochs)
            .with_meta("seed", cfg.seed);
        norm.write_meta(&mut ck.meta);
        ck
    }
}

/// Trains `model` on `train`, evaluating on `test` with clean inputs.
pub fn train(
    mut model: ClassifierModel,
    train: &Dataset,
    test: &Dataset,
    norm: &Normalization,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let (c, h, w) = model.input_shape();
    if train.shape != (c, h, w) || test.shape != (c, h, w) {
        return Err(Error::Shape(format!(
            "dataset shape {:?} does not match model input {:?}",
            train.shape,
            model.input_shape()
        )));
    }
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay)?;
    let mut shuffle_rng = rng::stream(cfg.seed, Stream::Shuffle);
    let mut drop_rng = rng::stream(cfg.seed, Stream::DropMask);
    let mut attack_rng = rng::stream(cfg.seed, Stream::AttackInit);
    let eval_set = test.head(cfg.eval_samples);
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        opt.lr = cfg.lr_at(epoch - 1);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in shuffled_batches(train.len(), cfg.batch_size, &mut shuffle_rng) {
            let (x, labels) = train.batch(&batch)?;
            let x = match &cfg.regime {
                Regime::Standard => x,
                Regime::Adversarial(acfg) => {
                    let seeds: Vec<u64> = batch.iter().map(|_| attack_rng.next_u64()).collect();
                    adversarial_batch(&model, norm, &x, &labels, acfg, &seeds)?
                }
                Regime::FreqDrop { band, p } => {
                    let masks = batch
                        .iter()
                        .map(|_| FrequencyMask::sample_drop(*band, *p, &mut drop_rng))
                        .collect::<Result<Vec<_>>>()?;
                    drop_frequencies(&x, &masks)?
                }
            };
            let loss = match opt.step(&mut model, &norm.normalize(&x)?, &labels) {
                Ok(l) => l,
                Err(Error::NonFinite(_)) => f64::NAN,
                Err(e) => return Err(e),
            };
            if !(loss <= DIVERGENCE_LOSS) {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * labels.len() as f64;
            seen += labels.len();
        }
        let evaluate = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        let (clean_acc, adv_acc) = if evaluate && !test.is_empty() {
            let pm = PixelModel::new(&model, norm)?;
            let clean = attacks::clean_accuracy(&pm, test)?;
            let adv = match cfg.eval_attack() {
                Some(a) if !eval_set.is_empty() => Some(attacks::robust_accuracy(&pm, &eval_set, a, cfg.seed)?),
                _ => None,
            };
            (Some(clean), adv)
        } else {
            (None, None)
        };
        log.epochs.push(EpochLog {
            epoch,
            clean_acc,
            adv_acc,
            loss: loss_sum / seen as f64,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome { model, log })
}

/// Frequency-drop training: [`train`] with [`Regime::FreqDrop`].
pub fn train_freq_drop(
    model: ClassifierModel,
    train_set: &Dataset,
    test: &Dataset,
    norm: &Normalization,
    band: Band,
    p: f64,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        regime: Regime::FreqDrop { band, p },
        ..cfg.clone()
    };
    train(model, train_set, test, norm, &cfg)
}

fn adversarial_batch(
    model: &ClassifierModel,
    norm: &Normalization,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    seeds: &[u64],
) -> Result<Tensor> {
    let pm = PixelModel::new(model, norm)?;
    let samples = x.unstack();
    let adv: Vec<Tensor> = samples
        .par_iter()
        .zip(labels.par_iter())
        .zip(seeds.par_iter())
        .map(|((s, &y), &seed)| attacks::attack(&pm, s, y, cfg, seed).map(|r| r.adversarial))
        .collect::<Result<_>>()?;
    Tensor::stack(&adv)
}

/// `D⁻¹(M ⊙ D(x))` per sample; all-ones masks leave the sample untouched.
fn drop_frequencies(x: &Tensor, masks: &[FrequencyMask]) -> Result<Tensor> {
    let plan = DctPlan::global();
    let out: Vec<Tensor> = x
        .unstack()
        .into_iter()
        .zip(masks)
        .map(|(s, m)| plan.apply_mask(&s, m, Domain::Spatial))
        .collect::<Result<_>>()?;
    Tensor::stack(&out)
}

/// Clean accuracy (percent) per `(p, band)` cell of frequency-drop training.
#[derive(Debug, Clone, PartialEq)]
pub struct DropGrid {
    pub bands: Vec<Band>,
    pub drop_rates: Vec<f64>,
    /// `cells[i][j]`: drop rate `i`, band `j`; `None` when that run failed.
    pub cells: Vec<Vec<Option<f64>>>,
    pub failures: Vec<String>,
}

/// Trains one model per (drop rate, band) pair from the same initial
/// parameters and records its final clean test accuracy.
pub fn drop_rate_grid(
    init: &ClassifierModel,
    train_set: &Dataset,
    test: &Dataset,
    norm: &Normalization,
    bands: &[Band],
    drop_rates: &[f64],
    cfg: &TrainConfig,
) -> Result<DropGrid> {
    if drop_rates.is_empty() || bands.is_empty() {
        return Err(Error::InvalidArgument("drop-rate grid needs bands and rates".into()));
    }
    let mut failures = Vec::new();
    let mut cells = Vec::with_capacity(drop_rates.len());
    for &p in drop_rates {
        let mut row = Vec::with_capacity(bands.len());
        for &band in bands {
            match train_freq_drop(init.clone(), train_set, test, norm, band, p, cfg) {
                Ok(out) => row.push(out.log.final_clean_acc()),
                Err(e) => {
                    failures.push(format!("p={p} band={band}: {e}"));
                    row.push(None);
                }
            }
        }
        cells.push(row);
    }
    Ok(DropGrid {
        bands: bands.to_vec(),
        drop_rates: drop_rates.to_vec(),
        cells,
        failures,
    })
}
