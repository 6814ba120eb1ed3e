//! PGD and its frequency-constrained variants.
//!
//! All attacks run in raw pixel space with budgets expressed on the `[0, 1]`
//! scale. Each step computes the loss gradient, turns it into a step through
//! the configured [`Constraint`], projects the accumulated perturbation onto
//! the ε-ball and, when enabled, clamps the adversarial image to `[0, 1]`.

use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::dct::{band_partition, Band, DctPlan, Domain, FrequencyMask};
use crate::error::{Error, Result};
use crate::pixel::PixelModel;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    LInf,
    L2,
}

/// How the loss gradient becomes a step.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    None,
    /// Gradient restricted to the kept frequencies before the step.
    Mask(FrequencyMask),
    /// Weighted sum of a step on zigzag 0–31 (weight λ) and one on 32–63
    /// (weight 1 − λ).
    LambdaMix(f64),
    /// One budget per equal band, low to high; `eta.len()` is the band count.
    BandEpsilons {
        eta: Vec<f64>,
    },
}

impl Constraint {
    /// Band budgets `η_i = ε / (K − i)` for `i = 0..K`, optionally reversed
    /// so the largest budget goes to the lowest band.
    pub fn band_epsilons(k: usize, epsilon: f64, reversed: bool) -> Result<Self> {
        Ok(Constraint::BandEpsilons {
            eta: eta_schedule(k, epsilon, reversed)?,
        })
    }

    /// Frequencies the perturbation is meant to live in.
    pub fn mask(&self) -> FrequencyMask {
        match self {
            Constraint::Mask(m) => *m,
            _ => FrequencyMask::all(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub norm: Norm,
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub random_init: bool,
    pub clamp: bool,
    pub constraint: Constraint,
}

impl AttackConfig {
    /// L∞ PGD with pixel clamping and no random start.
    pub fn linf(epsilon: f64, alpha: f64, steps: usize) -> Self {
        AttackConfig {
            norm: Norm::LInf,
            epsilon,
            alpha,
            steps,
            random_init: false,
            clamp: true,
            constraint: Constraint::None,
        }
    }

    pub fn l2(epsilon: f64, alpha: f64, steps: usize) -> Self {
        AttackConfig {
            norm: Norm::L2,
            ..Self::linf(epsilon, alpha, steps)
        }
    }

    pub fn with_constraint(mut self, constraint: Constraint) -> Self {
        self.constraint = constraint;
        self
    }

    pub fn with_mask(self, mask: FrequencyMask) -> Self {
        self.with_constraint(Constraint::Mask(mask))
    }

    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp = clamp;
        self
    }

    /// A zero budget is accepted: it makes every attack the identity, which
    /// adversarial training relies on to collapse to standard training.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.steps == 0 {
            return bad("attack needs at least one step".into());
        }
        match &self.constraint {
            Constraint::LambdaMix(l) if !(0.0..=1.0).contains(l) => bad(format!("lambda must lie in [0, 1], got {l}")),
            Constraint::BandEpsilons { eta } => {
                if self.norm != Norm::LInf {
                    return bad("band budgets are defined for the L-inf norm only".into());
                }
                band_partition(eta.len())?;
                if eta.len() < 2 || eta.iter().any(|e| !(*e >= 0.0)) {
                    return bad(format!("invalid band budgets {eta:?}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub delta: Tensor,
    pub adversarial: Tensor,
    /// Loss at every iterate, including the final one (`steps + 1` entries).
    pub losses: Vec<f64>,
    /// The prediction on the adversarial image differs from the label.
    pub success: bool,
    /// L2 steps skipped because the (masked) gradient vanished.
    pub null_steps: usize,
}

impl AttackResult {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one loss")
    }
}

/// `ĝ = D⁻¹(D(g) ⊙ M)` turned into a steepest-ascent step of length α:
/// `α·sgn(ĝ)` under L∞ and `α·ĝ/‖ĝ‖₂` under L2. Returns `None` for an L2
/// step whose masked gradient is exactly zero.
pub fn dct_pgd_step(gradient: &Tensor, mask: &FrequencyMask, norm: Norm, alpha: f64) -> Result<Option<Tensor>> {
    if !gradient.all_finite() {
        return Err(Error::NonFinite("attack gradient".into()));
    }
    let g = DctPlan::global().apply_mask(gradient, mask, Domain::Spatial)?;
    Ok(match norm {
        Norm::LInf => Some(g.map(|v| alpha * sign(v))),
        Norm::L2 => {
            let n = g.l2_norm();
            if n == 0.0 {
                None
            } else {
                Some(g.map(|v| alpha * v / n))
            }
        }
    })
}

/// `η_i = ε / (K − i)`, `i = 0..K`, low band first; `reversed` flips the
/// assignment across bands.
pub fn eta_schedule(k: usize, epsilon: f64, reversed: bool) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least two bands, got {k}")));
    }
    let mut eta: Vec<f64> = (0..k).map(|i| epsilon / (k - i) as f64).collect();
    if reversed {
        eta.reverse();
    }
    Ok(eta)
}

/// `Σ_i η_i · sgn(ĝ_i)` where `ĝ_i` is the gradient restricted to band `i`
/// of the K-way equal partition.
pub fn unequal_epsilon_delta(gradient: &Tensor, k: usize, epsilon: f64, reversed: bool) -> Result<Tensor> {
    banded_sign_sum(gradient, &eta_schedule(k, epsilon, reversed)?)
}

fn banded_sign_sum(gradient: &Tensor, eta: &[f64]) -> Result<Tensor> {
    let bands = band_partition(eta.len())?;
    let mut out = Tensor::zeros(gradient.shape());
    for (band, &e) in bands.iter().zip(eta) {
        let step = dct_pgd_step(gradient, &FrequencyMask::from_band(*band), Norm::LInf, e)?
            .expect("L-inf steps are never null");
        out = out.add(&step)?;
    }
    Ok(out)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Step for one iteration under the configured constraint.
fn constrained_step(cfg: &AttackConfig, g: &Tensor) -> Result<Option<Tensor>> {
    match &cfg.constraint {
        Constraint::None => dct_pgd_step(g, &FrequencyMask::all(), cfg.norm, cfg.alpha),
        Constraint::Mask(m) => dct_pgd_step(g, m, cfg.norm, cfg.alpha),
        Constraint::LambdaMix(lambda) => {
            let lf = dct_pgd_step(g, &FrequencyMask::from_band(Band::low()), cfg.norm, cfg.alpha)?;
            let hf = dct_pgd_step(g, &FrequencyMask::from_band(Band::high()), cfg.norm, cfg.alpha)?;
            let zero = || Tensor::zeros(g.shape());
            if lf.is_none() && hf.is_none() {
                return Ok(None);
            }
            let lf = lf.unwrap_or_else(zero);
            let hf = hf.unwrap_or_else(zero);
            Ok(Some(lf.zip_map(&hf, |a, b| lambda * a + (1.0 - lambda) * b)?))
        }
        Constraint::BandEpsilons { eta } => {
            // Scaled so that a single step with α = ε reproduces the
            // band-budget perturbation exactly.
            let scale = if cfg.epsilon > 0.0 {
                cfg.alpha / cfg.epsilon
            } else {
                0.0
            };
            let scaled: Vec<f64> = eta.iter().map(|e| e * scale).collect();
            Ok(Some(banded_sign_sum(g, &scaled)?))
        }
    }
}

fn project(delta: &mut Tensor, norm: Norm, epsilon: f64) {
    match norm {
        Norm::LInf => delta
            .data_mut()
            .iter_mut()
            .for_each(|d| *d = d.clamp(-epsilon, epsilon)),
        Norm::L2 => {
            let n = delta.l2_norm();
            if n > epsilon {
                let s = epsilon / n;
                delta.data_mut().iter_mut().for_each(|d| *d *= s);
            }
        }
    }
}

/// Builds `(δ, x + δ)` with optional `[0, 1]` clamping; δ is recomputed
/// from the clamped image.
fn compose(x: &Tensor, delta: &Tensor, clamp: bool) -> Result<(Tensor, Tensor)> {
    if !clamp {
        return Ok((delta.clone(), x.add(delta)?));
    }
    let adv = x.zip_map(delta, |a, d| (a + d).clamp(0.0, 1.0))?;
    let delta = adv.sub(x)?;
    Ok((delta, adv))
}

fn random_start<R: Rng>(cfg: &AttackConfig, x: &Tensor, rng: &mut R) -> Result<Tensor> {
    let raw = Tensor::from_fn(x.shape(), |_| rng.random_range(-1.0..=1.0));
    let mut d = DctPlan::global().apply_mask(&raw, &cfg.constraint.mask(), Domain::Spatial)?;
    match cfg.norm {
        Norm::LInf => {
            let m = d.linf_norm();
            if m > 0.0 {
                d = d.scale(cfg.epsilon / m);
            }
        }
        Norm::L2 => {
            let u: f64 = rng.random();
            let n = d.l2_norm();
            if n > 0.0 {
                d = d.scale(cfg.epsilon * u / n);
            }
        }
    }
    Ok(d)
}

/// Runs the configured attack on one `(C,H,W)` image. `sample_seed` feeds
/// the random start when enabled.
pub fn attack(
    model: &PixelModel,
    x: &Tensor,
    label: usize,
    cfg: &AttackConfig,
    sample_seed: u64,
) -> Result<AttackResult> {
    cfg.validate()?;
    let mut delta = if cfg.random_init {
        let mut rng = rng::stream(sample_seed, Stream::AttackInit);
        random_start(cfg, x, &mut rng)?
    } else {
        Tensor::zeros(x.shape())
    };
    project(&mut delta, cfg.norm, cfg.epsilon);
    let (mut delta, mut adv) = compose(x, &delta, cfg.clamp)?;
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let mut null_steps = 0;
    for _ in 0..cfg.steps {
        let (loss, g) = model.loss_and_gradient(&adv, label)?;
        losses.push(loss);
        match constrained_step(cfg, &g)? {
            Some(step) => {
                delta = delta.add(&step)?;
                project(&mut delta, cfg.norm, cfg.epsilon);
                (delta, adv) = compose(x, &delta, cfg.clamp)?;
            }
            None => null_steps += 1,
        }
    }
    let logits = model.logits(&adv)?;
    let (final_loss, _) = crate::nn::softmax_cross_entropy(&logits, label);
    losses.push(final_loss);
    Ok(AttackResult {
        delta,
        adversarial: adv,
        losses,
        success: crate::nn::argmax(&logits) != label,
        null_steps,
    })
}

fn require(cfg: &AttackConfig, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} called with constraint {:?}",
            cfg.constraint
        )))
    }
}

/// Unconstrained PGD.
pub fn pgd(model: &PixelModel, x: &Tensor, label: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    require(cfg, cfg.constraint == Constraint::None, "pgd")?;
    attack(model, x, label, cfg, 0)
}

/// PGD with the gradient restricted to a frequency mask (DCT-PGD).
pub fn dct_pgd(model: &PixelModel, x: &Tensor, label: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    require(cfg, matches!(cfg.constraint, Constraint::Mask(_)), "dct_pgd")?;
    attack(model, x, label, cfg, 0)
}

pub fn lambda_mixed_attack(model: &PixelModel, x: &Tensor, label: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    require(
        cfg,
        matches!(cfg.constraint, Constraint::LambdaMix(_)),
        "lambda_mixed_attack",
    )?;
    attack(model, x, label, cfg, 0)
}

/// Attacks every image of `data` in parallel; per-sample seeds derive from
/// `seed` and the sample index.
pub fn attack_dataset(model: &PixelModel, data: &Dataset, cfg: &AttackConfig, seed: u64) -> Result<Vec<AttackResult>> {
    data.images
        .par_iter()
        .enumerate()
        .map(|(i, img)| attack(model, &img.pixels, img.label, cfg, sample_seed(seed, i)))
        .collect()
}

pub(crate) fn sample_seed(seed: u64, index: usize) -> u64 {
    use rand::RngCore;
    rng::substream(seed, Stream::AttackInit, index as u64).next_u64()
}

/// Accuracy (percent) on adversarial images.
pub fn robust_accuracy(model: &PixelModel, data: &Dataset, cfg: &AttackConfig, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let results = attack_dataset(model, data, cfg, seed)?;
    let correct = results.iter().filter(|r| !r.success).count();
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Accuracy (percent) on unperturbed images.
pub fn clean_accuracy(model: &PixelModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let correct: Vec<bool> = data
        .images
        .par_iter()
        .map(|img| Ok(model.predict(&img.pixels)? == img.label))
        .collect::<Result<_>>()?;
    Ok(100.0 * correct.iter().filter(|&&c| c).count() as f64 / data.len() as f64)
}

/// Per-sample summary for CSV export.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSummary {
    pub sample_id: usize,
    pub success: bool,
    pub final_loss: f64,
    pub linf: f64,
    pub l2: f64,
    /// Fraction of δ's DCT energy outside the constraint's frequency set.
    pub out_of_subspace: f64,
}

impl AttackSummary {
    pub fn from_result(sample_id: usize, r: &AttackResult, cfg: &AttackConfig) -> Result<Self> {
        Ok(AttackSummary {
            sample_id,
            success: r.success,
            final_loss: r.final_loss(),
            linf: r.delta.linf_norm(),
            l2: r.delta.l2_norm(),
            out_of_subspace: DctPlan::global().out_of_subspace_fraction(&r.delta, &cfg.constraint.mask())?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Normalization;
    use crate::nn::{ClassifierModel, ModelSpec};

    fn image(seed: u64) -> Tensor {
        let mut rng = rng::stream(seed, Stream::Data);
        Tensor::from_fn(&[1, 16, 16], |_| rng.random_range(0.2..0.8))
    }

    #[test]
    fn eta_values_for_four_bands() {
        let eps = 8.0 / 255.0;
        let eta = eta_schedule(4, eps, false).unwrap();
        let want = [2.0 / 255.0, 8.0 / 765.0, 4.0 / 255.0, 8.0 / 255.0];
        for (a, b) in eta.iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        let rev = eta_schedule(4, eps, true).unwrap();
        assert_eq!(rev[0], eps);
        assert!(eta_schedule(1, eps, false).is_err());
    }

    #[test]
    fn validation() {
        assert!(AttackConfig::linf(-1.0, 0.1, 1).validate().is_err());
        assert!(AttackConfig::linf(0.1, 0.1, 0).validate().is_err());
        assert!(AttackConfig::linf(0.1, 0.1, 1)
            .with_constraint(Constraint::LambdaMix(1.5))
            .validate()
            .is_err());
        assert!(AttackConfig::l2(0.1, 0.1, 1)
            .with_constraint(Constraint::band_epsilons(4, 0.1, false).unwrap())
            .validate()
            .is_err());
        assert!(AttackConfig::linf(0.0, 0.0, 1).validate().is_ok());
    }

    #[test]
    fn zero_l2_gradient_is_a_null_step() {
        let g = Tensor::zeros(&[1, 8, 8]);
        assert!(dct_pgd_step(&g, &FrequencyMask::all(), Norm::L2, 0.1)
            .unwrap()
            .is_none());
        let s = dct_pgd_step(&g, &FrequencyMask::all(), Norm::LInf, 0.1)
            .unwrap()
            .unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrappers_check_constraint_kind() {
        let m = ClassifierModel::new(ModelSpec::linear((1, 16, 16), 3), 1).unwrap();
        let n = Normalization::identity(1);
        let pm = PixelModel::new(&m, &n).unwrap();
        let x = image(1);
        let masked = AttackConfig::linf(0.03, 0.01, 2).with_mask(FrequencyMask::all());
        assert!(pgd(&pm, &x, 0, &masked).is_err());
        assert!(dct_pgd(&pm, &x, 0, &masked).is_ok());
        assert!(lambda_mixed_attack(&pm, &x, 0, &masked).is_err());
    }

    #[test]
    fn l2_null_steps_are_counted() {
        // A zero model has zero input gradient everywhere.
        let m = ClassifierModel::zeros(ModelSpec::linear((1, 16, 16), 3)).unwrap();
        let n = Normalization::identity(1);
        let pm = PixelModel::new(&m, &n).unwrap();
        let r = pgd(&pm, &image(2), 1, &AttackConfig::l2(0.5, 0.1, 4)).unwrap();
        assert_eq!(r.null_steps, 4);
        assert!(r.delta.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_start_respects_budget_and_mask() {
        let m = ClassifierModel::new(ModelSpec::linear((1, 16, 16), 3), 1).unwrap();
        let n = Normalization::identity(1);
        let pm = PixelModel::new(&m, &n).unwrap();
        let mask = FrequencyMask::from_band(Band::new(3, 9).unwrap());
        let mut cfg = AttackConfig::l2(0.4, 0.05, 3).with_mask(mask).with_clamp(false);
        cfg.random_init = true;
        let a = attack(&pm, &image(3), 0, &cfg, 17).unwrap();
        let b = attack(&pm, &image(3), 0, &cfg, 17).unwrap();
        assert_eq!(a.delta, b.delta);
        assert!(a.delta.l2_norm() <= 0.4 + 1e-9);
        let frac = DctPlan::global().out_of_subspace_fraction(&a.delta, &mask).unwrap();
        assert!(frac < 1e-12);
    }
}
