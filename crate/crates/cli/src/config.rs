//! Experiment configuration: flat `key = value` lines grouped under
//! `[section]` headers, `#` comments.
//!
//! ```text
//! seed = 1
//! out = runs/demo
//!
//! [data]
//! source = synthetic
//!
//! [attack]
//! epsilon = 8/255
//! mask = b0-15
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use freqadv_core::analysis::{ClassSource, Granularity};
use freqadv_core::attacks::{AttackConfig, Constraint, Norm};
use freqadv_core::data::{SyntheticSpec, CIFAR_SHAPE};
use freqadv_core::dct::{band_partition, Band, FrequencyMask, NUM_FREQS};
use freqadv_core::nn::{ClassifierModel, ModelSpec};
use freqadv_core::training::{Regime, TrainConfig};
use sha2::{Digest, Sha256};

const SECTIONS: [&str; 7] = ["", "data", "model", "train", "attack", "analysis", "sweep"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: Option<usize>, message: impl Into<String>) -> Self {
        ConfigError {
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {n}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

/// Values given on the command line that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Cifar10 {
        dir: PathBuf,
        limit_train: Option<usize>,
        limit_test: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    /// Test images used by every analysis.
    pub samples: usize,
    pub granularity: Granularity,
    pub class_source: ClassSource,
    pub equalize: bool,
    pub heatmap_checkpoints: Vec<PathBuf>,
    pub heatmap_masks: Vec<(String, FrequencyMask)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub drop_rates: Vec<f64>,
    pub drop_bands: usize,
    pub eta_k: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSource,
    pub model: ModelSpec,
    /// Seed for the initial weights.
    pub init_seed: u64,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    /// Test images attacked by the `attack` command.
    pub attack_samples: usize,
    pub analysis: AnalysisConfig,
    pub sweep: SweepConfig,
    /// SHA-256 of the canonical (sorted) key/value listing.
    pub hash: String,
}

struct Entry {
    value: String,
    line: Option<usize>,
}

/// Raw `(section, key) -> value` table with consumption tracking.
struct Table {
    entries: BTreeMap<(String, String), Entry>,
    used: std::cell::RefCell<BTreeSet<(String, String)>>,
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<(String, String), Entry> = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = Some(i + 1);
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::at(line, format!("malformed section header '{content}'")))?
                    .trim();
                if name.is_empty() || !SECTIONS.contains(&name) {
                    return Err(ConfigError::at(line, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line, format!("expected 'key = value', got '{content}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if !valid_key(k) {
                return Err(ConfigError::at(line, format!("invalid key '{k}'")));
            }
            let id = (section.clone(), k.to_string());
            if let Some(prev) = entries.get(&id) {
                return Err(ConfigError::at(
                    line,
                    format!(
                        "duplicate key '{}' (first set on line {})",
                        qualified(&id),
                        prev.line.unwrap_or(0)
                    ),
                ));
            }
            entries.insert(
                id,
                Entry {
                    value: v.to_string(),
                    line,
                },
            );
        }
        Ok(Table {
            entries,
            used: Default::default(),
        })
    }

    fn set(&mut self, section: &str, key: &str, value: String) {
        self.entries
            .insert((section.into(), key.into()), Entry { value, line: None });
    }

    /// The output directory is left out: it says where results go, not
    /// what they are.
    fn canonical_hash(&self) -> String {
        let mut h = Sha256::new();
        for (id, e) in self
            .entries
            .iter()
            .filter(|(id, _)| *id != &(String::new(), "out".to_string()))
        {
            h.update(format!("{}={}\n", qualified(id), e.value).as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn raw(&self, section: &str, key: &str) -> Option<(&str, Option<usize>)> {
        let id = (section.to_string(), key.to_string());
        let e = self.entries.get(&id)?;
        self.used.borrow_mut().insert(id);
        Some((e.value.as_str(), e.line))
    }

    fn get<T>(
        &self,
        section: &str,
        key: &str,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => parse(v)
                .map(Some)
                .map_err(|m| ConfigError::at(line, format!("{}: {m}", qualified(&(section.into(), key.into()))))),
        }
    }

    fn or<T>(
        &self,
        section: &str,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        Ok(self.get(section, key, parse)?.unwrap_or(default))
    }

    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .and_then(|e| e.line)
    }

    fn reject_unused(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(id, _)| !used.contains(*id)) {
            Some((id, e)) => Err(ConfigError::at(e.line, format!("unknown key '{}'", qualified(id)))),
            None => Ok(()),
        }
    }
}

fn qualified(id: &(String, String)) -> String {
    if id.0.is_empty() {
        id.1.clone()
    } else {
        format!("{}.{}", id.0, id.1)
    }
}

/// Decimal or `a/b` fraction.
pub fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in '{s}'"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in '{s}'"))?;
            if b == 0.0 {
                return Err(format!("zero denominator in '{s}'"));
            }
            a / b
        }
        None => s.parse().map_err(|_| format!("expected a number, got '{s}'"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value '{s}'"))
    }
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let v = parse_number(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be positive, got {s}"))
    }
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v = parse_number(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must lie in [0, 1], got {s}"))
    }
}

fn parse_usize(s: &str) -> std::result::Result<usize, String> {
    s.parse()
        .map_err(|_| format!("expected a non-negative integer, got '{s}'"))
}

fn parse_u64(s: &str) -> std::result::Result<u64, String> {
    s.parse()
        .map_err(|_| format!("expected a non-negative integer, got '{s}'"))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got '{s}'")),
    }
}

fn parse_band(s: &str) -> std::result::Result<Band, String> {
    Band::from_str(s).map_err(|e| e.to_string())
}

fn list<T>(s: &str, item: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    let items: Vec<T> = s
        .split(',')
        .map(|t| item(t.trim()))
        .collect::<std::result::Result<_, _>>()?;
    if items.is_empty() {
        Err("empty list".into())
    } else {
        Ok(items)
    }
}

/// A frequency mask given as 64 `0`/`1` characters, a band (`b0-15`), or a
/// comma-separated list of zigzag indices and ranges (`0,3,10-12`).
pub fn parse_mask(s: &str) -> std::result::Result<FrequencyMask, String> {
    let s = s.trim();
    if s.len() == NUM_FREQS && s.chars().all(|c| c == '0' || c == '1') {
        return FrequencyMask::from_str(s).map_err(|e| e.to_string());
    }
    let mut indices = Vec::new();
    for tok in s.split(',').map(str::trim) {
        if tok.is_empty() {
            return Err(format!("malformed mask '{s}'"));
        }
        let band = parse_band(tok).map_err(|e| format!("malformed mask '{s}': {e}"))?;
        indices.extend(band.indices());
    }
    FrequencyMask::from_indices(&indices).map_err(|e| e.to_string())
}

fn parse_norm(s: &str) -> std::result::Result<Norm, String> {
    match s {
        "linf" | "inf" => Ok(Norm::LInf),
        "l2" | "2" => Ok(Norm::L2),
        _ => Err(format!("expected linf or l2, got '{s}'")),
    }
}

fn parse_granularity(s: &str) -> std::result::Result<Granularity, String> {
    match s {
        "frequency" => Ok(Granularity::PerFrequency),
        _ => {
            let n = s
                .strip_prefix("bands")
                .ok_or_else(|| format!("expected frequency, bands4 or bands16, got '{s}'"))
                .and_then(parse_usize)?;
            band_partition(n).map_err(|e| e.to_string())?;
            Ok(Granularity::Bands(n))
        }
    }
}

fn parse_class_source(s: &str) -> std::result::Result<ClassSource, String> {
    match s {
        "true_label" => Ok(ClassSource::TrueLabel),
        "predicted" => Ok(ClassSource::Predicted),
        _ => Err(format!("expected true_label or predicted, got '{s}'")),
    }
}

/// Resolves `p` against the config file's directory.
fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::at(None, format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_str(&text, base, overrides)
}

pub fn parse_str(text: &str, base: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut t = Table::parse(text)?;
    if let Some(seed) = overrides.seed {
        t.set("", "seed", seed.to_string());
    }
    if let Some(out) = &overrides.out {
        t.set("", "out", out.display().to_string());
    }
    let hash = t.canonical_hash();

    let seed = t.or("", "seed", 0, parse_u64)?;
    let out = t
        .get("", "out", |s| Ok(resolve(base, s)))?
        .unwrap_or_else(|| PathBuf::from("out"));

    let data = parse_data(&t, base)?;
    let (shape, classes) = match &data {
        DataSource::Synthetic(s) => (s.shape, s.classes),
        DataSource::Cifar10 { .. } => (CIFAR_SHAPE, 10),
    };
    let layers = t.or("model", "layers", format!("flatten,dense64,relu,dense{classes}"), |s| {
        Ok(s.to_string())
    })?;
    let model_text = format!("{}x{}x{}:{layers}", shape.0, shape.1, shape.2);
    let layers_line = t.line_of("model", "layers");
    let model = ModelSpec::from_str(&model_text)
        .and_then(ClassifierModel::zeros)
        .map_err(|e| ConfigError::at(layers_line, format!("model.layers: {e}")))?;
    if model.classes() != classes {
        return Err(ConfigError::at(
            layers_line,
            format!(
                "model.layers: network has {} outputs but the data has {classes} classes",
                model.classes()
            ),
        ));
    }
    let init_seed = t.or("model", "init_seed", seed, parse_u64)?;
    let model = model.spec().clone();

    let attack = parse_attack(&t)?;
    let attack_samples = t.or("attack", "samples", 200, parse_usize)?;
    let train = parse_train(&t, seed, &attack)?;
    let analysis = parse_analysis(&t, base)?;
    let sweep = SweepConfig {
        lambdas: t.or("sweep", "lambdas", vec![0.0, 0.25, 0.5, 0.75, 1.0], |s| {
            list(s, unit_interval)
        })?,
        drop_rates: t.or("sweep", "drop_rates", vec![0.0, 0.25, 0.5, 0.75, 1.0], |s| {
            list(s, unit_interval)
        })?,
        drop_bands: t.or("sweep", "drop_bands", 4, |s| {
            let n = parse_usize(s)?;
            band_partition(n).map_err(|e| e.to_string())?;
            Ok(n)
        })?,
        eta_k: t.or("sweep", "eta_k", vec![4], |s| {
            list(s, |k| {
                let k = parse_usize(k)?;
                if k < 2 || !NUM_FREQS.is_multiple_of(k) {
                    return Err(format!("band count {k} must be at least 2 and divide 64"));
                }
                Ok(k)
            })
        })?,
    };
    t.reject_unused()?;
    Ok(ExperimentConfig {
        seed,
        out,
        data,
        model,
        init_seed,
        train,
        attack,
        attack_samples,
        analysis,
        sweep,
        hash,
    })
}

fn parse_data(t: &Table, base: &Path) -> Result<DataSource> {
    let source = t.or("data", "source", "synthetic".to_string(), |s| Ok(s.to_string()))?;
    match source.as_str() {
        "synthetic" => {
            let d = SyntheticSpec::default();
            let size = t.or("data", "size", d.shape.1, parse_usize)?;
            let spec = SyntheticSpec {
                classes: t.or("data", "classes", d.classes, parse_usize)?,
                shape: (t.or("data", "channels", d.shape.0, parse_usize)?, size, size),
                informative: t.or("data", "informative", d.informative, parse_band)?,
                nuisance: t.or("data", "nuisance", d.nuisance, parse_band)?,
                template_amplitude: t.or("data", "template_amplitude", d.template_amplitude, parse_number)?,
                nuisance_amplitude: t.or("data", "nuisance_amplitude", d.nuisance_amplitude, parse_number)?,
                noise_sigma: t.or("data", "noise_sigma", d.noise_sigma, parse_number)?,
                train_per_class: t.or("data", "train_per_class", d.train_per_class, parse_usize)?,
                test_per_class: t.or("data", "test_per_class", d.test_per_class, parse_usize)?,
                seed: t.or("data", "seed", d.seed, parse_u64)?,
            };
            spec.validate()
                .map_err(|e| ConfigError::at(t.line_of("data", "source"), format!("data: {e}")))?;
            Ok(DataSource::Synthetic(spec))
        }
        "cifar10" => {
            let line = t.line_of("data", "path");
            let dir = t
                .get("data", "path", |s| Ok(resolve(base, s)))?
                .ok_or_else(|| ConfigError::at(t.line_of("data", "source"), "data.path is required for cifar10"))?;
            if !dir.is_dir() {
                return Err(ConfigError::at(
                    line,
                    format!("data.path {} is not a directory", dir.display()),
                ));
            }
            Ok(DataSource::Cifar10 {
                dir,
                limit_train: t.get("data", "limit_train", parse_usize)?,
                limit_test: t.get("data", "limit_test", parse_usize)?,
            })
        }
        other => Err(ConfigError::at(
            t.line_of("data", "source"),
            format!("data.source: expected synthetic or cifar10, got '{other}'"),
        )),
    }
}

fn parse_attack(t: &Table) -> Result<AttackConfig> {
    let norm = t.or("attack", "norm", Norm::LInf, parse_norm)?;
    let default_eps = if norm == Norm::LInf { 8.0 / 255.0 } else { 0.5 };
    let epsilon = t.or("attack", "epsilon", default_eps, positive)?;
    let alpha = t.or("attack", "alpha", epsilon / 4.0, positive)?;
    let steps = t.or("attack", "steps", 10, |s| {
        let n = parse_usize(s)?;
        if n == 0 {
            Err("must be at least 1".into())
        } else {
            Ok(n)
        }
    })?;
    let kind = t.or("attack", "constraint", String::new(), |s| Ok(s.to_string()))?;
    let mask = t.get("attack", "mask", parse_mask)?;
    let lambda = t.get("attack", "lambda", unit_interval)?;
    let bands = t.get("attack", "bands", parse_usize)?;
    let reversed = t.or("attack", "reversed", false, parse_bool)?;
    let line = t.line_of("attack", "constraint");
    let constraint = match (kind.as_str(), mask) {
        ("", None) | ("none", None) => Constraint::None,
        ("", Some(m)) | ("mask", Some(m)) => Constraint::Mask(m),
        ("mask", None) => return Err(ConfigError::at(line, "attack.constraint = mask needs attack.mask")),
        ("lambda", None) => Constraint::LambdaMix(
            lambda.ok_or_else(|| ConfigError::at(line, "attack.constraint = lambda needs attack.lambda"))?,
        ),
        ("band_epsilons", None) => {
            if norm != Norm::LInf {
                return Err(ConfigError::at(line, "band_epsilons requires norm = linf"));
            }
            Constraint::band_epsilons(bands.unwrap_or(4), epsilon, reversed)
                .map_err(|e| ConfigError::at(line, format!("attack.bands: {e}")))?
        }
        (k, Some(_)) if k != "mask" => {
            return Err(ConfigError::at(
                t.line_of("attack", "mask"),
                format!("attack.mask conflicts with constraint '{k}'"),
            ))
        }
        (k, _) => {
            return Err(ConfigError::at(
                line,
                format!("attack.constraint: expected none, mask, lambda or band_epsilons, got '{k}'"),
            ))
        }
    };
    Ok(AttackConfig {
        norm,
        epsilon,
        alpha,
        steps,
        random_init: t.or("attack", "random_init", false, parse_bool)?,
        clamp: t.or("attack", "clamp", true, parse_bool)?,
        constraint,
    })
}

fn parse_train(t: &Table, seed: u64, attack: &AttackConfig) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let regime_name = t.or("train", "regime", "standard".to_string(), |s| Ok(s.to_string()))?;
    let drop_band = t.get("train", "drop_band", parse_band)?;
    let drop_rate = t.get("train", "drop_rate", unit_interval)?;
    let line = t.line_of("train", "regime");
    let regime = match regime_name.as_str() {
        "standard" => Regime::Standard,
        "adversarial" => Regime::Adversarial(attack.clone()),
        "freq_drop" => Regime::FreqDrop {
            band: drop_band.ok_or_else(|| ConfigError::at(line, "freq_drop needs train.drop_band"))?,
            p: drop_rate.ok_or_else(|| ConfigError::at(line, "freq_drop needs train.drop_rate"))?,
        },
        other => {
            return Err(ConfigError::at(
                line,
                format!("train.regime: expected standard, adversarial or freq_drop, got '{other}'"),
            ))
        }
    };
    let eval_attack = t.or(
        "train",
        "eval_attack",
        matches!(regime, Regime::Adversarial(_)),
        parse_bool,
    )?;
    let cfg = TrainConfig {
        epochs: t.or("train", "epochs", d.epochs, parse_usize)?,
        lr: t.or("train", "lr", d.lr, positive)?,
        decay_epochs: t.or("train", "decay_epochs", d.decay_epochs, |s| list(s, parse_usize))?,
        decay_factor: t.or("train", "decay_factor", d.decay_factor, parse_number)?,
        momentum: t.or("train", "momentum", d.momentum, parse_number)?,
        weight_decay: t.or("train", "weight_decay", d.weight_decay, parse_number)?,
        batch_size: t.or("train", "batch_size", d.batch_size, parse_usize)?,
        seed,
        regime,
        eval_every: t.or("train", "eval_every", d.eval_every, parse_usize)?,
        eval_samples: t.or("train", "eval_samples", d.eval_samples, parse_usize)?,
        eval_attack: eval_attack.then(|| attack.clone()),
    };
    cfg.validate()
        .map_err(|e| ConfigError::at(t.line_of("train", "epochs").or(line), format!("train: {e}")))?;
    Ok(cfg)
}

fn parse_analysis(t: &Table, base: &Path) -> Result<AnalysisConfig> {
    let masks = match t.raw("analysis", "heatmap_masks") {
        None => band_partition(4)
            .expect("4 divides 64")
            .into_iter()
            .map(|b| (b.to_string(), FrequencyMask::from_band(b)))
            .collect(),
        Some((v, line)) => v
            .split(';')
            .map(|m| {
                let m = m.trim();
                parse_mask(m)
                    .map(|mask| (m.to_string(), mask))
                    .map_err(|e| ConfigError::at(line, format!("analysis.heatmap_masks: {e}")))
            })
            .collect::<Result<_>>()?,
    };
    Ok(AnalysisConfig {
        samples: t.or("analysis", "samples", 512, parse_usize)?,
        granularity: t.or("analysis", "granularity", Granularity::PerFrequency, parse_granularity)?,
        class_source: t.or("analysis", "class_source", ClassSource::TrueLabel, parse_class_source)?,
        equalize: t.or("analysis", "equalize", false, parse_bool)?,
        heatmap_checkpoints: t.or("analysis", "heatmap_checkpoints", Vec::new(), |s| {
            list(s, |p| Ok(resolve(base, p)))
        })?,
        heatmap_masks: masks,
    })
}
