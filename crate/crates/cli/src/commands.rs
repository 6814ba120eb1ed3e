//! Subcommand implementations. Each writes its artifacts and a
//! `manifest.json` listing them into the configured output directory.

use std::path::{Path, PathBuf};

use freqadv_core::analysis::{
    occlusion_scores, perturbation_gradient_spectrum, robustness_heatmap, vulnerability_scores, BandScores,
    SpectrumReport,
};
use freqadv_core::attacks::{
    attack_dataset, clean_accuracy, robust_accuracy, AttackConfig, AttackSummary, Constraint, Norm,
};
use freqadv_core::data::{generate_synthetic, load_cifar10_binary, Dataset, Normalization};
use freqadv_core::dct::band_partition;
use freqadv_core::nn::{Checkpoint, ClassifierModel};
use freqadv_core::training::{drop_rate_grid, train, Regime, TrainConfig, TrainLog};
use freqadv_core::PixelModel;

use crate::config::{DataSource, ExperimentConfig};
use crate::output::{opt, spectrum_pgm, unix_now, RunOutput, Table};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisKind {
    Spectrum,
    Vulnerability,
    Occlusion,
    Heatmap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Lambda,
    Drop,
    Eta,
}

/// Command-line inputs shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub checkpoints: Vec<PathBuf>,
    pub equalize: bool,
}

/// Train and test splits with the training-set normalisation.
pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
    pub norm: Normalization,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let (train, test) = match &cfg.data {
        DataSource::Synthetic(spec) => generate_synthetic(spec)?,
        DataSource::Cifar10 {
            dir,
            limit_train,
            limit_test,
        } => {
            let (tr, te) = load_cifar10_binary(dir)?;
            (
                limit_train.map_or(tr.clone(), |n| tr.head(n)),
                limit_test.map_or(te.clone(), |n| te.head(n)),
            )
        }
    };
    let norm = Normalization::from_dataset(&train)?;
    Ok(Data { train, test, norm })
}

/// Loads a checkpoint; its stored normalisation wins over `fallback`.
pub fn load_checkpoint(path: &Path, fallback: &Normalization) -> Result<(ClassifierModel, Normalization)> {
    if !path.is_file() {
        return Err(CliError::MissingInput {
            what: "checkpoint",
            path: path.to_path_buf(),
        });
    }
    let ck = Checkpoint::load(path)?;
    let norm = Normalization::read_meta(&ck.meta)?.unwrap_or_else(|| fallback.clone());
    Ok((ck.to_model()?, norm))
}

fn single_checkpoint(args: &RunArgs, command: &str) -> Result<PathBuf> {
    match args.checkpoints.as_slice() {
        [one] => Ok(one.clone()),
        [] => Err(CliError::Usage(format!("{command} needs --checkpoint"))),
        _ => Err(CliError::Usage(format!("{command} takes a single --checkpoint"))),
    }
}

fn train_log_csv(log: &TrainLog) -> Vec<u8> {
    let mut t = Table::new(&["epoch", "clean_acc", "adv_acc", "loss", "seconds"]);
    for e in &log.epochs {
        t.row([
            e.epoch.to_string(),
            opt(e.clean_acc),
            opt(e.adv_acc),
            e.loss.to_string(),
            format!("{:.3}", e.seconds),
        ]);
    }
    t.into_bytes()
}

fn initial_model(cfg: &ExperimentConfig) -> Result<ClassifierModel> {
    Ok(ClassifierModel::new(cfg.model.clone(), cfg.init_seed)?)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let started = unix_now();
    let data = load_data(cfg)?;
    let mut out = RunOutput::create(&cfg.out)?;
    let outcome = train(initial_model(cfg)?, &data.train, &data.test, &data.norm, &cfg.train)?;
    let ck = outcome
        .checkpoint(&cfg.train, &data.norm)
        .with_meta("config_hash", &cfg.hash);
    let ck_path = out.path("model.ckpt");
    ck.save(&ck_path)?;
    out.record("model.ckpt");
    out.write("train_log.csv", &train_log_csv(&outcome.log))?;
    if let Some(last) = outcome.log.last() {
        println!(
            "trained {} epochs: clean {} adv {} loss {:.3e}",
            last.epoch,
            last.clean_acc.map_or("-".into(), |a| format!("{a:.2}%")),
            last.adv_acc.map_or("-".into(), |a| format!("{a:.2}%")),
            last.loss
        );
    }
    out.finish("train", &cfg.hash, cfg.seed, started)
}

pub fn cmd_attack(cfg: &ExperimentConfig, args: &RunArgs) -> Result<()> {
    let started = unix_now();
    let ck_path = single_checkpoint(args, "attack")?;
    let data = load_data(cfg)?;
    let (model, norm) = load_checkpoint(&ck_path, &data.norm)?;
    let pm = PixelModel::new(&model, &norm)?;
    let eval = data.test.head(cfg.attack_samples);
    let results = attack_dataset(&pm, &eval, &cfg.attack, cfg.seed)?;

    let mut rows = Table::new(&[
        "sample_id",
        "label",
        "success",
        "final_loss",
        "linf",
        "l2",
        "out_of_subspace",
    ]);
    let mut linf = 0.0;
    let mut l2 = 0.0;
    let mut worst_leak: f64 = 0.0;
    for (i, (r, img)) in results.iter().zip(&eval.images).enumerate() {
        let s = AttackSummary::from_result(i, r, &cfg.attack)?;
        linf += s.linf;
        l2 += s.l2;
        worst_leak = worst_leak.max(s.out_of_subspace);
        rows.row([
            i.to_string(),
            img.label.to_string(),
            s.success.to_string(),
            s.final_loss.to_string(),
            s.linf.to_string(),
            s.l2.to_string(),
            s.out_of_subspace.to_string(),
        ]);
    }
    let n = eval.len().max(1) as f64;
    let clean = clean_accuracy(&pm, &eval)?;
    let robust = 100.0 * results.iter().filter(|r| !r.success).count() as f64 / n;
    let mut summary = Table::new(&["metric", "value"]);
    for (k, v) in [
        ("samples", eval.len() as f64),
        ("clean_acc", clean),
        ("robust_acc", robust),
        ("mean_linf", linf / n),
        ("mean_l2", l2 / n),
        ("max_out_of_subspace", worst_leak),
    ] {
        summary.row([k.to_string(), v.to_string()]);
    }

    let mut out = RunOutput::create(&cfg.out)?;
    out.write("attack.csv", &rows.into_bytes())?;
    out.write("attack_summary.csv", &summary.into_bytes())?;
    println!("clean {clean:.2}% robust {robust:.2}% over {} samples", eval.len());
    out.finish("attack", &cfg.hash, cfg.seed, started)
}

fn spectrum_csv(r: &SpectrumReport) -> Vec<u8> {
    let mut t = Table::new(&["zigzag_index", "value", "n"]);
    for (z, v) in r.values.iter().enumerate() {
        t.row([z.to_string(), v.to_string(), r.samples.to_string()]);
    }
    t.into_bytes()
}

fn band_scores_csv(s: &BandScores) -> Vec<u8> {
    let mut t = Table::new(&["band", "lo", "hi", "value", "n"]);
    for (b, v) in s.bands.iter().zip(&s.values) {
        t.row([
            b.to_string(),
            b.lo().to_string(),
            b.hi().to_string(),
            v.to_string(),
            s.samples.to_string(),
        ]);
    }
    t.into_bytes()
}

fn write_spectrum(out: &mut RunOutput, name: &str, r: &SpectrumReport, equalize: bool) -> Result<()> {
    out.write(&format!("{name}.csv"), &spectrum_csv(r))?;
    out.write(&format!("{name}.pgm"), &spectrum_pgm(&r.values, equalize))?;
    Ok(())
}

pub fn cmd_analyze(cfg: &ExperimentConfig, kind: AnalysisKind, args: &RunArgs) -> Result<()> {
    let started = unix_now();
    let data = load_data(cfg)?;
    let eval = data.test.head(cfg.analysis.samples);
    let equalize = args.equalize || cfg.analysis.equalize;
    if kind == AnalysisKind::Heatmap {
        return heatmap(cfg, args, &data, &eval, started);
    }
    let ck_path = single_checkpoint(args, "analyze")?;
    let (model, norm) = load_checkpoint(&ck_path, &data.norm)?;
    let pm = PixelModel::new(&model, &norm)?;
    let id = ck_path.display().to_string();
    let mut out = RunOutput::create(&cfg.out)?;
    match kind {
        AnalysisKind::Spectrum => {
            let r = perturbation_gradient_spectrum(&pm, &eval, &cfg.attack, cfg.seed)?.with_model_id(id);
            if r.attack_failures > 0 {
                eprintln!(
                    "warning: {} attacks failed; their clean gradients were used",
                    r.attack_failures
                );
            }
            write_spectrum(&mut out, "spectrum", &r, equalize)?;
            println!("spectrum peak at zigzag {}", r.argmax());
        }
        AnalysisKind::Vulnerability => {
            let s = vulnerability_scores(&pm, &eval, &cfg.attack, cfg.analysis.granularity, cfg.seed)?;
            match s.to_spectrum() {
                Some(r) => write_spectrum(&mut out, "vulnerability", &r.with_model_id(id), equalize)?,
                None => {
                    out.write("vulnerability.csv", &band_scores_csv(&s))?;
                }
            }
            println!("most vulnerable: {}", s.most_vulnerable());
        }
        AnalysisKind::Occlusion => {
            let r = occlusion_scores(&pm, &eval, cfg.analysis.class_source)?.with_model_id(id);
            write_spectrum(&mut out, "occlusion", &r, equalize)?;
            println!("occlusion peak at zigzag {}", r.argmax());
        }
        AnalysisKind::Heatmap => unreachable!("handled above"),
    }
    out.finish("analyze", &cfg.hash, cfg.seed, started)
}

fn heatmap(cfg: &ExperimentConfig, args: &RunArgs, data: &Data, eval: &Dataset, started: u64) -> Result<()> {
    let paths = if args.checkpoints.is_empty() {
        cfg.analysis.heatmap_checkpoints.clone()
    } else {
        args.checkpoints.clone()
    };
    if paths.is_empty() {
        return Err(CliError::Usage(
            "heatmap needs --checkpoint or analysis.heatmap_checkpoints".into(),
        ));
    }
    let mut loaded = Vec::with_capacity(paths.len());
    for p in &paths {
        match load_checkpoint(p, &data.norm) {
            Ok(m) => loaded.push(Some(m)),
            Err(e @ CliError::MissingInput { .. }) => {
                eprintln!("warning: {e}; its row is left empty");
                loaded.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    if loaded.iter().all(Option::is_none) {
        return Err(CliError::MissingInput {
            what: "checkpoint",
            path: paths[0].clone(),
        });
    }
    let models = paths
        .iter()
        .zip(&loaded)
        .map(|(p, m)| {
            let pm = m
                .as_ref()
                .map(|(model, norm)| PixelModel::new(model, norm))
                .transpose()?;
            Ok((p.display().to_string(), pm))
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = robustness_heatmap(&models, &cfg.analysis.heatmap_masks, eval, &cfg.attack, cfg.seed)?;

    let mut header = vec!["model"];
    header.extend(grid.col_labels.iter().map(String::as_str));
    let mut t = Table::new(&header);
    for (label, row) in grid.row_labels.iter().zip(&grid.cells) {
        let mut fields = vec![label.clone()];
        fields.extend(row.iter().map(|c| opt(*c)));
        t.row(fields);
    }
    let mut out = RunOutput::create(&cfg.out)?;
    out.write("heatmap.csv", &t.into_bytes())?;
    out.finish("analyze", &cfg.hash, cfg.seed, started)
}

/// Clean and robust accuracy of a model trained with `regime`, evaluated
/// under the configured attack.
fn train_and_evaluate(cfg: &ExperimentConfig, data: &Data, regime: Regime) -> Result<(f64, f64)> {
    let tc = TrainConfig {
        regime,
        eval_attack: None,
        ..cfg.train.clone()
    };
    let outcome = train(initial_model(cfg)?, &data.train, &data.test, &data.norm, &tc)?;
    let pm = PixelModel::new(&outcome.model, &data.norm)?;
    let eval = data.test.head(cfg.attack_samples);
    Ok((
        clean_accuracy(&pm, &eval)?,
        robust_accuracy(&pm, &eval, &cfg.attack, cfg.seed)?,
    ))
}

fn inner_attack(cfg: &ExperimentConfig, constraint: Constraint) -> AttackConfig {
    cfg.attack.clone().with_constraint(constraint)
}

pub fn cmd_sweep(cfg: &ExperimentConfig, kind: SweepKind) -> Result<()> {
    let started = unix_now();
    let data = load_data(cfg)?;
    let mut out = RunOutput::create(&cfg.out)?;
    match kind {
        SweepKind::Lambda => {
            let mut t = Table::new(&["lambda", "clean_acc", "adv_acc"]);
            for &l in &cfg.sweep.lambdas {
                let regime = Regime::Adversarial(inner_attack(cfg, Constraint::LambdaMix(l)));
                let (clean, adv) = train_and_evaluate(cfg, &data, regime)?;
                println!("lambda {l}: clean {clean:.2}% adv {adv:.2}%");
                t.row([l.to_string(), clean.to_string(), adv.to_string()]);
            }
            out.write("lambda_sweep.csv", &t.into_bytes())?;
        }
        SweepKind::Drop => {
            let bands = band_partition(cfg.sweep.drop_bands)?;
            let init = initial_model(cfg)?;
            let grid = drop_rate_grid(
                &init,
                &data.train,
                &data.test,
                &data.norm,
                &bands,
                &cfg.sweep.drop_rates,
                &cfg.train,
            )?;
            for f in &grid.failures {
                eprintln!("warning: {f}");
            }
            let mut t = Table::new(&["drop_rate", "band", "clean_acc"]);
            for (p, row) in grid.drop_rates.iter().zip(&grid.cells) {
                for (b, cell) in grid.bands.iter().zip(row) {
                    t.row([p.to_string(), b.to_string(), opt(*cell)]);
                }
            }
            out.write("drop_grid.csv", &t.into_bytes())?;
        }
        SweepKind::Eta => {
            if cfg.attack.norm != Norm::LInf {
                return Err(CliError::Usage("the eta sweep needs attack.norm = linf".into()));
            }
            let mut t = Table::new(&["k", "reversed", "clean_acc", "adv_acc"]);
            for &k in &cfg.sweep.eta_k {
                for reversed in [false, true] {
                    let c = Constraint::band_epsilons(k, cfg.attack.epsilon, reversed)?;
                    let (clean, adv) = train_and_evaluate(cfg, &data, Regime::Adversarial(inner_attack(cfg, c)))?;
                    println!("k {k} reversed {reversed}: clean {clean:.2}% adv {adv:.2}%");
                    t.row([k.to_string(), reversed.to_string(), clean.to_string(), adv.to_string()]);
                }
            }
            out.write("eta_sweep.csv", &t.into_bytes())?;
        }
    }
    out.finish("sweep", &cfg.hash, cfg.seed, started)
}
