use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use freqadv_cli::commands::{cmd_analyze, cmd_attack, cmd_sweep, cmd_train, AnalysisKind, RunArgs, SweepKind};
use freqadv_cli::{parse_config, CliError, Overrides};

#[derive(Parser)]
#[command(
    name = "freqadv",
    version,
    about = "Frequency-constrained adversarial attacks, training and spectral analysis"
)]
struct Cli {
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Model checkpoint; repeat for heatmap rows.
    #[arg(long, global = true)]
    checkpoint: Vec<PathBuf>,
    /// Histogram-equalise PGM renders.
    #[arg(long, global = true)]
    equalize: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model.ckpt and train_log.csv.
    Train,
    /// Attack test images with a trained model.
    Attack,
    /// Frequency analysis of a trained model.
    Analyze {
        #[command(subcommand)]
        kind: Analysis,
    },
    /// Train and evaluate a family of models.
    Sweep {
        #[command(subcommand)]
        kind: Sweep,
    },
}

#[derive(Subcommand, Clone, Copy)]
enum Analysis {
    /// Mean |DCT| of the max-logit gradient at adversarial images.
    Spectrum,
    /// Accuracy under attacks restricted to each frequency or band.
    Vulnerability,
    /// Logit change when each frequency is removed.
    Occlusion,
    /// Accuracy of several models under several attack masks.
    Heatmap,
}

#[derive(Subcommand, Clone, Copy)]
enum Sweep {
    /// Adversarial training with each low/high mixing weight.
    Lambda,
    /// Frequency-drop training over drop rates and bands.
    Drop,
    /// Adversarial training with per-band budgets.
    Eta,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
    };
    let cfg = parse_config(&path, &overrides)?;
    let args = RunArgs {
        checkpoints: cli.checkpoint,
        equalize: cli.equalize,
    };
    match cli.command {
        Command::Train => cmd_train(&cfg),
        Command::Attack => cmd_attack(&cfg, &args),
        Command::Analyze { kind } => {
            let kind = match kind {
                Analysis::Spectrum => AnalysisKind::Spectrum,
                Analysis::Vulnerability => AnalysisKind::Vulnerability,
                Analysis::Occlusion => AnalysisKind::Occlusion,
                Analysis::Heatmap => AnalysisKind::Heatmap,
            };
            cmd_analyze(&cfg, kind, &args)
        }
        Command::Sweep { kind } => {
            let kind = match kind {
                Sweep::Lambda => SweepKind::Lambda,
                Sweep::Drop => SweepKind::Drop,
                Sweep::Eta => SweepKind::Eta,
            };
            cmd_sweep(&cfg, kind)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
