use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use weaksupcon::datagen::Split;
use weaksupcon::harness::{self, ExperimentConfig, Layout};
use weaksupcon::losses::LossKind;
use weaksupcon::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Generate,
    Pretrain,
    Extract,
    Mil,
    Pca,
    Report,
    All,
}

/// Weakly supervised contrastive pre-training for MIL on synthetic bags.
#[derive(Debug, Parser)]
#[command(name = "weaksupcon", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config (overrides a named preset).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `master_seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict pretrain/extract/mil/pca to one encoder variant.
    #[arg(long)]
    loss: Option<String>,
    /// Split(s) exported by `pca`, e.g. `--split test`.
    #[arg(long)]
    split: Vec<String>,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = harness::load_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_master_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let loss = cli
        .loss
        .as_deref()
        .map(str::parse::<LossKind>)
        .transpose()?;
    let splits = cli
        .split
        .iter()
        .map(|s| s.parse::<Split>())
        .collect::<Result<Vec<_>>>()?;
    if loss.is_some()
        && matches!(
            cli.command,
            Command::Generate | Command::Report | Command::All
        )
    {
        return Err(Error::Usage(
            "--loss only applies to pretrain, extract, mil and pca".into(),
        ));
    }
    let cfg = load(cli)?;
    let layout = Layout::new(&cfg.output_dir);
    match cli.command {
        Command::Generate => {
            harness::cmd_generate(&cfg)?;
            eprintln!("dataset written to {}", layout.dataset().display());
        }
        Command::Pretrain => {
            harness::cmd_pretrain(&cfg, loss)?;
            eprintln!("checkpoints written under {}", layout.root.display());
        }
        Command::Extract => {
            harness::cmd_extract(&cfg, loss)?;
            eprintln!("features written under {}", layout.root.display());
        }
        Command::Mil => {
            for s in harness::cmd_mil(&cfg, loss)? {
                eprintln!(
                    "{}: test AUC {:.4} ± {:.4} over {} runs",
                    s.encoder, s.mean.auc, s.std.auc, s.n_runs
                );
            }
        }
        Command::Pca => {
            let splits = (!splits.is_empty()).then_some(splits.as_slice());
            for s in harness::cmd_pca(&cfg, loss, splits)? {
                eprintln!(
                    "{}: neg-neg cosine {:.4}, neg-pos cosine {:.4}",
                    s.loss_kind, s.cosine.negative_negative, s.cosine.negative_true_positive
                );
            }
        }
        Command::Report => {
            harness::cmd_report(&cfg)?;
            print_report(&layout)?;
        }
        Command::All => {
            harness::cmd_all(&cfg)?;
            print_report(&layout)?;
        }
    }
    Ok(())
}

fn print_report(layout: &Layout) -> Result<()> {
    let path = layout.report_txt();
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
    print!("{text}");
    Ok(())
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
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
