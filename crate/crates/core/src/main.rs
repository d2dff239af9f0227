use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use igam::cli::{self, Format, MarginOptions};
use igam::loss::{InfoScale, InfoVariant, MarginVariant, DEFAULT_SCALE};
use igam::planner::SearchMode;
use igam::stats::EmbeddingQueue;
use igam::toy::LossKind;

#[derive(Parser)]
#[command(name = "igam", version, about = "Information amounts, margins and queue planning for embedding statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream an embedding file through the queue and write merged per-category statistics.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long, default_value_t = EmbeddingQueue::DEFAULT_CAPACITY)]
        queue_len: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Information amount of every category in a statistics file.
    Info {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        epoch: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Margin matrix from an information-amount table.
    Margins {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = InfoVariantArg::PaperDoubleExp)]
        info_variant: InfoVariantArg,
        #[arg(long, value_enum, default_value_t = IbarArg::Sum)]
        ibar: IbarArg,
        #[arg(long, value_enum, default_value_t = MarginVariantArg::Clamped)]
        margin_variant: MarginVariantArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a loss over labelled features.
    LossEval {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        margins: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = LossArg::Igam)]
        loss: LossArg,
        #[arg(long, default_value_t = DEFAULT_SCALE)]
        scale: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Memory-optimal queue length.
    Plan {
        #[arg(long)]
        instances: u64,
        #[arg(long)]
        dim: u64,
        #[arg(long)]
        classes: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::Grid)]
        mode: ModeArg,
    },
    /// Synthetic training experiments.
    Toy {
        #[command(subcommand)]
        command: ToyCommand,
    },
}

#[derive(Subcommand)]
enum ToyCommand {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the dataset and training seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise the final epoch of every run in a report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum InfoVariantArg {
    PaperDoubleExp,
    SoftmaxSingleExp,
}

#[derive(Clone, Copy, ValueEnum)]
enum IbarArg {
    Sum,
    Mean,
}

#[derive(Clone, Copy, ValueEnum)]
enum MarginVariantArg {
    Clamped,
    Signed,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Ce,
    Normface,
    Igam,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Grid,
    Exact,
}

fn emit(text: &str, out: Option<&Path>) -> igam::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> igam::Result<()> {
    match cli.command {
        Command::Stats {
            input,
            format,
            queue_len,
            out,
        } => {
            let emb = cli::read_embeddings(&input, format)?;
            emit(&cli::to_json(&cli::cmd_stats(&emb, queue_len)?)?, out.as_deref())
        }
        Command::Info { input, epoch, out } => {
            let stats = cli::read_json(&input)?;
            emit(&cli::to_json(&cli::cmd_info(&stats, epoch)?)?, out.as_deref())
        }
        Command::Margins {
            input,
            info_variant,
            ibar,
            margin_variant,
            out,
        } => {
            let table = cli::read_json(&input)?;
            let opts = MarginOptions {
                info_variant: match info_variant {
                    InfoVariantArg::PaperDoubleExp => InfoVariant::PaperDoubleExp,
                    InfoVariantArg::SoftmaxSingleExp => InfoVariant::SoftmaxSingleExp,
                },
                info_scale: match ibar {
                    IbarArg::Sum => InfoScale::Sum,
                    IbarArg::Mean => InfoScale::Mean,
                },
                margin_variant: match margin_variant {
                    MarginVariantArg::Clamped => MarginVariant::Clamped,
                    MarginVariantArg::Signed => MarginVariant::Signed,
                },
            };
            emit(&cli::to_json(&cli::cmd_margins(&table, opts)?)?, out.as_deref())
        }
        Command::LossEval {
            features,
            format,
            weights,
            margins,
            loss,
            scale,
            out,
        } => {
            let emb = cli::read_embeddings(&features, format)?;
            let weights = cli::read_json(&weights)?;
            let margins = margins.map(|p| cli::read_json(&p)).transpose()?;
            let loss = match loss {
                LossArg::Ce => LossKind::Ce,
                LossArg::Normface => LossKind::Normface,
                LossArg::Igam => LossKind::Igam,
            };
            let report = cli::cmd_loss_eval(&emb, &weights, margins.as_ref(), loss, scale)?;
            emit(&cli::to_json(&report)?, out.as_deref())
        }
        Command::Plan {
            instances,
            dim,
            classes,
            mode,
        } => {
            let mode = match mode {
                ModeArg::Grid => SearchMode::Grid,
                ModeArg::Exact => SearchMode::Exact,
            };
            emit(&cli::to_json(&cli::cmd_plan(instances, dim, classes, mode)?)?, None)
        }
        Command::Toy { command } => match command {
            ToyCommand::Run { config, seed, out } => {
                let mut cfg: cli::RunConfigFile = cli::read_json(&config)?;
                if let Some(seed) = seed {
                    cfg.dataset.seed = seed;
                    cfg.train.seed = seed;
                }
                emit(&cli::to_json(&cli::cmd_toy_run(&cfg)?)?, out.as_deref())
            }
            ToyCommand::Report { input, format, out } => {
                let report = cli::read_json(&input)?;
                let rows = cli::cmd_toy_report(&report)?;
                let text = match format {
                    Format::Csv => cli::summary_csv(&rows)?,
                    _ => cli::to_json(&rows)?,
                };
                emit(&text, out.as_deref())
            }
        },
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("igam: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
