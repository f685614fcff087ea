use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sscore::commands;

/// Severity scoring of lung CT patterns on synthetic thorax phantoms:
/// dataset synthesis, cascaded regression training, and agreement reports.
#[derive(Parser)]
#[command(name = "sscore", version, about)]
struct Cli {
    /// JSON experiment config (fields mirror the defaults; partial files OK).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Emit a 2D slice dataset (volume-format slices + dataset.csv).
    Synth {
        /// Also write 16-bit PGM previews and lung-mask PGMs.
        #[arg(long)]
        pgm: bool,
    },
    /// Emit 3D phantom volumes and their level annotation CSV.
    Phantoms,
    /// Train the 3D level-selection network on a phantoms directory.
    TrainLevels {
        /// Directory produced by `phantoms`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the 2D score network on a slice dataset directory.
    TrainScores {
        /// Directory produced by `synth`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Cascade two checkpoints over volumes; optionally score a dataset.
    Eval {
        /// Phantoms directory (volumes + levels.csv).
        #[arg(long)]
        volumes: PathBuf,
        /// Slice dataset directory to score against stored grades.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        net3d: PathBuf,
        #[arg(long)]
        net2d: PathBuf,
    },
    /// Rater-vs-consensus agreement table from a rating CSV.
    Agree {
        #[arg(long)]
        input: PathBuf,
    },
    /// Bland-Altman / correlation plot CSVs from prediction files.
    PlotData {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        levels: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> sscore::Result<()> {
    let cfg = commands::load_config(cli.config.as_deref(), cli.seed)?;
    match cli.cmd {
        Cmd::Synth { pgm } => commands::cmd_synth(&cfg, &cli.out, pgm),
        Cmd::Phantoms => commands::cmd_phantoms(&cfg, &cli.out),
        Cmd::TrainLevels { data } => commands::cmd_train_levels(&cfg, &data, &cli.out),
        Cmd::TrainScores { data } => commands::cmd_train_scores(&cfg, &data, &cli.out),
        Cmd::Eval {
            volumes,
            dataset,
            net3d,
            net2d,
        } => commands::cmd_eval(&cfg, &volumes, dataset.as_deref(), &net3d, &net2d, &cli.out),
        Cmd::Agree { input } => commands::cmd_agree(&cfg, &input, &cli.out),
        Cmd::PlotData { scores, levels } => {
            commands::cmd_plot_data(scores.as_deref(), levels.as_deref(), &cli.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
