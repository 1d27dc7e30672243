//! `circuitprobe`: layer statistics, block ranking, GGUF layer duplication and charts.
//!
//! Exit status is 0 on success, 1 for bad input or arguments, 2 when an internal
//! consistency check fails.

mod chart;
mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use circuitprobe::gguf::DuplicateMode;
use circuitprobe::scoring::{DEFAULT_MAX_WIDTH, DEFAULT_MIN_WIDTH};
use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Input(_) => 1,
            Self::Internal(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "circuitprobe", version, about = "Locate candidate reasoning blocks from layer activation statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute per-layer statistics from a CPTR trace.
    Stats {
        trace: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score and rank every candidate block.
    Rank {
        /// CPTR trace or stats JSON, detected from the first bytes.
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the candidate table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, value_name = "W")]
        min_block: Option<usize>,
        /// Defaults to 5, or the layer count when the model has fewer layers.
        #[arg(long, value_name = "W")]
        max_block: Option<usize>,
    },
    /// Duplicate a block of layers in a GGUF file.
    Surgery {
        input: PathBuf,
        /// Half-open layer range `s:e`.
        #[arg(long, value_parser = parse_block)]
        block: (usize, usize),
        #[arg(long, value_enum, default_value_t = Mode::Copy)]
        mode: Mode,
        /// Refuse to write an output larger than this.
        #[arg(long, value_name = "BYTES")]
        max_output_bytes: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Draw change_mean and change_deriv with the top blocks shaded, as SVG plus CSV.
    Chart {
        stats: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Copy,
    /// Duplicated layers share the original tensor data. llama.cpp does not load this.
    Alias,
}

impl From<Mode> for DuplicateMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Copy => DuplicateMode::Copy,
            Mode::Alias => DuplicateMode::Alias,
        }
    }
}

fn parse_block(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected s:e, got {s:?}"))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Stats { trace, output } => commands::stats(&trace, &output),
        Command::Rank { input, output, csv, min_block, max_block } => commands::rank(
            &input,
            &output,
            csv.as_deref(),
            commands::Widths {
                min: min_block.unwrap_or(DEFAULT_MIN_WIDTH),
                max: max_block,
                default_max: DEFAULT_MAX_WIDTH,
            },
        ),
        Command::Surgery { input, block, mode, max_output_bytes, output } => {
            commands::surgery(&input, block, mode.into(), max_output_bytes, &output)
        }
        Command::Chart { stats, output } => commands::chart(&stats, &output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
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
