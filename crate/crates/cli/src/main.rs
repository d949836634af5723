use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use ivbart::simlab::StudyOptions;
use ivbart_cli::config::FitConfig;
use ivbart_cli::fit::cmd_fit;
use ivbart_cli::report::render_text;
use ivbart_cli::simulate::cmd_simulate;
use ivbart_cli::summarize::cmd_summarize;

#[derive(Parser)]
#[command(name = "ivbart", version, about = "Instrumental-variable BART models for Mendelian randomization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to CSV data and write draws, summaries and figures.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run (or resume) a replicated simulation study.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "study-out")]
        output: PathBuf,
        /// Worker threads.
        #[arg(long, env = "IVBART_PARALLEL", default_value_t = 1)]
        parallel: usize,
        /// Keep replications already recorded in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many new replications.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Summarize a draw file: per-chain and pooled statistics with split R-hat.
    Summarize {
        draws: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Write the report here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { config, seed, output } => {
            let mut cfg = FitConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = output.unwrap_or_else(|| cfg.output.clone());
            let dir = config.parent().unwrap_or(Path::new("."));
            for p in cmd_fit(&cfg, dir, &out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Simulate { config, seed, output, parallel, resume, stop_after } => {
            let report = cmd_simulate(&config, seed, &output, &StudyOptions { parallel, resume, stop_after })?;
            let done = report.records.len();
            if report.complete {
                println!("study complete: {done} replications, tables in {}", output.display());
            } else {
                println!("study paused at {done} of {} replications; rerun with --resume", report.jobs_total);
            }
        }
        Command::Summarize { draws, format, output } => {
            let report = cmd_summarize(&draws)?;
            let text = match format {
                Format::Json => serde_json::to_string_pretty(&report)? + "\n",
                Format::Text => render_text(&report),
            };
            match output {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
