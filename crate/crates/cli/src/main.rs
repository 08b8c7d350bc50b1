use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lreg_cli::report::{read_runs, render, summarize};
use lreg_cli::{parse_config, run_experiment, ExperimentConfig, RunError};

/// Logical-regularization experiments on synthetic tasks.
#[derive(Parser)]
#[command(name = "lreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config and write runs.csv, summary.csv and artifacts.
    Run(RunArgs),
    /// Parse a config and print it with all defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Aggregate the runs.csv of a finished run directory.
    Report {
        /// Run directory (the one holding runs.csv).
        dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output root; overrides `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds to run, e.g. `0,1,5` or `0-9`; overrides `seeds`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (
                    a.parse().map_err(|_| format!("bad seed {a:?}"))?,
                    b.parse().map_err(|_| format!("bad seed {b:?}"))?,
                );
                if a > b {
                    return Err(format!("empty seed range {part}"));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| format!("bad seed {part:?}"))?),
        }
    }
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}

fn load(path: &Path, seeds: Option<&str>) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut cfg = parse_config(&text).map_err(|e| e.to_string())?;
    if let Some(s) = seeds {
        cfg.seeds = parse_seeds(s).map_err(|e| format!("config error at `--seeds`: {e}"))?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load(&config, None) {
            Ok(cfg) => {
                print!("{}", cfg.echo());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(2)
            }
        },
        Command::Run(args) => {
            let cfg = match load(&args.config, args.seeds.as_deref()) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            };
            eprintln!("# {} run, config {}\n{}", cfg.kind, cfg.hash(), cfg.echo());
            match run_experiment(&cfg, args.out.as_deref(), args.jobs) {
                Ok(dir) => {
                    println!("{}", dir.display());
                    ExitCode::SUCCESS
                }
                Err(e @ RunError::Config(_)) => {
                    eprintln!("{e}");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Report { dir } => match read_runs(&dir.join("runs.csv")) {
            Ok(records) => {
                print!("{}", render(&summarize(&records)));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("cannot read {}: {e}", dir.join("runs.csv").display());
                ExitCode::from(1)
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("0-3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_seeds("5, 1,2-3").unwrap(), vec![5, 1, 2, 3]);
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("3-1").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
