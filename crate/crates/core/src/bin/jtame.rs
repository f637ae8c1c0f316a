use clap::{Args, Parser, Subcommand};
use jtame::reports::{execute, Command, RunOptions};
use std::path::PathBuf;
use std::process::ExitCode;

/// Scenario runner for tameness, isotopy, inflation and preparation experiments.
#[derive(Parser)]
#[command(name = "jtame", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Margin law sweep for block-form structures.
    Linear(RunArgs),
    /// Fiberwise isotopy sweep and step-lemma battery.
    Isotopy(RunArgs),
    /// Inflation in the trivial, negative or positive case.
    Inflate(RunArgs),
    /// End-to-end preparation of a structure along a curve.
    Prepare(RunArgs),
    /// Reduced invariant battery over every module.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML scenario file.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SelftestArgs {
    /// Optional TOML file with `seed`, `grid_scale` and `[tolerances]`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Output directory for CSV and JSON artifacts.
    #[arg(long, default_value = "jtame-out")]
    out: PathBuf,
    /// Seed for randomized batteries; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplier for every grid resolution; overrides the config.
    #[arg(long)]
    grid_scale: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, config, common) = match cli.command {
        Sub::Linear(a) => (Command::Linear, Some(a.config), a.common),
        Sub::Isotopy(a) => (Command::Isotopy, Some(a.config), a.common),
        Sub::Inflate(a) => (Command::Inflate, Some(a.config), a.common),
        Sub::Prepare(a) => (Command::Prepare, Some(a.config), a.common),
        Sub::Selftest(a) => (Command::Selftest, a.config, a.common),
    };
    let opts = RunOptions {
        config,
        out: common.out,
        seed: common.seed,
        grid_scale: common.grid_scale,
    };
    match execute(cmd, &opts) {
        Ok(report) => {
            for line in report.summary_lines() {
                println!("{line}");
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("jtame {}: {e}", cmd.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
