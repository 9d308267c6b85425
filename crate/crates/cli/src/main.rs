use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use metarl::evalreport::Method;
use metarl_cli::{cmd_report, cmd_surface, run_config_file};

#[derive(Parser)]
#[command(name = "metarl", version, about = "Meta-learned RL algorithms: training, distillation, proposal, reporting")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the stage described by a TOML config.
    Run {
        config: PathBuf,
        /// Override the configured worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Aggregate run-record CSVs into normalized IQM tables.
    Report {
        /// Glob of record files, e.g. 'runs/*/records.csv'.
        glob: String,
        /// Method whose per-environment mean return normalizes the others.
        #[arg(long, default_value = "handcrafted_baseline")]
        baseline: Method,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_boot: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export D and dD/dr over an (r, A) grid for a drift artifact.
    Surface {
        artifact: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { config, workers } => run_config_file(&config, workers).map(|m| {
            println!("{}: {} env steps, outputs in {}", m.name, m.env_steps, m.config.out_dir.display());
        }),
        Cmd::Report {
            glob,
            baseline,
            out,
            n_boot,
            seed,
        } => cmd_report(&glob, baseline, &out, n_boot, seed).map(|r| {
            print!("{}", r.report.to_text());
            for s in r.surfaces {
                println!("surface: {}", s.display());
            }
        }),
        Cmd::Surface { artifact, out } => cmd_surface(&artifact, &out).map(|n| println!("{n} points written to {}", out.display())),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
