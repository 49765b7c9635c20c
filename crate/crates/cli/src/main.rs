use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use suba::simulator::{run_study, sensitivity_sweep, SweepAxis};
use suba_cli::{read_config_file, render_report, report_file, resolve_config, write_study, write_sweep, StudyFlags};

/// Simulation studies for subgroup-based adaptive trial designs.
#[derive(Debug, Parser)]
#[command(name = "suba", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate replicates of one scenario under the chosen designs.
    Study {
        #[command(flatten)]
        flags: StudyFlags,
        /// TOML file whose keys override the flags.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the CSV and JSON outputs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat a study across values of phi or N.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        /// Axis values, comma separated; the standard set when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[command(flatten)]
        flags: StudyFlags,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a summary.json or sweep.json as a table.
    Report {
        path: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Study { flags, config, out } => {
            let file = config.as_deref().map(read_config_file).transpose()?;
            let study = resolve_config(&flags, file.as_deref())?;
            let result = run_study(&study)?;
            if let Some(dir) = out {
                write_study(&result, &dir)?;
            }
            print!("{}", render_report(&result));
        }
        Command::Sweep {
            axis,
            values,
            flags,
            config,
            out,
        } => {
            let file = config.as_deref().map(read_config_file).transpose()?;
            let base = resolve_config(&flags, file.as_deref())?;
            let values = values.unwrap_or_else(|| axis.default_values());
            let sweep = sensitivity_sweep(&base, axis, &values)?;
            if let Some(dir) = out {
                write_sweep(&sweep, &dir)?;
            }
            for p in &sweep.points {
                println!("== {axis:?} = {}", p.value);
                print!("{}", render_report(&p.result));
            }
        }
        Command::Report { path } => print!("{}", report_file(&path)?),
    }
    Ok(())
}
