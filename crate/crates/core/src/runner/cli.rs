//! Command-line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::runner::config::{parse_config, ExperimentConfig};
use crate::runner::experiment::{run_experiment, run_sweep, write_gap_histogram, RunArtifacts};
use crate::runner::plot::emit_plots;

#[derive(Debug, Parser)]
#[command(
    name = "vdl",
    version,
    about = "Simulate value drift of a tabular policy under SFT and preference optimization",
    after_help = "The output directory can also be set with the VDL_OUTPUT_DIR environment variable."
)]
struct Cli {
    /// Override the master seed of the configuration.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full pipeline for one configuration.
    Run {
        /// Experiment configuration (JSON).
        config: PathBuf,
    },
    /// Run every cell of the configuration's sweep grid.
    Sweep {
        /// Experiment configuration (JSON) with a `sweep` section.
        config: PathBuf,
    },
    /// Render SVG charts from a trajectory CSV.
    Plot {
        /// trajectory.csv written by `run`.
        trajectory: PathBuf,
        /// Directory receiving <phase>/<topic>.svg.
        outdir: PathBuf,
    },
    /// Write the value-gap histogram of a preference dataset.
    Gap {
        /// Preference dataset (JSON with a `pref` array).
        pref: PathBuf,
        /// World document the pairs refer to.
        world: PathBuf,
        /// Directory receiving value_gap_hist.csv.
        #[arg(long, default_value = ".", value_name = "DIR")]
        out: PathBuf,
    },
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// status: 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(parsed) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = seed {
        cfg = cfg.with_master_seed(seed)?;
    }
    Ok(cfg.with_env_overrides())
}

fn summarize(out: &mut impl Write, a: &RunArtifacts) {
    let _ = writeln!(out, "wrote {}", a.dir.display());
    if let Some(report) = &a.pref_report {
        for row in &report.rows {
            let topic = a.world.topic(row.topic).map(|t| t.name.as_str()).unwrap_or("?");
            let _ = writeln!(
                out,
                "  {topic:<36} {:<8} magnitude {:+.4}  time {:.3}",
                row.stance.as_str(),
                row.magnitude,
                row.time
            );
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config, cli.seed)?;
            let artifacts = run_experiment(&cfg)?;
            summarize(&mut stdout, &artifacts);
        }
        Command::Sweep { config } => {
            let cfg = load_config(&config, cli.seed)?;
            for cell in run_sweep(&cfg)? {
                let _ = writeln!(stdout, "cell {} {:?}", cell.index, cell.overrides);
                summarize(&mut stdout, &cell.artifacts);
            }
        }
        Command::Plot { trajectory, outdir } => {
            for path in emit_plots(&trajectory, &outdir)? {
                let _ = writeln!(stdout, "{}", path.display());
            }
        }
        Command::Gap { pref, world, out } => {
            let path = write_gap_histogram(&pref, &world, &out)?;
            let _ = writeln!(stdout, "{}", path.display());
        }
    }
    Ok(())
}
