//! Experiment orchestration: configuration, the training pipeline, sweeps,
//! CSV/JSON persistence, SVG charts and the command-line front end.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod plot;

pub use config::{parse_config, ExperimentConfig, PrefPhase, SftPhase, Sweep};
pub use experiment::{fmt_f64, run_experiment, run_sweep, write_gap_histogram, RunArtifacts, SweepCell};
pub use plot::{emit_plots, parse_trajectory_csv, TrajectoryRow};
