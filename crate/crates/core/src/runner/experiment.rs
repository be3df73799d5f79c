//! The world → SFT → preference-optimization pipeline and its artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::eval::{evaluate_checkpoint, EvalMode};
use crate::metrics::{drift_report, topic_interval, value_gap_histogram, DriftReport, Histogram, Trajectory, DEFAULT_GAP_BINS};
use crate::policy::{Policy, ReferenceSnapshot};
use crate::runner::config::{cell_dir_name, ExperimentConfig};
use crate::runner::plot::{emit_plots, TRAJECTORY_HEADER};
use crate::seed::{self, stream};
use crate::stance::Stance;
use crate::trainers::{train, Dataset, TrainOutput, TrainerConfig};
use crate::world::{
    flip_labels, generate_preference_dataset, generate_sft_dataset, generate_world, DatasetDocument,
    PreferencePair, SftExample, World, WorldDocument,
};

pub const DRIFT_HEADER: [&str; 7] = [
    "algorithm",
    "topic",
    "stance",
    "magnitude",
    "time",
    "extremum_value",
    "extremum_step",
];
pub const GAP_HEADER: [&str; 3] = ["bin_lo", "bin_hi", "count"];
pub const ABORT_FILE: &str = "abort.txt";

const EXTREMUM_RULE: &str = "farthest checkpoint after the first from the starting value; ties to the larger value, then the earlier step";

/// Seventeen significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// In-memory results of one pipeline run, alongside the files on disk.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub world: World,
    pub sft_data: Vec<SftExample>,
    pub pref_data: Vec<PreferencePair>,
    pub sft: TrainOutput,
    pub pref: TrainOutput,
    pub sft_report: Option<DriftReport>,
    pub pref_report: Option<DriftReport>,
    pub gap_histogram: Histogram,
    pub policy_sft: Policy,
    pub policy_final: Policy,
    pub plots: Vec<PathBuf>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let _ = fs::remove_file(dir.join(ABORT_FILE));

    let world = generate_world(&config.world)?;
    let sft_gen = generate_sft_dataset(
        &world,
        config.sft.mix,
        config.sft.n,
        seed::derive(config.master_seed, stream::SFT_DATA),
    )?;
    let mut pref_data = generate_preference_dataset(
        &world,
        config.pref.gap,
        config.pref.alignment,
        config.pref.n,
        seed::derive(config.master_seed, stream::PREF_DATA),
    )?;
    if config.pref.flip {
        pref_data = flip_labels(&pref_data);
    }
    let sft_data = sft_gen.examples;

    write(&dir.join("world.json"), &WorldDocument::new(&world, &sft_data, &pref_data).to_json()?)?;
    write_dataset(&dir.join("sft.json"), DatasetDocument {
        sft: sft_data.clone(),
        pref: Vec::new(),
    })?;
    write_dataset(&dir.join("pref.json"), DatasetDocument {
        sft: Vec::new(),
        pref: pref_data.clone(),
    })?;

    let mut policy = Policy::uniform(&world);
    write(&dir.join("policy_initial.json"), &policy.to_json()?)?;

    let sft = run_phase(&dir, "sft", &mut policy, &world, &Dataset::Sft(sft_data.clone()), &config.sft.trainer, config.eval)?;
    let policy_sft = policy.clone();
    write(&dir.join("policy_sft.json"), &policy.to_json()?)?;

    let pref = run_phase(
        &dir,
        "pref",
        &mut policy,
        &world,
        &Dataset::Preference(pref_data.clone()),
        &config.pref.trainer,
        config.eval,
    )?;
    write(&dir.join("policy_pref.json"), &policy.to_json()?)?;
    if let Some(reference) = &pref.reference {
        write(&dir.join("reference_pref.json"), &reference.to_policy().to_json()?)?;
    }

    let trajectory_path = dir.join("trajectory.csv");
    let mut trajectory_csv = String::new();
    {
        let mut w = csv_writer(&mut trajectory_csv);
        w.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
        for (phase, out) in [("sft", &sft), ("pref", &pref)] {
            trajectory_rows(&mut w, phase, &out.trajectory, &world)?;
        }
        finish(w)?;
    }
    write(&trajectory_path, &trajectory_csv)?;

    let sft_report = write_drift_report(&dir.join("drift_report_sft.csv"), "sft", &sft.trajectory, &world)?;
    let pref_report = write_drift_report(
        &dir.join("drift_report_pref.csv"),
        &config.pref.trainer.algorithm,
        &pref.trajectory,
        &world,
    )?;

    let gap_histogram = value_gap_histogram(&pref_data, &world, DEFAULT_GAP_BINS)?;
    write_histogram(&dir.join("value_gap_hist.csv"), &gap_histogram)?;

    let plots = emit_plots(&trajectory_path, &dir.join("plots"))?;

    let metadata = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "master_seed": config.master_seed,
        "seeds": {
            "world": config.world.seed,
            "sft_data": seed::derive(config.master_seed, stream::SFT_DATA),
            "pref_data": seed::derive(config.master_seed, stream::PREF_DATA),
            "sft_shuffle": config.sft.trainer.shuffle_seed,
            "pref_shuffle": config.pref.trainer.shuffle_seed,
            "eval": match config.eval { EvalMode::Sampled { seed, .. } => Value::from(seed), EvalMode::Exact => Value::Null },
        },
        "world": {
            "n_topics": config.world.n_topics,
            "prompts_per_topic": config.world.prompts_per_topic,
            "responses_per_prompt": config.world.responses_per_prompt,
            "stance_weights": config.world.stance_weights,
            "length_range": [config.world.length_range.0, config.world.length_range.1],
        },
        "sft": {
            "mix": config.sft.mix.weights(),
            "n": config.sft.n,
            "fallbacks": sft_gen.fallbacks,
            "trainer": serde_json::to_value(&config.sft.trainer)?,
            "steps": sft.losses.len(),
            "checkpoints": sft.trajectory.checkpoints().len(),
        },
        "pref": {
            "gap": config.pref.gap,
            "alignment": config.pref.alignment,
            "flip": config.pref.flip,
            "n": config.pref.n,
            "trainer": serde_json::to_value(&config.pref.trainer)?,
            "steps": pref.losses.len(),
            "checkpoints": pref.trajectory.checkpoints().len(),
        },
        "eval": match config.eval {
            EvalMode::Exact => json!({"mode": "exact"}),
            EvalMode::Sampled { k, temperature, .. } => json!({"mode": "sampled", "k": k, "temperature": temperature}),
        },
        "drift_time_extremum_rule": EXTREMUM_RULE,
        "float_format": "17 significant digits",
    });
    write(&dir.join("metadata.json"), &serde_json::to_string_pretty(&metadata)?)?;

    Ok(RunArtifacts {
        dir,
        world,
        sft_data,
        pref_data,
        sft,
        pref,
        sft_report,
        pref_report,
        gap_histogram,
        policy_sft,
        policy_final: policy,
        plots,
    })
}

/// Results of every cell of a sweep grid, in cell order.
#[derive(Debug)]
pub struct SweepCell {
    pub index: usize,
    pub overrides: Vec<(String, Value)>,
    pub artifacts: RunArtifacts,
}

/// Runs every grid cell, in parallel, each in its own subdirectory, and
/// writes a `sweep.csv` index.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepCell>> {
    let n = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no sweep grid".into()))?
        .len();
    let cells: Vec<_> = (0..n).map(|i| config.sweep_cell(i)).collect::<Result<_>>()?;
    let results: Vec<SweepCell> = cells
        .into_par_iter()
        .enumerate()
        .map(|(index, (cfg, overrides))| {
            run_experiment(&cfg).map(|artifacts| SweepCell {
                index,
                overrides,
                artifacts,
            })
        })
        .collect::<Result<_>>()?;

    let mut index_csv = String::new();
    {
        let mut w = csv_writer(&mut index_csv);
        w.write_record(["cell", "dir", "master_seed", "overrides"]).map_err(csv_err)?;
        for cell in &results {
            let overrides: serde_json::Map<String, Value> = cell.overrides.iter().cloned().collect();
            let (cfg, _) = config.sweep_cell(cell.index)?;
            w.write_record([
                cell.index.to_string(),
                cell_dir_name(cell.index),
                cfg.master_seed.to_string(),
                Value::Object(overrides).to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish(w)?;
    }
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    write(&config.output_dir.join("sweep.csv"), &index_csv)?;
    Ok(results)
}

/// Reads a preference dataset and its world and writes `value_gap_hist.csv`
/// into `out_dir`.
pub fn write_gap_histogram(pref_json: &Path, world_json: &Path, out_dir: &Path) -> Result<PathBuf> {
    let (world, _, embedded) = WorldDocument::load(world_json)?.into_parts()?;
    let mut pairs = DatasetDocument::load(pref_json)?.pref;
    if pairs.is_empty() {
        pairs = embedded;
    }
    for pair in &pairs {
        world.check_pair(pair)?;
    }
    let hist = value_gap_histogram(&pairs, &world, DEFAULT_GAP_BINS)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("value_gap_hist.csv");
    write_histogram(&path, &hist)?;
    Ok(path)
}

fn run_phase(
    dir: &Path,
    phase: &str,
    policy: &mut Policy,
    world: &World,
    data: &Dataset,
    trainer: &TrainerConfig,
    mode: EvalMode,
) -> Result<TrainOutput> {
    let mut hook = |step: usize, p: &Policy| evaluate_checkpoint(p, world, step, mode);
    match train(policy, world, data, trainer, &mut hook) {
        Err(e @ Error::TrainerAbort { .. }) => {
            let note = format!(
                "phase: {phase}\nalgorithm: {}\nlearning_rate: {}\nerror: {e}\n",
                trainer.algorithm, trainer.learning_rate
            );
            write(&dir.join(ABORT_FILE), &note)?;
            Err(e)
        }
        other => other,
    }
}

fn trajectory_rows(w: &mut CsvBuf<'_>, phase: &str, traj: &Trajectory, world: &World) -> Result<()> {
    for cp in traj.checkpoints() {
        for tv in &cp.topics {
            let name = &world.topic(tv.topic)?.name;
            for stance in Stance::ALL {
                let (mean, lo, hi) = topic_interval(cp, tv.topic, stance)?;
                w.write_record([
                    phase,
                    &cp.step.to_string(),
                    name,
                    stance.as_str(),
                    &fmt_f64(mean),
                    &fmt_f64(lo),
                    &fmt_f64(hi),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    Ok(())
}

/// A phase with a single checkpoint has no drift to report; its file holds
/// only the header.
fn write_drift_report(path: &Path, algorithm: &str, traj: &Trajectory, world: &World) -> Result<Option<DriftReport>> {
    let report = if traj.checkpoints().len() >= 2 {
        Some(drift_report(traj)?)
    } else {
        None
    };
    let mut buf = String::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(DRIFT_HEADER).map_err(csv_err)?;
        for row in report.iter().flat_map(|r| &r.rows) {
            w.write_record([
                algorithm,
                &world.topic(row.topic)?.name,
                row.stance.as_str(),
                &fmt_f64(row.magnitude),
                &fmt_f64(row.time),
                &fmt_f64(row.extremum_value),
                &row.extremum_step.to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish(w)?;
    }
    write(path, &buf)?;
    Ok(report)
}

fn write_histogram(path: &Path, hist: &Histogram) -> Result<()> {
    let mut buf = String::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(GAP_HEADER).map_err(csv_err)?;
        for (i, count) in hist.counts.iter().enumerate() {
            w.write_record([fmt_f64(hist.edges[i]), fmt_f64(hist.edges[i + 1]), count.to_string()])
                .map_err(csv_err)?;
        }
        finish(w)?;
    }
    write(path, &buf)
}

fn write_dataset(path: &Path, doc: DatasetDocument) -> Result<()> {
    write(path, &serde_json::to_string_pretty(&doc)?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct CsvBuf<'a> {
    out: &'a mut String,
    writer: csv::Writer<Vec<u8>>,
}

fn csv_writer(out: &mut String) -> CsvBuf<'_> {
    CsvBuf {
        out,
        writer: csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new()),
    }
}

impl CsvBuf<'_> {
    fn write_record<I, T>(&mut self, record: I) -> csv::Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.writer.write_record(record)
    }
}

fn finish(w: CsvBuf<'_>) -> Result<()> {
    let bytes = w.writer.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    w.out.push_str(std::str::from_utf8(&bytes).map_err(|e| Error::invalid(e.to_string()))?);
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv {
        row: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

/// Policy used as π_ref in a phase, restored from its artifact.
pub fn load_reference(path: &Path, world: &World) -> Result<ReferenceSnapshot> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Policy::from_json(&text, world)?.snapshot_reference())
}
