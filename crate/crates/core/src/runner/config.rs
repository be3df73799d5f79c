//! Strict-schema JSON experiment configuration.
//!
//! Every section and field is optional; omitted values take the defaults of
//! the selected algorithm. Unknown keys are rejected by name.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::EvalMode;
use crate::seed::{self, stream};
use crate::trainers::TrainerConfig;
use crate::world::{Alignment, StanceMix, WorldParams};

pub const DEFAULT_OUTPUT_DIR: &str = "runs/default";
pub const OUTPUT_DIR_ENV: &str = "VDL_OUTPUT_DIR";

/// Maps a serde_json failure to a positioned parse error, or to a schema
/// error when the failure is an unknown key.
pub fn json_parse_error(e: serde_json::Error) -> Error {
    let message = e.to_string();
    if message.starts_with("unknown field") {
        return Error::Config(message);
    }
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message,
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    world: Option<RawWorld>,
    sft: Option<RawSft>,
    pref: Option<RawPref>,
    eval: Option<RawEval>,
    sweep: Option<BTreeMap<String, Vec<Value>>>,
    output_dir: Option<PathBuf>,
    master_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorld {
    n_topics: Option<usize>,
    prompts_per_topic: Option<usize>,
    responses_per_prompt: Option<usize>,
    stance_weights: Option<[f64; 3]>,
    length_range: Option<(u32, u32)>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSft {
    preset: Option<String>,
    mix: Option<[f64; 3]>,
    n: Option<usize>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    checkpoint_every: Option<usize>,
    shuffle_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
struct RawPref {
    algorithm: Option<String>,
    gap: Option<f64>,
    alignment: Option<Alignment>,
    flip: Option<bool>,
    n: Option<usize>,
    #[serde(flatten)]
    trainer: RawTrainerFields,
}

// `flatten` and `deny_unknown_fields` do not combine in serde, so unknown
// keys in the preference section are caught by `check_keys` instead.
#[derive(Debug, Default, Deserialize)]
struct RawTrainerFields {
    learning_rate: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    kl_coef: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    checkpoint_every: Option<usize>,
    shuffle_seed: Option<u64>,
    reward_epochs: Option<usize>,
    reward_learning_rate: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEval {
    mode: Option<String>,
    k: Option<usize>,
    temperature: Option<f64>,
    checkpoint_every: Option<usize>,
}

const PREF_KEYS: [&str; 15] = [
    "algorithm",
    "gap",
    "alignment",
    "flip",
    "n",
    "learning_rate",
    "beta",
    "gamma",
    "kl_coef",
    "epochs",
    "batch_size",
    "checkpoint_every",
    "shuffle_seed",
    "reward_epochs",
    "reward_learning_rate",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SftPhase {
    pub mix: StanceMix,
    pub n: usize,
    pub trainer: TrainerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefPhase {
    pub gap: f64,
    pub alignment: Alignment,
    /// Swap chosen and rejected after generation.
    pub flip: bool,
    pub n: usize,
    pub trainer: TrainerConfig,
}

/// One parameter grid: dotted field paths mapped to candidate values.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axes: BTreeMap<String, Vec<Value>>,
}

impl Sweep {
    pub fn len(&self) -> usize {
        self.axes.values().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Overrides of cell `index`, row-major over the sorted axis names.
    pub fn cell(&self, index: usize) -> Vec<(String, Value)> {
        let mut rest = index;
        let mut out: Vec<(String, Value)> = Vec::with_capacity(self.axes.len());
        for (key, values) in self.axes.iter().rev() {
            out.push((key.clone(), values[rest % values.len()].clone()));
            rest /= values.len();
        }
        out.reverse();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub world: WorldParams,
    pub sft: SftPhase,
    pub pref: PrefPhase,
    pub eval: EvalMode,
    pub sweep: Option<Sweep>,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    raw: Value,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: Value = serde_json::from_str(text).map_err(json_parse_error)?;
    ExperimentConfig::from_value(raw)
}

impl ExperimentConfig {
    pub fn from_value(raw: Value) -> Result<Self> {
        if !raw.is_object() {
            return Err(Error::Config("top level must be a JSON object".into()));
        }
        check_keys(&raw)?;
        let cfg: RawConfig = serde_json::from_value(raw.clone()).map_err(json_parse_error)?;
        let master_seed = cfg.master_seed.unwrap_or(0);

        let w = cfg.world.unwrap_or_default();
        let base = WorldParams::default();
        let world = WorldParams {
            n_topics: w.n_topics.unwrap_or(base.n_topics),
            prompts_per_topic: w.prompts_per_topic.unwrap_or(base.prompts_per_topic),
            responses_per_prompt: w.responses_per_prompt.unwrap_or(base.responses_per_prompt),
            stance_weights: w.stance_weights.unwrap_or(base.stance_weights),
            length_range: w.length_range.unwrap_or(base.length_range),
            seed: w.seed.unwrap_or_else(|| seed::derive(master_seed, stream::WORLD)),
        };

        let e = cfg.eval.unwrap_or_default();
        let eval = match e.mode.as_deref().unwrap_or("exact") {
            "exact" => {
                if e.k.is_some() || e.temperature.is_some() {
                    return Err(Error::Config("eval.k and eval.temperature need mode \"sampled\"".into()));
                }
                EvalMode::Exact
            }
            "sampled" => {
                let EvalMode::Sampled { k, temperature, .. } = EvalMode::sampled_default(0) else {
                    unreachable!()
                };
                let k = e.k.unwrap_or(k);
                if k == 0 {
                    return Err(Error::Config("eval.k must be at least 1".into()));
                }
                EvalMode::Sampled {
                    k,
                    temperature: e.temperature.unwrap_or(temperature),
                    seed: seed::derive(master_seed, stream::EVAL),
                }
            }
            other => return Err(Error::Config(format!("unknown eval mode {other:?}; expected exact or sampled"))),
        };

        let s = cfg.sft.unwrap_or_default();
        let mix = match (s.preset.as_deref(), s.mix) {
            (Some(_), Some(_)) => return Err(Error::Config("sft: give either preset or mix, not both".into())),
            (Some(name), None) => StanceMix::preset(name).map_err(|e| Error::Config(format!("sft.preset: {e}")))?,
            (None, Some(w)) => StanceMix::new(w).map_err(|e| Error::Config(format!("sft.mix: {e}")))?,
            (None, None) => StanceMix::wildchat_like(),
        };
        let mut sft_trainer = TrainerConfig::for_algorithm("sft")?;
        sft_trainer.shuffle_seed = seed::derive(master_seed, stream::SFT_SHUFFLE);
        apply_trainer(
            &mut sft_trainer,
            RawTrainerFields {
                learning_rate: s.learning_rate,
                epochs: s.epochs,
                batch_size: s.batch_size,
                checkpoint_every: s.checkpoint_every,
                shuffle_seed: s.shuffle_seed,
                ..RawTrainerFields::default()
            },
            e.checkpoint_every,
        );
        let sft = SftPhase {
            mix,
            n: s.n.unwrap_or(3200),
            trainer: sft_trainer,
        };

        let p = cfg.pref.unwrap_or_default();
        let algorithm = p.algorithm.as_deref().unwrap_or("dpo");
        let mut pref_trainer = TrainerConfig::for_algorithm(algorithm).map_err(|e| Error::Config(format!("pref.algorithm: {e}")))?;
        if pref_trainer.algorithm == "sft" {
            return Err(Error::Config("pref.algorithm must be a preference objective".into()));
        }
        pref_trainer.shuffle_seed = seed::derive(master_seed, stream::PREF_SHUFFLE);
        apply_trainer(&mut pref_trainer, p.trainer, e.checkpoint_every);
        let pref = PrefPhase {
            gap: p.gap.unwrap_or(1.0),
            alignment: p.alignment.unwrap_or(Alignment::SupportAligned),
            flip: p.flip.unwrap_or(false),
            n: p.n.unwrap_or(3200),
            trainer: pref_trainer,
        };

        for (phase, t) in [("sft", &sft.trainer), ("pref", &pref.trainer)] {
            t.validate().map_err(|e| Error::Config(format!("{phase}: {e}")))?;
        }
        if sft.n == 0 || pref.n == 0 {
            return Err(Error::Config("dataset sizes must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&pref.gap) {
            return Err(Error::Config(format!("pref.gap {} outside [0, 1]", pref.gap)));
        }

        let sweep = match cfg.sweep {
            None => None,
            Some(axes) => {
                if axes.is_empty() {
                    return Err(Error::Config("sweep grid has no axes".into()));
                }
                for (key, values) in &axes {
                    if values.is_empty() {
                        return Err(Error::Config(format!("sweep axis {key:?} has no values")));
                    }
                    if key.starts_with("sweep") || key == "output_dir" || key == "master_seed" {
                        return Err(Error::Config(format!("sweep axis {key:?} is not a sweepable field")));
                    }
                    if values.iter().any(|v| v.is_object() || v.is_array() || v.is_null()) {
                        return Err(Error::Config(format!("sweep axis {key:?} must list scalar values")));
                    }
                }
                let sweep = Sweep { axes };
                // Validate every cell up front so a typo fails before any run starts.
                for i in 0..sweep.len() {
                    let mut cell = apply_overrides(&raw, &sweep.cell(i))?;
                    cell.as_object_mut().expect("checked above").remove("sweep");
                    ExperimentConfig::from_value(cell)?;
                }
                Some(sweep)
            }
        };

        Ok(ExperimentConfig {
            world,
            sft,
            pref,
            eval,
            sweep,
            output_dir: cfg.output_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
            master_seed,
            raw,
        })
    }

    /// The configuration as parsed, before defaults were filled in.
    pub fn raw(&self) -> &Value {
        &self.raw
    }

    /// Re-derives every seed that was not pinned explicitly.
    pub fn with_master_seed(&self, master_seed: u64) -> Result<Self> {
        let mut raw = self.raw.clone();
        raw["master_seed"] = Value::from(master_seed);
        let mut cfg = Self::from_value(raw)?;
        cfg.output_dir = self.output_dir.clone();
        Ok(cfg)
    }

    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        self.raw["output_dir"] = Value::from(dir.to_string_lossy().into_owned());
        self.output_dir = dir;
        self
    }

    /// Applies the output-directory environment override, if set.
    pub fn with_env_overrides(self) -> Self {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => self.with_output_dir(PathBuf::from(dir)),
            _ => self,
        }
    }

    /// Standalone configuration of sweep cell `index`: its overrides applied,
    /// its own sub-seed and output subdirectory, and no grid.
    pub fn sweep_cell(&self, index: usize) -> Result<(ExperimentConfig, Vec<(String, Value)>)> {
        let sweep = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::Config("config has no sweep grid".into()))?;
        if index >= sweep.len() {
            return Err(Error::invalid(format!("sweep cell {index} out of range 0..{}", sweep.len())));
        }
        let overrides = sweep.cell(index);
        let mut raw = apply_overrides(&self.raw, &overrides)?;
        let obj = raw.as_object_mut().expect("checked at parse time");
        obj.remove("sweep");
        obj.insert("master_seed".into(), Value::from(cell_seed(self.master_seed, index)));
        obj.insert(
            "output_dir".into(),
            Value::from(self.output_dir.join(cell_dir_name(index)).to_string_lossy().into_owned()),
        );
        Ok((Self::from_value(raw)?, overrides))
    }
}

/// Sub-seed of sweep cell `index`.
pub fn cell_seed(master_seed: u64, index: usize) -> u64 {
    seed::derive(seed::derive(master_seed, stream::SWEEP_CELL), index as u64)
}

pub fn cell_dir_name(index: usize) -> String {
    format!("cell_{index:03}")
}

fn apply_trainer(t: &mut TrainerConfig, f: RawTrainerFields, eval_cadence: Option<usize>) {
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = f.$field { t.$field = v; })*
        };
    }
    set!(learning_rate, beta, gamma, kl_coef, epochs, batch_size, shuffle_seed, reward_epochs, reward_learning_rate);
    t.checkpoint_every = f.checkpoint_every.or(eval_cadence);
}

fn check_keys(raw: &Value) -> Result<()> {
    if let Some(pref) = raw.get("pref") {
        if let Some(obj) = pref.as_object() {
            if let Some(key) = obj.keys().find(|k| !PREF_KEYS.contains(&k.as_str())) {
                return Err(Error::Config(format!(
                    "unknown field `{key}` in pref, expected one of {}",
                    PREF_KEYS.join(", ")
                )));
            }
        }
    }
    Ok(())
}

fn apply_overrides(raw: &Value, overrides: &[(String, Value)]) -> Result<Value> {
    let mut out = raw.clone();
    for (path, value) in overrides {
        let mut node = &mut out;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("sweep path {path:?} crosses a non-object value")))?;
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value.clone());
                break;
            }
            node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(out)
}
