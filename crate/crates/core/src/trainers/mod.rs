//! Post-training objectives and the checkpointed gradient-descent loop.
//!
//! Each algorithm is an [`Objective`] registered by name in an
//! [`ObjectiveRegistry`]; the loop in [`train`] looks the configured name up
//! at runtime and never matches on the algorithm itself.

pub mod objectives;
mod registry;
pub mod reward;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{PreferencePair, SftExample};

pub use objectives::{
    dpo_loss_and_grad, kl_divergence, rlhf_objective_and_grad, sft_loss_and_grad, simpo_loss_and_grad,
    RlhfValue,
};
pub use registry::{
    builtin_registry, BindContext, BoundObjective, Defaults, Dpo, Objective, ObjectiveRegistry, Rlhf, Sft,
    Simpo,
};
pub use reward::{bt_loss_and_grad, reward_model_fit, RewardFit, RewardModel};
pub use train::{train, train_with, TrainOutput, LOGIT_ABORT_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Sft,
    Preference,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Sft(Vec<SftExample>),
    Preference(Vec<PreferencePair>),
}

#[derive(Debug, Clone, Copy)]
pub enum Batch<'a> {
    Sft(&'a [SftExample]),
    Preference(&'a [PreferencePair]),
}

impl Dataset {
    pub fn kind(&self) -> DataKind {
        match self {
            Dataset::Sft(_) => DataKind::Sft,
            Dataset::Preference(_) => DataKind::Preference,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Sft(d) => d.len(),
            Dataset::Preference(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_batch(&self) -> Batch<'_> {
        match self {
            Dataset::Sft(d) => Batch::Sft(d),
            Dataset::Preference(d) => Batch::Preference(d),
        }
    }

    pub(crate) fn gather(&self, idx: &[usize]) -> Dataset {
        match self {
            Dataset::Sft(d) => Dataset::Sft(idx.iter().map(|&i| d[i]).collect()),
            Dataset::Preference(d) => Dataset::Preference(idx.iter().map(|&i| d[i]).collect()),
        }
    }
}

impl<'a> Batch<'a> {
    pub fn kind(&self) -> DataKind {
        match self {
            Batch::Sft(_) => DataKind::Sft,
            Batch::Preference(_) => DataKind::Preference,
        }
    }

    pub(crate) fn preference(self) -> Result<&'a [PreferencePair]> {
        match self {
            Batch::Preference(d) => Ok(d),
            Batch::Sft(_) => Err(Error::invalid("objective expects preference pairs, got SFT examples")),
        }
    }

    pub(crate) fn sft(self) -> Result<&'a [SftExample]> {
        match self {
            Batch::Sft(d) => Ok(d),
            Batch::Preference(_) => Err(Error::invalid("objective expects SFT examples, got preference pairs")),
        }
    }
}

/// Hyperparameters of one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub algorithm: String,
    pub learning_rate: f64,
    /// Preference strength (DPO, SimPO).
    pub beta: f64,
    /// SimPO target margin.
    pub gamma: f64,
    /// KL penalty for the RLHF objective.
    pub kl_coef: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Evaluate every this many optimizer steps; `None` picks about 20 points per phase.
    pub checkpoint_every: Option<usize>,
    pub shuffle_seed: u64,
    /// Reward-model fitting (RLHF only).
    pub reward_epochs: usize,
    pub reward_learning_rate: f64,
}

impl TrainerConfig {
    /// Defaults for a registered algorithm name.
    pub fn for_algorithm(name: &str) -> Result<Self> {
        let objective = builtin_registry().get(name)?;
        let d = objective.defaults();
        Ok(TrainerConfig {
            algorithm: objective.name().to_string(),
            learning_rate: d.learning_rate,
            beta: d.beta,
            gamma: d.gamma,
            kl_coef: d.kl_coef,
            epochs: 3,
            batch_size: 32,
            checkpoint_every: None,
            shuffle_seed: 0,
            reward_epochs: 1,
            reward_learning_rate: 0.1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be nonnegative, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("beta", self.beta)?;
        nonneg("gamma", self.gamma)?;
        nonneg("kl_coef", self.kl_coef)?;
        positive("reward_learning_rate", self.reward_learning_rate)?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::invalid("checkpoint_every must be at least 1"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, n: usize) -> usize {
        self.epochs * self.steps_per_epoch(n)
    }

    /// Checkpoint cadence in optimizer steps.
    pub fn cadence(&self, n: usize) -> usize {
        self.checkpoint_every
            .unwrap_or_else(|| (self.total_steps(n) / 20).max(1))
    }
}
