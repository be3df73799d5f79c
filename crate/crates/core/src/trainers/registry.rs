use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::policy::{LogitTable, Policy, ReferenceSnapshot};
use crate::seed;
use crate::trainers::objectives::{dpo_loss_and_grad, rlhf_objective_and_grad, sft_loss_and_grad, simpo_loss_and_grad};
use crate::trainers::reward::{reward_model_fit, RewardModel};
use crate::trainers::{Batch, DataKind, Dataset, TrainerConfig};
use crate::world::{PromptId, World};

/// Per-algorithm hyperparameter defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Defaults {
    pub learning_rate: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kl_coef: f64,
}

const BASE: Defaults = Defaults {
    learning_rate: 1e-5,
    beta: 0.1,
    gamma: 0.5,
    kl_coef: 0.05,
};

/// Everything an objective may consult when it is set up for a phase.
pub struct BindContext<'a> {
    pub world: &'a World,
    /// Policy at phase entry; the reference snapshot is taken from it.
    pub initial: &'a Policy,
    pub data: &'a Dataset,
    pub config: &'a TrainerConfig,
}

/// A training algorithm, selectable by name.
pub trait Objective: Send + Sync {
    fn name(&self) -> &'static str;

    fn data_kind(&self) -> DataKind;

    fn defaults(&self) -> Defaults;

    /// Prepares phase state (reference snapshot, reward model) for the loop.
    fn bind<'a>(&self, ctx: &BindContext<'a>) -> Result<Box<dyn BoundObjective + 'a>>;
}

/// An objective ready to evaluate minibatches. Always reports a quantity to
/// minimize; ascent objectives return their negation.
pub trait BoundObjective {
    fn loss_and_grad(&self, policy: &Policy, batch: Batch<'_>) -> Result<(f64, LogitTable)>;

    fn reference(&self) -> Option<&ReferenceSnapshot> {
        None
    }
}

pub struct Sft;
pub struct Dpo;
pub struct Simpo;
pub struct Rlhf;

struct SftBound;

impl BoundObjective for SftBound {
    fn loss_and_grad(&self, policy: &Policy, batch: Batch<'_>) -> Result<(f64, LogitTable)> {
        sft_loss_and_grad(policy, batch.sft()?)
    }
}

impl Objective for Sft {
    fn name(&self) -> &'static str {
        "sft"
    }
    fn data_kind(&self) -> DataKind {
        DataKind::Sft
    }
    fn defaults(&self) -> Defaults {
        Defaults {
            learning_rate: 2e-5,
            ..BASE
        }
    }
    fn bind<'a>(&self, _ctx: &BindContext<'a>) -> Result<Box<dyn BoundObjective + 'a>> {
        Ok(Box::new(SftBound))
    }
}

struct DpoBound {
    reference: ReferenceSnapshot,
    beta: f64,
}

impl BoundObjective for DpoBound {
    fn loss_and_grad(&self, policy: &Policy, batch: Batch<'_>) -> Result<(f64, LogitTable)> {
        dpo_loss_and_grad(policy, &self.reference, batch.preference()?, self.beta)
    }
    fn reference(&self) -> Option<&ReferenceSnapshot> {
        Some(&self.reference)
    }
}

impl Objective for Dpo {
    fn name(&self) -> &'static str {
        "dpo"
    }
    fn data_kind(&self) -> DataKind {
        DataKind::Preference
    }
    fn defaults(&self) -> Defaults {
        BASE
    }
    fn bind<'a>(&self, ctx: &BindContext<'a>) -> Result<Box<dyn BoundObjective + 'a>> {
        Ok(Box::new(DpoBound {
            reference: ctx.initial.snapshot_reference(),
            beta: ctx.config.beta,
        }))
    }
}

struct SimpoBound<'a> {
    world: &'a World,
    beta: f64,
    gamma: f64,
}

impl BoundObjective for SimpoBound<'_> {
    fn loss_and_grad(&self, policy: &Policy, batch: Batch<'_>) -> Result<(f64, LogitTable)> {
        simpo_loss_and_grad(policy, self.world, batch.preference()?, self.beta, self.gamma)
    }
}

impl Objective for Simpo {
    fn name(&self) -> &'static str {
        "simpo"
    }
    fn data_kind(&self) -> DataKind {
        DataKind::Preference
    }
    fn defaults(&self) -> Defaults {
        Defaults {
            learning_rate: 5e-7,
            beta: 2.0,
            ..BASE
        }
    }
    fn bind<'a>(&self, ctx: &BindContext<'a>) -> Result<Box<dyn BoundObjective + 'a>> {
        Ok(Box::new(SimpoBound {
            world: ctx.world,
            beta: ctx.config.beta,
            gamma: ctx.config.gamma,
        }))
    }
}

struct RlhfBound {
    reference: ReferenceSnapshot,
    reward: RewardModel,
    kl_coef: f64,
}

impl BoundObjective for RlhfBound {
    fn loss_and_grad(&self, policy: &Policy, batch: Batch<'_>) -> Result<(f64, LogitTable)> {
        let prompts: Vec<PromptId> = batch.preference()?.iter().map(|p| p.prompt_id).collect();
        let v = rlhf_objective_and_grad(policy, &self.reference, &self.reward, &prompts, self.kl_coef)?;
        let mut grad = v.grad;
        grad.scale(-1.0);
        Ok((-v.objective, grad))
    }
    fn reference(&self) -> Option<&ReferenceSnapshot> {
        Some(&self.reference)
    }
}

impl Objective for Rlhf {
    fn name(&self) -> &'static str {
        "rlhf"
    }
    fn data_kind(&self) -> DataKind {
        DataKind::Preference
    }
    fn defaults(&self) -> Defaults {
        Defaults {
            learning_rate: 5e-7,
            ..BASE
        }
    }
    fn bind<'a>(&self, ctx: &BindContext<'a>) -> Result<Box<dyn BoundObjective + 'a>> {
        let Dataset::Preference(pairs) = ctx.data else {
            return Err(Error::invalid("rlhf needs a preference dataset to fit its reward model"));
        };
        let fit = reward_model_fit(
            ctx.world,
            pairs,
            ctx.config.reward_epochs,
            ctx.config.reward_learning_rate,
            seed::derive(ctx.config.shuffle_seed, seed::stream::REWARD),
        )?;
        Ok(Box::new(RlhfBound {
            reference: ctx.initial.snapshot_reference(),
            reward: fit.model,
            kl_coef: ctx.config.kl_coef,
        }))
    }
}

/// Name-keyed table of available objectives.
#[derive(Clone, Default)]
pub struct ObjectiveRegistry {
    entries: BTreeMap<&'static str, Arc<dyn Objective>>,
}

impl ObjectiveRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(Sft));
        r.register(Arc::new(Dpo));
        r.register(Arc::new(Simpo));
        r.register(Arc::new(Rlhf));
        r
    }

    /// Adds an objective, replacing any previous entry with the same name.
    pub fn register(&mut self, objective: Arc<dyn Objective>) {
        self.entries.insert(objective.name(), objective);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Objective>> {
        self.entries.get(name).cloned().ok_or_else(|| {
            Error::invalid(format!(
                "unknown algorithm {name:?}; known: {}",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

pub fn builtin_registry() -> &'static ObjectiveRegistry {
    static REGISTRY: OnceLock<ObjectiveRegistry> = OnceLock::new();
    REGISTRY.get_or_init(ObjectiveRegistry::with_builtins)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_registered_by_name() {
        let names: Vec<_> = builtin_registry().names().collect();
        assert_eq!(names, vec!["dpo", "rlhf", "sft", "simpo"]);
        assert_eq!(builtin_registry().get("simpo").unwrap().data_kind(), DataKind::Preference);
        assert_eq!(builtin_registry().get("sft").unwrap().data_kind(), DataKind::Sft);
        let err = builtin_registry().get("ppo").err().unwrap().to_string();
        assert!(err.contains("dpo, rlhf, sft, simpo"), "{err}");
    }

    struct Null;
    impl Objective for Null {
        fn name(&self) -> &'static str {
            "null"
        }
        fn data_kind(&self) -> DataKind {
            DataKind::Sft
        }
        fn defaults(&self) -> Defaults {
            BASE
        }
        fn bind<'a>(&self, _: &BindContext<'a>) -> Result<Box<dyn BoundObjective + 'a>> {
            Ok(Box::new(SftBound))
        }
    }

    #[test]
    fn custom_objectives_can_be_registered() {
        let mut r = ObjectiveRegistry::with_builtins();
        r.register(Arc::new(Null));
        assert_eq!(r.get("null").unwrap().name(), "null");
        assert_eq!(r.names().count(), 5);
    }
}
