use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::eval::ValueSnapshot;
use crate::metrics::Trajectory;
use crate::policy::{Policy, ReferenceSnapshot};
use crate::seed;
use crate::trainers::{builtin_registry, BindContext, Dataset, ObjectiveRegistry, TrainerConfig};
use crate::world::World;

/// Training stops with an error once any logit exceeds this magnitude.
pub const LOGIT_ABORT_LIMIT: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub trajectory: Trajectory,
    /// π_ref used by the phase, if the objective has one.
    pub reference: Option<ReferenceSnapshot>,
    /// Minibatch loss at every optimizer step.
    pub losses: Vec<f64>,
}

/// Runs minibatch gradient descent for one phase, mutating `policy`.
///
/// `eval_hook` is called at step 0, every `config.cadence(n)` steps and after
/// the final step.
pub fn train(
    policy: &mut Policy,
    world: &World,
    dataset: &Dataset,
    config: &TrainerConfig,
    eval_hook: &mut dyn FnMut(usize, &Policy) -> Result<ValueSnapshot>,
) -> Result<TrainOutput> {
    train_with(builtin_registry(), policy, world, dataset, config, eval_hook)
}

pub fn train_with(
    registry: &ObjectiveRegistry,
    policy: &mut Policy,
    world: &World,
    dataset: &Dataset,
    config: &TrainerConfig,
    eval_hook: &mut dyn FnMut(usize, &Policy) -> Result<ValueSnapshot>,
) -> Result<TrainOutput> {
    config.validate()?;
    let objective = registry.get(&config.algorithm)?;
    if objective.data_kind() != dataset.kind() {
        return Err(Error::invalid(format!(
            "algorithm {} expects {:?} data, got {:?}",
            objective.name(),
            objective.data_kind(),
            dataset.kind()
        )));
    }
    let initial = policy.clone();
    let total = config.total_steps(dataset.len());
    let cadence = config.cadence(dataset.len());

    let mut checkpoints = vec![eval_hook(0, policy)?];
    let mut losses = Vec::with_capacity(total);
    let bound = if total > 0 {
        Some(objective.bind(&BindContext {
            world,
            initial: &initial,
            data: dataset,
            config,
        })?)
    } else {
        None
    };

    let mut rng = seed::rng(config.shuffle_seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    if let Some(bound) = &bound {
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let batch = dataset.gather(chunk);
                let (loss, grad) = bound.loss_and_grad(policy, batch.as_batch())?;
                policy.descend(&grad, config.learning_rate);
                step += 1;
                losses.push(loss);
                check_logits(policy, step)?;
                if step % cadence == 0 || step == total {
                    checkpoints.push(eval_hook(step, policy)?);
                }
            }
        }
    }

    Ok(TrainOutput {
        trajectory: Trajectory::new(checkpoints)?,
        reference: bound.as_ref().and_then(|b| b.reference().cloned()),
        losses,
    })
}

fn check_logits(policy: &Policy, step: usize) -> Result<()> {
    for (p, row) in policy.logits().rows().iter().enumerate() {
        if let Some(&value) = row.iter().find(|x| !(x.abs() <= LOGIT_ABORT_LIMIT)) {
            return Err(Error::TrainerAbort {
                step,
                prompt: p,
                value,
                limit: LOGIT_ABORT_LIMIT,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{evaluate_checkpoint, EvalMode};
    use crate::stance::Stance;
    use crate::world::{generate_preference_dataset, generate_sft_dataset, generate_world, Alignment, StanceMix, TopicId, WorldParams};

    fn world() -> World {
        generate_world(&WorldParams {
            n_topics: 1,
            prompts_per_topic: 10,
            responses_per_prompt: 6,
            seed: 42,
            ..WorldParams::default()
        })
        .unwrap()
    }

    fn exact_hook(world: &World) -> impl FnMut(usize, &Policy) -> Result<ValueSnapshot> + '_ {
        move |step, p| evaluate_checkpoint(p, world, step, EvalMode::Exact)
    }

    #[test]
    fn zero_epochs_only_records_start() {
        let w = world();
        let data = Dataset::Preference(generate_preference_dataset(&w, 1.0, Alignment::SupportAligned, 64, 1).unwrap());
        let mut cfg = TrainerConfig::for_algorithm("dpo").unwrap();
        cfg.epochs = 0;
        let mut p = Policy::uniform(&w);
        let before = p.clone();
        let out = train(&mut p, &w, &data, &cfg, &mut exact_hook(&w)).unwrap();
        assert_eq!(out.trajectory.checkpoints().len(), 1);
        assert_eq!(out.trajectory.first().step, 0);
        assert_eq!(p, before);
    }

    #[test]
    fn mismatched_data_kind() {
        let w = world();
        let sft = Dataset::Sft(generate_sft_dataset(&w, StanceMix::uniform(), 10, 0).unwrap().examples);
        let cfg = TrainerConfig::for_algorithm("dpo").unwrap();
        let mut p = Policy::uniform(&w);
        assert!(matches!(
            train(&mut p, &w, &sft, &cfg, &mut exact_hook(&w)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn checkpoint_schedule() {
        let w = world();
        let data = Dataset::Sft(generate_sft_dataset(&w, StanceMix::uniform(), 100, 0).unwrap().examples);
        let mut cfg = TrainerConfig::for_algorithm("sft").unwrap();
        cfg.checkpoint_every = Some(5);
        // 3 epochs × 4 batches = 12 steps: 0, 5, 10, 12
        let mut p = Policy::uniform(&w);
        let out = train(&mut p, &w, &data, &cfg, &mut exact_hook(&w)).unwrap();
        let steps: Vec<usize> = out.trajectory.checkpoints().iter().map(|c| c.step).collect();
        assert_eq!(steps, vec![0, 5, 10, 12]);
        assert_eq!(out.losses.len(), 12);
        assert!(out.reference.is_none());
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let w = world();
        let data = Dataset::Preference(generate_preference_dataset(&w, 0.8, Alignment::SupportAligned, 200, 3).unwrap());
        for algo in ["dpo", "simpo", "rlhf"] {
            let mut cfg = TrainerConfig::for_algorithm(algo).unwrap();
            cfg.learning_rate = 0.5;
            cfg.shuffle_seed = 17;
            let mut a = Policy::uniform(&w);
            let mut b = Policy::uniform(&w);
            let ta = train(&mut a, &w, &data, &cfg, &mut exact_hook(&w)).unwrap();
            let tb = train(&mut b, &w, &data, &cfg, &mut exact_hook(&w)).unwrap();
            assert_eq!(ta.trajectory, tb.trajectory);
            assert_eq!(a, b);
            assert_eq!(ta.losses, tb.losses);
        }
    }

    #[test]
    fn dpo_default_config_raises_support_monotonically() {
        let w = world();
        let data = Dataset::Preference(generate_preference_dataset(&w, 1.0, Alignment::SupportAligned, 320, 42).unwrap());
        let mut cfg = TrainerConfig::for_algorithm("dpo").unwrap();
        cfg.shuffle_seed = 42;
        cfg.checkpoint_every = Some(1);
        let mut p = Policy::uniform(&w);
        let out = train(&mut p, &w, &data, &cfg, &mut exact_hook(&w)).unwrap();
        let support: Vec<f64> = out.trajectory.checkpoints()[..5]
            .iter()
            .map(|c| c.per_topic(TopicId(0)).unwrap()[Stance::Support])
            .collect();
        for win in support.windows(2) {
            assert!(win[1] > win[0], "{support:?}");
        }
    }

    #[test]
    fn dpo_reference_is_entry_policy() {
        let w = world();
        let data = Dataset::Preference(generate_preference_dataset(&w, 1.0, Alignment::SupportAligned, 64, 2).unwrap());
        let cfg = TrainerConfig::for_algorithm("dpo").unwrap();
        let mut p = Policy::uniform(&w);
        p.logits_mut().row_mut(0)[0] = 0.25;
        let entry = p.snapshot_reference();
        let out = train(&mut p, &w, &data, &cfg, &mut exact_hook(&w)).unwrap();
        assert_eq!(out.reference.unwrap(), entry);
    }

    #[test]
    fn blow_up_aborts() {
        let w = world();
        let data = Dataset::Preference(generate_preference_dataset(&w, 1.0, Alignment::SupportAligned, 64, 2).unwrap());
        let mut cfg = TrainerConfig::for_algorithm("dpo").unwrap();
        cfg.learning_rate = 1e9;
        let mut p = Policy::uniform(&w);
        let result = train(&mut p, &w, &data, &cfg, &mut exact_hook(&w));
        match result {
            Err(Error::TrainerAbort { step, limit, .. }) => {
                assert_eq!(step, 1);
                assert_eq!(limit, LOGIT_ABORT_LIMIT);
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }
}
