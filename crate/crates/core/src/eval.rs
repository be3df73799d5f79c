//! Expected stance distributions of a policy, per prompt and per topic.

use crate::error::{Error, Result};
use crate::policy::{check_temperature, Policy};
use crate::seed;
use crate::stance::{Stance, StanceVector};
use crate::world::{PromptId, ResponseId, TopicId, World};

/// Ground-truth stance of a response.
pub fn stance_of(world: &World, response: ResponseId) -> Result<StanceVector> {
    Ok(world.response(response)?.stance)
}

/// `Σ_y π(y|x) · stance(y)` over the prompt's candidates.
pub fn prompt_value_exact(policy: &Policy, world: &World, prompt: PromptId) -> Result<StanceVector> {
    let probs = policy.probs(prompt)?;
    mixture(world, policy.candidates(prompt)?, &probs)
}

/// Same expectation under the tempered distribution `softmax(logits / t)`.
pub fn prompt_value_tempered(
    policy: &Policy,
    world: &World,
    prompt: PromptId,
    temperature: f64,
) -> Result<StanceVector> {
    let probs = policy.tempered_probs(prompt, temperature)?;
    mixture(world, policy.candidates(prompt)?, &probs)
}

fn mixture(world: &World, candidates: &[ResponseId], probs: &[f64]) -> Result<StanceVector> {
    let stances = candidates
        .iter()
        .map(|&r| stance_of(world, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(StanceVector::mixture(probs.iter().copied().zip(&stances)))
}

/// Mean stance of `k` responses sampled at `temperature`.
pub fn prompt_value_sampled(
    policy: &Policy,
    world: &World,
    prompt: PromptId,
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<StanceVector> {
    check_temperature(temperature)?;
    let draws = policy.sample_responses(prompt, k, temperature, seed)?;
    let stances = draws
        .iter()
        .map(|&r| stance_of(world, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(StanceVector::mean(&stances).expect("k >= 1"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    Exact,
    Sampled { k: usize, temperature: f64, seed: u64 },
}

impl EvalMode {
    /// Five generations at temperature 0.7.
    pub fn sampled_default(seed: u64) -> Self {
        EvalMode::Sampled {
            k: 5,
            temperature: 0.7,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicValue {
    pub topic: TopicId,
    /// Unweighted mean over the topic's prompts.
    pub mean: StanceVector,
    pub prompts: Vec<(PromptId, StanceVector)>,
}

/// Value vectors of every prompt and topic at one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSnapshot {
    pub step: usize,
    pub topics: Vec<TopicValue>,
}

impl ValueSnapshot {
    pub fn topic(&self, topic: TopicId) -> Result<&TopicValue> {
        self.topics
            .iter()
            .find(|t| t.topic == topic)
            .ok_or_else(|| Error::invalid(format!("snapshot has no topic {}", topic.0)))
    }

    pub fn per_topic(&self, topic: TopicId) -> Result<StanceVector> {
        Ok(self.topic(topic)?.mean)
    }

    pub fn per_prompt(&self, topic: TopicId, prompt: PromptId) -> Result<StanceVector> {
        self.topic(topic)?
            .prompts
            .iter()
            .find(|(p, _)| *p == prompt)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::invalid(format!("snapshot has no prompt {} in topic {}", prompt.0, topic.0)))
    }

    /// One stance's probability across the topic's prompts, in prompt order.
    pub fn prompt_column(&self, topic: TopicId, stance: Stance) -> Result<Vec<f64>> {
        Ok(self.topic(topic)?.prompts.iter().map(|(_, v)| v[stance]).collect())
    }

    /// Same snapshot relabeled to another step.
    pub fn at_step(&self, step: usize) -> Self {
        ValueSnapshot {
            step,
            topics: self.topics.clone(),
        }
    }

    /// Builds a snapshot from per-topic prompt values; topic means are computed here.
    pub fn from_prompt_values(step: usize, topics: Vec<(TopicId, Vec<(PromptId, StanceVector)>)>) -> Result<Self> {
        let topics = topics
            .into_iter()
            .map(|(topic, prompts)| {
                let mean = StanceVector::mean(prompts.iter().map(|(_, v)| v))
                    .ok_or_else(|| Error::invalid(format!("topic {} has no prompts", topic.0)))?;
                Ok(TopicValue { topic, mean, prompts })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ValueSnapshot { step, topics })
    }
}

pub fn evaluate_checkpoint(policy: &Policy, world: &World, step: usize, mode: EvalMode) -> Result<ValueSnapshot> {
    let mut topics = Vec::with_capacity(world.topics().len());
    for topic in world.topics() {
        let mut values = Vec::with_capacity(world.prompts_of(topic.id).len());
        for &prompt in world.prompts_of(topic.id) {
            let v = match mode {
                EvalMode::Exact => prompt_value_exact(policy, world, prompt)?,
                EvalMode::Sampled { k, temperature, seed } => {
                    let s = seed::derive(seed::derive(seed, step as u64), prompt.0 as u64);
                    prompt_value_sampled(policy, world, prompt, k, temperature, s)?
                }
            };
            values.push((prompt, v));
        }
        topics.push((topic.id, values));
    }
    ValueSnapshot::from_prompt_values(step, topics)
}
