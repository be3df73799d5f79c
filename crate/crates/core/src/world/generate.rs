use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{PreferencePair, Prompt, PromptId, Response, ResponseId, SftExample, Topic, TopicId, World};
use crate::error::{Error, Result};
use crate::seed;
use crate::stance::{Stance, StanceVector};

/// Topic names used when generating a world.
pub const DEFAULT_TOPICS: [&str; 11] = [
    "Discussions on Abortion",
    "Gender and LGBTQ+ Identity",
    "Climate Change Concerns",
    "Immigration Policies",
    "Economic and Social Policy",
    "Race and Racism",
    "Election and Political Discussions",
    "Religion and Spirituality Beliefs",
    "Ethics of Death and Penalty",
    "Work and Attitudes",
    "Family and Relationship Values",
];

const MIX_TOL: f64 = 1e-9;

/// Mixture weights over {support, neutral, oppose}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct StanceMix([f64; 3]);

impl StanceMix {
    pub fn new(weights: [f64; 3]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!(
                "mixture weights must be finite and nonnegative, got {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > MIX_TOL {
            return Err(Error::invalid(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        Ok(StanceMix(weights))
    }

    pub fn uniform() -> Self {
        StanceMix([1.0 / 3.0; 3])
    }

    /// Neutral-dominated mixture typical of open chat logs.
    pub fn wildchat_like() -> Self {
        StanceMix([0.186, 0.628, 0.186])
    }

    /// Support-dominated mixture typical of instruction datasets.
    pub fn alpaca_like() -> Self {
        StanceMix([0.619, 0.1905, 0.1905])
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "wildchat-like" => Ok(Self::wildchat_like()),
            "alpaca-like" => Ok(Self::alpaca_like()),
            "uniform" => Ok(Self::uniform()),
            other => Err(Error::invalid(format!("unknown stance-mixture preset {other:?}"))),
        }
    }

    pub fn weights(&self) -> [f64; 3] {
        self.0
    }

    fn nonzero(&self) -> impl Iterator<Item = Stance> + '_ {
        Stance::ALL.into_iter().filter(|s| self.0[s.index()] > 0.0)
    }

    fn sample(&self, rng: &mut seed::Rng) -> Stance {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = Stance::Support;
        for s in self.nonzero() {
            acc += self.0[s.index()];
            last = s;
            if u < acc {
                return s;
            }
        }
        last
    }
}

impl TryFrom<[f64; 3]> for StanceMix {
    type Error = Error;
    fn try_from(w: [f64; 3]) -> Result<Self> {
        StanceMix::new(w)
    }
}

impl From<StanceMix> for [f64; 3] {
    fn from(m: StanceMix) -> [f64; 3] {
        m.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldParams {
    pub n_topics: usize,
    pub prompts_per_topic: usize,
    pub responses_per_prompt: usize,
    pub stance_weights: [f64; 3],
    /// Inclusive token-length interval.
    pub length_range: (u32, u32),
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            n_topics: 3,
            prompts_per_topic: 20,
            responses_per_prompt: 6,
            stance_weights: [1.0 / 3.0; 3],
            length_range: (8, 64),
            seed: 0,
        }
    }
}

fn topic_name(i: usize) -> String {
    let base = DEFAULT_TOPICS[i % DEFAULT_TOPICS.len()];
    match i / DEFAULT_TOPICS.len() {
        0 => base.to_string(),
        k => format!("{base} {}", k + 1),
    }
}

/// Builds a world with one-hot ground-truth stances.
///
/// The first responses of every prompt cover each stance with nonzero weight,
/// once each, in support/neutral/oppose order; the remaining slots are drawn
/// from the mixture.
pub fn generate_world(params: &WorldParams) -> Result<World> {
    let WorldParams {
        n_topics,
        prompts_per_topic,
        responses_per_prompt,
        stance_weights,
        length_range: (lo, hi),
        seed,
    } = *params;
    if n_topics == 0 || prompts_per_topic == 0 || responses_per_prompt == 0 {
        return Err(Error::invalid("world counts must all be at least 1"));
    }
    let mix = StanceMix::new(stance_weights)?;
    let required: Vec<Stance> = mix.nonzero().collect();
    if responses_per_prompt < required.len() {
        return Err(Error::invalid(format!(
            "{responses_per_prompt} responses per prompt cannot cover {} stances",
            required.len()
        )));
    }
    if lo == 0 || lo > hi {
        return Err(Error::invalid(format!("bad length range [{lo}, {hi}]")));
    }

    let mut rng = seed::rng(seed);
    let topics: Vec<Topic> = (0..n_topics)
        .map(|i| Topic {
            id: TopicId(i),
            name: topic_name(i),
        })
        .collect();
    let mut prompts = Vec::with_capacity(n_topics * prompts_per_topic);
    let mut responses = Vec::with_capacity(n_topics * prompts_per_topic * responses_per_prompt);
    for topic in &topics {
        for _ in 0..prompts_per_topic {
            let mut ids = Vec::with_capacity(responses_per_prompt);
            for slot in 0..responses_per_prompt {
                let stance = match required.get(slot) {
                    Some(&s) => s,
                    None => mix.sample(&mut rng),
                };
                let id = ResponseId(responses.len());
                responses.push(Response {
                    id,
                    token_length: rng.random_range(lo..=hi),
                    stance: StanceVector::one_hot(stance),
                });
                ids.push(id);
            }
            prompts.push(Prompt {
                id: PromptId(prompts.len()),
                topic_id: topic.id,
                response_ids: ids,
            });
        }
    }
    World::new(topics, prompts, responses)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftGeneration {
    pub examples: Vec<SftExample>,
    /// Draws whose target stance had no candidate on the sampled prompt and
    /// fell back to a uniform choice over all candidates.
    pub fallbacks: usize,
}

pub fn generate_sft_dataset(world: &World, mix: StanceMix, n: usize, seed: u64) -> Result<SftGeneration> {
    if world.prompts().is_empty() {
        return Err(Error::invalid("cannot sample SFT data from an empty world"));
    }
    if n == 0 {
        return Err(Error::invalid("SFT dataset size must be at least 1"));
    }
    let mut rng = seed::rng(seed);
    let mut examples = Vec::with_capacity(n);
    let mut fallbacks = 0;
    for _ in 0..n {
        let prompt = &world.prompts()[rng.random_range(0..world.prompts().len())];
        let target = mix.sample(&mut rng);
        let groups = world.candidates_by_stance(prompt.id)?;
        let pool = &groups[target.index()];
        let response_id = if pool.is_empty() {
            fallbacks += 1;
            *prompt.response_ids.choose(&mut rng).expect("prompt has candidates")
        } else {
            *pool.choose(&mut rng).expect("non-empty pool")
        };
        examples.push(SftExample {
            prompt_id: prompt.id,
            response_id,
        });
    }
    Ok(SftGeneration { examples, fallbacks })
}

/// Which side of an opposed pair is marked as chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    SupportAligned,
    OpposeAligned,
}

/// Draws `n` preference pairs whose opposed-pair rate is `gap`.
///
/// With probability `gap` the pair contrasts a support candidate with an
/// oppose candidate; otherwise both responses come from one stance class,
/// chosen uniformly among the classes that hold at least two candidates.
pub fn generate_preference_dataset(
    world: &World,
    gap: f64,
    alignment: Alignment,
    n: usize,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    if !(0.0..=1.0).contains(&gap) {
        return Err(Error::invalid(format!("value gap {gap} outside [0, 1]")));
    }
    if world.prompts().is_empty() {
        return Err(Error::invalid("cannot sample preference data from an empty world"));
    }
    let groups: Vec<[Vec<ResponseId>; 3]> = world
        .prompts()
        .iter()
        .map(|p| world.candidates_by_stance(p.id))
        .collect::<Result<_>>()?;
    for (i, g) in groups.iter().enumerate() {
        if g[Stance::Support.index()].is_empty() || g[Stance::Oppose.index()].is_empty() {
            return Err(Error::Infeasible {
                prompt: i,
                reason: "needs at least one support and one oppose candidate".into(),
            });
        }
    }

    let mut rng = seed::rng(seed);
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let p = rng.random_range(0..groups.len());
        let g = &groups[p];
        let opposed = rng.random::<f64>() < gap;
        let (chosen_id, rejected_id) = if opposed {
            let s = *g[Stance::Support.index()].choose(&mut rng).expect("checked");
            let o = *g[Stance::Oppose.index()].choose(&mut rng).expect("checked");
            match alignment {
                Alignment::SupportAligned => (s, o),
                Alignment::OpposeAligned => (o, s),
            }
        } else {
            let classes: Vec<&Vec<ResponseId>> = g.iter().filter(|c| c.len() >= 2).collect();
            let class = classes.choose(&mut rng).ok_or_else(|| Error::Infeasible {
                prompt: p,
                reason: "no stance class with two distinct candidates for a same-stance pair".into(),
            })?;
            let i = rng.random_range(0..class.len());
            let mut j = rng.random_range(0..class.len() - 1);
            if j >= i {
                j += 1;
            }
            (class[i], class[j])
        };
        pairs.push(PreferencePair {
            prompt_id: PromptId(p),
            chosen_id,
            rejected_id,
        });
    }
    Ok(pairs)
}

/// Swaps chosen and rejected in every pair.
pub fn flip_labels(dataset: &[PreferencePair]) -> Vec<PreferencePair> {
    dataset
        .iter()
        .map(|p| PreferencePair {
            prompt_id: p.prompt_id,
            chosen_id: p.rejected_id,
            rejected_id: p.chosen_id,
        })
        .collect()
}
