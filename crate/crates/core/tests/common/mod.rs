//! Shared fixtures for the integration suites.
#![allow(dead_code)]

use rand::Rng as _;
use vdl::policy::{LogitTable, Policy};
use vdl::seed::Rng;
use vdl::stance::StanceVector;
use vdl::world::{PreferencePair, Prompt, PromptId, Response, ResponseId, SftExample, Topic, TopicId, World};

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-6;

/// A random world with at most 5 prompts and 6 candidates each, split over
/// up to two topics, with soft or one-hot stances.
pub fn random_world(rng: &mut Rng) -> World {
    let n_prompts = rng.random_range(1..=5);
    let n_topics = rng.random_range(1..=n_prompts.min(2));
    let topics = (0..n_topics)
        .map(|t| Topic {
            id: TopicId(t),
            name: format!("topic {t}"),
        })
        .collect();
    let mut prompts = Vec::new();
    let mut responses = Vec::new();
    for p in 0..n_prompts {
        let k = rng.random_range(2..=6);
        let mut ids = Vec::new();
        for _ in 0..k {
            let id = ResponseId(responses.len());
            let stance = if rng.random_bool(0.5) {
                StanceVector::one_hot(vdl::Stance::from_index(rng.random_range(0..3)).unwrap())
            } else {
                let w: [f64; 3] = [rng.random::<f64>() + 0.01, rng.random::<f64>() + 0.01, rng.random::<f64>() + 0.01];
                let s: f64 = w.iter().sum();
                StanceVector::mixture([(w[0] / s, &StanceVector::one_hot(vdl::Stance::Support)),
                    (w[1] / s, &StanceVector::one_hot(vdl::Stance::Neutral)),
                    (w[2] / s, &StanceVector::one_hot(vdl::Stance::Oppose))])
            };
            responses.push(Response {
                id,
                token_length: rng.random_range(1..=64),
                stance,
            });
            ids.push(id);
        }
        prompts.push(Prompt {
            id: PromptId(p),
            topic_id: TopicId(p % n_topics),
            response_ids: ids,
        });
    }
    World::new(topics, prompts, responses).unwrap()
}

pub fn random_table(world: &World, rng: &mut Rng, scale: f64) -> LogitTable {
    LogitTable::from_rows(
        world
            .prompts()
            .iter()
            .map(|p| p.response_ids.iter().map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect())
            .collect(),
    )
}

pub fn random_policy(world: &World, rng: &mut Rng) -> Policy {
    Policy::from_logits(world, random_table(world, rng, 3.0)).unwrap()
}

pub fn random_sft_batch(world: &World, rng: &mut Rng) -> Vec<SftExample> {
    let n = rng.random_range(1..=12);
    (0..n)
        .map(|_| {
            let p = &world.prompts()[rng.random_range(0..world.prompts().len())];
            SftExample {
                prompt_id: p.id,
                response_id: p.response_ids[rng.random_range(0..p.response_ids.len())],
            }
        })
        .collect()
}

pub fn random_pairs(world: &World, rng: &mut Rng) -> Vec<PreferencePair> {
    let n = rng.random_range(1..=12);
    (0..n)
        .map(|_| {
            let p = &world.prompts()[rng.random_range(0..world.prompts().len())];
            let a = rng.random_range(0..p.response_ids.len());
            let mut b = rng.random_range(0..p.response_ids.len() - 1);
            if b >= a {
                b += 1;
            }
            PreferencePair {
                prompt_id: p.id,
                chosen_id: p.response_ids[a],
                rejected_id: p.response_ids[b],
            }
        })
        .collect()
}

/// Largest `|analytic − numeric| / max(1, |analytic|)` over every table entry,
/// using central differences of `f` around `at`.
pub fn max_fd_error(at: &LogitTable, analytic: &LogitTable, f: impl Fn(&LogitTable) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (p, row) in at.rows().iter().enumerate() {
        for j in 0..row.len() {
            let mut plus = at.clone();
            plus.row_mut(p)[j] += FD_STEP;
            let mut minus = at.clone();
            minus.row_mut(p)[j] -= FD_STEP;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
            let a = analytic.row(p)[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    worst
}

fn random_stance(rng: &mut Rng, coarse: bool) -> StanceVector {
    if coarse {
        // quarter-grid points make ties and plateaus common
        let a = rng.random_range(0..=4);
        let b = rng.random_range(0..=4 - a);
        return StanceVector::new(a as f64 / 4.0, b as f64 / 4.0, (4 - a - b) as f64 / 4.0).unwrap();
    }
    let w: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let s: f64 = w.iter().sum::<f64>() + 1e-12;
    let a = w[0] / s;
    let b = w[1] / s;
    StanceVector::new(a, b, (1.0 - a - b).max(0.0)).unwrap()
}

/// A random trajectory with up to `max_checkpoints` checkpoints on a strictly
/// increasing step grid and up to `max_prompts` prompts over 1 to 3 topics.
pub fn random_trajectory(rng: &mut Rng, max_checkpoints: usize, max_prompts: usize) -> vdl::metrics::Trajectory {
    use vdl::eval::ValueSnapshot;
    let n_cp = rng.random_range(2..=max_checkpoints);
    let n_topics = rng.random_range(1..=3usize.min(max_prompts));
    let n_prompts = rng.random_range(n_topics..=max_prompts);
    let coarse = rng.random_bool(0.4);
    let mut step = rng.random_range(0..5);
    let mut cps = Vec::with_capacity(n_cp);
    for _ in 0..n_cp {
        let mut topics: Vec<(TopicId, Vec<(PromptId, StanceVector)>)> =
            (0..n_topics).map(|t| (TopicId(t), Vec::new())).collect();
        for p in 0..n_prompts {
            topics[p % n_topics].1.push((PromptId(p), random_stance(rng, coarse)));
        }
        cps.push(ValueSnapshot::from_prompt_values(step, topics).unwrap());
        step += rng.random_range(1..=50);
    }
    vdl::metrics::Trajectory::new(cps).unwrap()
}
