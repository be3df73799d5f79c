//! Tabular softmax policy: one logit per (prompt, candidate response).

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::error::{Error, Result};
use crate::seed;
use crate::world::{PromptId, ResponseId, World};

/// Real-valued table shaped like a world's candidate lists. Used for logits,
/// gradients and reward tables alike.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    rows: Vec<Vec<f64>>,
}

impl LogitTable {
    pub fn zeros_like(world: &World) -> Self {
        LogitTable {
            rows: world
                .prompts()
                .iter()
                .map(|p| vec![0.0; p.response_ids.len()])
                .collect(),
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        LogitTable { rows }
    }

    pub fn row(&self, prompt: usize) -> &[f64] {
        &self.rows[prompt]
    }

    pub fn row_mut(&mut self, prompt: usize) -> &mut [f64] {
        &mut self.rows[prompt]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn same_shape(&self, other: &LogitTable) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.len() == b.len())
    }

    pub fn scale(&mut self, c: f64) {
        self.rows.iter_mut().flatten().for_each(|x| *x *= c);
    }

    /// `self += c * other`
    pub fn add_scaled(&mut self, c: f64, other: &LogitTable) {
        for (a, b) in self.rows.iter_mut().zip(&other.rows) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.rows.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// `log Σ exp(x_i)` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| x - lse).collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    log_softmax(xs).into_iter().map(f64::exp).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    candidates: Vec<Vec<ResponseId>>,
    logits: LogitTable,
}

impl Policy {
    /// All-zero logits: uniform over each prompt's candidates.
    pub fn uniform(world: &World) -> Self {
        Policy {
            candidates: world.prompts().iter().map(|p| p.response_ids.clone()).collect(),
            logits: LogitTable::zeros_like(world),
        }
    }

    pub fn from_logits(world: &World, logits: LogitTable) -> Result<Self> {
        let policy = Policy {
            candidates: world.prompts().iter().map(|p| p.response_ids.clone()).collect(),
            logits,
        };
        if !policy.logits.same_shape(&LogitTable::zeros_like(world)) {
            return Err(Error::invalid("logit table does not match the world's candidate sets"));
        }
        if policy.logits.rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("logits must be finite"));
        }
        Ok(policy)
    }

    pub fn n_prompts(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidates(&self, prompt: PromptId) -> Result<&[ResponseId]> {
        self.candidates
            .get(prompt.0)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("unknown prompt {}", prompt.0)))
    }

    pub fn logits(&self) -> &LogitTable {
        &self.logits
    }

    /// Zero table over this policy's index set.
    pub fn zeros(&self) -> LogitTable {
        LogitTable {
            rows: self.candidates.iter().map(|c| vec![0.0; c.len()]).collect(),
        }
    }

    pub fn logits_mut(&mut self) -> &mut LogitTable {
        &mut self.logits
    }

    /// Whether both policies are defined over exactly the same (prompt, response) pairs.
    pub fn same_index_set(&self, other: &Policy) -> bool {
        self.candidates == other.candidates
    }

    pub(crate) fn position(&self, prompt: PromptId, response: ResponseId) -> Result<usize> {
        self.candidates(prompt)?
            .iter()
            .position(|&r| r == response)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "response {} is not a candidate of prompt {}",
                    response.0, prompt.0
                ))
            })
    }

    pub fn set_logit(&mut self, prompt: PromptId, response: ResponseId, value: f64) -> Result<()> {
        let j = self.position(prompt, response)?;
        self.logits.rows[prompt.0][j] = value;
        Ok(())
    }

    pub fn log_probs(&self, prompt: PromptId) -> Result<Vec<f64>> {
        self.candidates(prompt)?;
        Ok(log_softmax(self.logits.row(prompt.0)))
    }

    pub fn probs(&self, prompt: PromptId) -> Result<Vec<f64>> {
        self.candidates(prompt)?;
        Ok(softmax(self.logits.row(prompt.0)))
    }

    /// `softmax(logits / temperature)` for one prompt.
    pub fn tempered_probs(&self, prompt: PromptId, temperature: f64) -> Result<Vec<f64>> {
        check_temperature(temperature)?;
        self.candidates(prompt)?;
        let scaled: Vec<f64> = self.logits.row(prompt.0).iter().map(|x| x / temperature).collect();
        Ok(softmax(&scaled))
    }

    pub fn response_logprob(&self, prompt: PromptId, response: ResponseId) -> Result<f64> {
        let j = self.position(prompt, response)?;
        let row = self.logits.row(prompt.0);
        Ok(row[j] - log_sum_exp(row))
    }

    /// `k` i.i.d. draws from the tempered policy on `prompt`.
    pub fn sample_responses(
        &self,
        prompt: PromptId,
        k: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<ResponseId>> {
        if k == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let probs = self.tempered_probs(prompt, temperature)?;
        let dist = WeightedIndex::new(&probs)
            .map_err(|e| Error::invalid(format!("degenerate sampling distribution: {e}")))?;
        let cands = &self.candidates[prompt.0];
        let mut rng = seed::rng(seed);
        Ok((0..k).map(|_| cands[dist.sample(&mut rng)]).collect())
    }

    pub fn snapshot_reference(&self) -> ReferenceSnapshot {
        ReferenceSnapshot {
            policy: self.clone(),
        }
    }

    /// Gradient-descent step `logits -= lr * grad`.
    pub fn descend(&mut self, grad: &LogitTable, learning_rate: f64) {
        self.logits.add_scaled(-learning_rate, grad);
    }

    /// Serializes as `{"logits": {prompt_id: {response_id: number}}}`.
    pub fn to_json(&self) -> Result<String> {
        let mut table = BTreeMap::new();
        for (p, cands) in self.candidates.iter().enumerate() {
            let row: BTreeMap<String, f64> = cands
                .iter()
                .zip(self.logits.row(p))
                .map(|(r, &x)| (r.0.to_string(), x))
                .collect();
            table.insert(p.to_string(), row);
        }
        let mut doc = BTreeMap::new();
        doc.insert("logits", table);
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Parses the JSON form against `world`, which fixes the candidate order.
    pub fn from_json(text: &str, world: &World) -> Result<Self> {
        #[derive(serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            logits: BTreeMap<String, BTreeMap<String, f64>>,
        }
        let doc: Doc = serde_json::from_str(text).map_err(crate::runner::config::json_parse_error)?;
        if doc.logits.len() != world.prompts().len() {
            return Err(Error::invalid("policy prompt set does not match the world"));
        }
        let mut rows = Vec::with_capacity(world.prompts().len());
        for prompt in world.prompts() {
            let row = doc
                .logits
                .get(&prompt.id.0.to_string())
                .ok_or_else(|| Error::invalid(format!("policy lacks prompt {}", prompt.id.0)))?;
            if row.len() != prompt.response_ids.len() {
                return Err(Error::invalid(format!(
                    "policy candidate set of prompt {} does not match the world",
                    prompt.id.0
                )));
            }
            let values = prompt
                .response_ids
                .iter()
                .map(|r| {
                    row.get(&r.0.to_string()).copied().ok_or_else(|| {
                        Error::invalid(format!("policy lacks response {} of prompt {}", r.0, prompt.id.0))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(values);
        }
        Policy::from_logits(world, LogitTable::from_rows(rows))
    }
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {t}")))
    }
}

/// Frozen copy of a policy, used as π_ref.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSnapshot {
    policy: Policy,
}

impl ReferenceSnapshot {
    pub fn logits(&self) -> &LogitTable {
        &self.policy.logits
    }

    pub fn response_logprob(&self, prompt: PromptId, response: ResponseId) -> Result<f64> {
        self.policy.response_logprob(prompt, response)
    }

    pub fn log_probs(&self, prompt: PromptId) -> Result<Vec<f64>> {
        self.policy.log_probs(prompt)
    }

    pub fn covers(&self, policy: &Policy) -> bool {
        self.policy.same_index_set(policy)
    }

    /// A fresh, mutable policy with the snapshot's logits.
    pub fn to_policy(&self) -> Policy {
        self.policy.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, WorldParams};
    use proptest::prelude::*;

    fn world(r: usize) -> World {
        generate_world(&WorldParams {
            n_topics: 1,
            prompts_per_topic: 2,
            responses_per_prompt: r,
            ..WorldParams::default()
        })
        .unwrap()
    }

    fn policy_with(row: &[f64]) -> (World, Policy) {
        let w = world(row.len());
        let mut rows = vec![row.to_vec(); 2];
        rows[1] = vec![0.0; row.len()];
        let p = Policy::from_logits(&w, LogitTable::from_rows(rows)).unwrap();
        (w, p)
    }

    #[test]
    fn uniform_logprob() {
        let (w, p) = policy_with(&[0.0, 0.0, 0.0]);
        for &r in &w.prompts()[0].response_ids {
            let lp = p.response_logprob(PromptId(0), r).unwrap();
            assert!((lp + 3f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn ln2_logit_gives_half() {
        let (_, p) = policy_with(&[2f64.ln(), 0.0, 0.0]);
        let probs = p.probs(PromptId(0)).unwrap();
        for (a, b) in probs.iter().zip([0.5, 0.25, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_logits_stay_finite() {
        let (w, p) = policy_with(&[1e4, 0.0, 0.0]);
        let ids = &w.prompts()[0].response_ids;
        let first = p.response_logprob(PromptId(0), ids[0]).unwrap();
        assert!(first.abs() < 1e-12);
        let other = p.response_logprob(PromptId(0), ids[1]).unwrap();
        assert!(other.is_finite());
        assert!((other + 1e4).abs() < 1e-9);
    }

    #[test]
    fn unknown_index_is_invalid() {
        let (w, p) = policy_with(&[0.0, 0.0, 0.0]);
        let foreign = w.prompts()[1].response_ids[0];
        assert!(p.response_logprob(PromptId(0), foreign).is_err());
        assert!(p.response_logprob(PromptId(7), foreign).is_err());
    }

    #[test]
    fn sampling_validates_and_is_deterministic() {
        let (_, p) = policy_with(&[0.3, -1.0, 2.0]);
        assert!(p.sample_responses(PromptId(0), 5, 0.0, 1).is_err());
        assert!(p.sample_responses(PromptId(0), 5, -1.0, 1).is_err());
        assert!(p.sample_responses(PromptId(0), 0, 1.0, 1).is_err());
        let a = p.sample_responses(PromptId(0), 50, 0.7, 11).unwrap();
        let b = p.sample_responses(PromptId(0), 50, 0.7, 11).unwrap();
        assert_eq!(a, b);
    }

    fn frequencies(p: &Policy, w: &World, k: usize, t: f64, seed: u64) -> Vec<f64> {
        let ids = &w.prompts()[0].response_ids;
        let draws = p.sample_responses(PromptId(0), k, t, seed).unwrap();
        ids.iter()
            .map(|id| draws.iter().filter(|d| *d == id).count() as f64 / k as f64)
            .collect()
    }

    #[test]
    fn equal_logits_sample_uniformly() {
        let (w, p) = policy_with(&[1.5; 4]);
        let k = 30_000;
        let sigma3 = 3.0 * (0.25f64 * 0.75 / k as f64).sqrt();
        for t in [0.7, 1.0, 5.0] {
            for f in frequencies(&p, &w, k, t, 3) {
                assert!((f - 0.25).abs() <= sigma3, "freq {f}");
            }
        }
    }

    #[test]
    fn huge_temperature_flattens() {
        let (w, p) = policy_with(&[3.0, 0.0, -2.0]);
        let k = 30_000;
        let sigma3 = 3.0 * ((1.0 / 3.0) * (2.0 / 3.0) / k as f64).sqrt();
        for f in frequencies(&p, &w, k, 1e6, 4) {
            assert!((f - 1.0 / 3.0).abs() <= sigma3, "freq {f}");
        }
    }

    #[test]
    fn snapshot_is_immutable() {
        let (w, mut p) = policy_with(&[0.1, 0.2, 0.3]);
        let snap = p.snapshot_reference();
        let r0 = w.prompts()[0].response_ids[0];
        let before = p.response_logprob(PromptId(0), r0).unwrap();
        assert_eq!(snap.response_logprob(PromptId(0), r0).unwrap(), before);
        p.set_logit(PromptId(0), r0, 9.0).unwrap();
        assert_eq!(snap.logits().row(0)[0], 0.1);
        assert_eq!(snap.to_policy().snapshot_reference(), snap);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let w = world(5);
        let rows = vec![
            vec![0.1, -1.0 / 3.0, 1e-300, 123456.789, -0.0],
            vec![std::f64::consts::PI, 2.0f64.sqrt(), 1e300, -7.5, 0.3],
        ];
        let p = Policy::from_logits(&w, LogitTable::from_rows(rows)).unwrap();
        let back = Policy::from_json(&p.to_json().unwrap(), &w).unwrap();
        for (a, b) in p.logits().rows().iter().flatten().zip(back.logits().rows().iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    proptest! {
        #[test]
        fn probabilities_normalize_and_shift_invariant(
            row in proptest::collection::vec(-50.0f64..50.0, 6),
            shift in -1e3f64..1e3,
        ) {
            let (w, p) = policy_with(&row);
            let total: f64 = p.probs(PromptId(0)).unwrap().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = row.iter().map(|x| x + shift).collect();
            let (_, q) = policy_with(&shifted);
            for &r in &w.prompts()[0].response_ids {
                let a = p.response_logprob(PromptId(0), r).unwrap();
                let b = q.response_logprob(PromptId(0), r).unwrap();
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn empirical_distribution_converges(row in proptest::collection::vec(-2.0f64..2.0, 6), seed in any::<u64>()) {
            let (w, p) = policy_with(&row);
            let exact = p.probs(PromptId(0)).unwrap();
            let freq = frequencies(&p, &w, 100_000, 1.0, seed);
            let linf = exact.iter().zip(&freq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(linf <= 0.01, "L-inf {}", linf);
        }
    }
}
