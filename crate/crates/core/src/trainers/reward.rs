//! Tabular Bradley-Terry reward model.

use crate::error::{Error, Result};
use crate::policy::LogitTable;
use crate::trainers::objectives::{log_sigmoid, sigmoid};
use crate::world::{PreferencePair, PromptId, ResponseId, World};

/// Free reward table r(x, y) over a world's (prompt, candidate) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    candidates: Vec<Vec<ResponseId>>,
    rewards: LogitTable,
}

impl RewardModel {
    pub fn zeros(world: &World) -> Self {
        RewardModel {
            candidates: world.prompts().iter().map(|p| p.response_ids.clone()).collect(),
            rewards: LogitTable::zeros_like(world),
        }
    }

    pub fn from_table(world: &World, rewards: LogitTable) -> Result<Self> {
        let mut model = Self::zeros(world);
        if !rewards.same_shape(&model.rewards) {
            return Err(Error::invalid("reward table does not match the world's candidate sets"));
        }
        if rewards.rows().iter().flatten().any(|r| !r.is_finite()) {
            return Err(Error::invalid("rewards must be finite"));
        }
        model.rewards = rewards;
        Ok(model)
    }

    pub fn table(&self) -> &LogitTable {
        &self.rewards
    }

    fn position(&self, prompt: PromptId, response: ResponseId) -> Result<usize> {
        self.candidates
            .get(prompt.0)
            .and_then(|c| c.iter().position(|&r| r == response))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "response {} is not a candidate of prompt {}",
                    response.0, prompt.0
                ))
            })
    }

    pub fn reward(&self, prompt: PromptId, response: ResponseId) -> Result<f64> {
        let j = self.position(prompt, response)?;
        Ok(self.rewards.row(prompt.0)[j])
    }
}

/// Mean `−log σ(r(x, y_w) − r(x, y_l))` and its gradient in the reward table.
pub fn bt_loss_and_grad(model: &RewardModel, pairs: &[PreferencePair]) -> Result<(f64, LogitTable)> {
    if pairs.is_empty() {
        return Err(Error::invalid("reward-model batch is empty"));
    }
    let inv_n = 1.0 / pairs.len() as f64;
    let mut grad = LogitTable::from_rows(model.rewards.rows().iter().map(|r| vec![0.0; r.len()]).collect());
    let mut loss = 0.0;
    for pair in pairs {
        let w = model.position(pair.prompt_id, pair.chosen_id)?;
        let l = model.position(pair.prompt_id, pair.rejected_id)?;
        let row = model.rewards.row(pair.prompt_id.0);
        let d = row[w] - row[l];
        loss -= log_sigmoid(d);
        let c = sigmoid(-d) * inv_n;
        let g = grad.row_mut(pair.prompt_id.0);
        g[w] -= c;
        g[l] += c;
    }
    Ok((loss * inv_n, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardFit {
    pub model: RewardModel,
    /// Full-dataset loss at initialization followed by the loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Fits rewards by full-batch gradient descent on the mean Bradley-Terry loss,
/// starting from all-zero rewards.
///
/// One epoch is one exact gradient step over the whole dataset, so the fit is
/// deterministic; `seed` is accepted so every fitter shares one signature but
/// is not consumed. On separable data (every pair agrees on an ordering) the
/// loss has no finite minimizer and the reward gaps keep growing with more
/// epochs.
pub fn reward_model_fit(
    world: &World,
    dataset: &[PreferencePair],
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<RewardFit> {
    let _ = seed;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot fit a reward model on an empty dataset"));
    }
    if !(learning_rate > 0.0) {
        return Err(Error::invalid(format!("reward learning rate must be positive, got {learning_rate}")));
    }
    for pair in dataset {
        world.check_pair(pair)?;
    }
    let mut model = RewardModel::zeros(world);
    let mut epoch_losses = Vec::with_capacity(epochs + 1);
    let (mut loss, mut grad) = bt_loss_and_grad(&model, dataset)?;
    epoch_losses.push(loss);
    for _ in 0..epochs {
        model.rewards.add_scaled(-learning_rate, &grad);
        (loss, grad) = bt_loss_and_grad(&model, dataset)?;
        epoch_losses.push(loss);
    }
    Ok(RewardFit { model, epoch_losses })
}
