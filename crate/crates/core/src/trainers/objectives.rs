//! Loss functions and their exact gradients with respect to the policy logits.
//!
//! For a tabular softmax, `∂ log π(y|x) / ∂θ_{x,j} = δ_{y j} − π(j|x)`, so
//! every gradient below is assembled from that identity.

use crate::error::{Error, Result};
use crate::policy::{LogitTable, Policy, ReferenceSnapshot};
use crate::trainers::reward::RewardModel;
use crate::world::{PreferencePair, PromptId, SftExample, World};

/// `log σ(z)`, stable for large |z|.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn non_empty<T>(batch: &[T], what: &str) -> Result<()> {
    if batch.is_empty() {
        Err(Error::invalid(format!("{what} batch is empty")))
    } else {
        Ok(())
    }
}

/// Adds `c · ∂ log π(y_j | x) / ∂θ_x` into `grad`.
fn add_logprob_grad(grad: &mut LogitTable, prompt: usize, probs: &[f64], j: usize, c: f64) {
    let row = grad.row_mut(prompt);
    for (g, p) in row.iter_mut().zip(probs) {
        *g -= c * p;
    }
    row[j] += c;
}

/// Negative mean log-likelihood of the batch responses.
pub fn sft_loss_and_grad(policy: &Policy, batch: &[SftExample]) -> Result<(f64, LogitTable)> {
    non_empty(batch, "SFT")?;
    let inv_n = 1.0 / batch.len() as f64;
    let mut grad = policy.zeros();
    let mut loss = 0.0;
    for ex in batch {
        let j = policy.position(ex.prompt_id, ex.response_id)?;
        let logp = policy.log_probs(ex.prompt_id)?;
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        loss -= logp[j];
        add_logprob_grad(&mut grad, ex.prompt_id.0, &probs, j, -inv_n);
    }
    Ok((loss * inv_n, grad))
}

/// Mean of `−log σ(β[(log π(y_w) − log π_ref(y_w)) − (log π(y_l) − log π_ref(y_l))])`.
pub fn dpo_loss_and_grad(
    policy: &Policy,
    reference: &ReferenceSnapshot,
    batch: &[PreferencePair],
    beta: f64,
) -> Result<(f64, LogitTable)> {
    non_empty(batch, "DPO")?;
    if !reference.covers(policy) {
        return Err(Error::invalid("reference snapshot index set differs from the policy"));
    }
    let inv_n = 1.0 / batch.len() as f64;
    let mut grad = policy.zeros();
    let mut loss = 0.0;
    for pair in batch {
        let x = pair.prompt_id;
        let w = policy.position(x, pair.chosen_id)?;
        let l = policy.position(x, pair.rejected_id)?;
        let logp = policy.log_probs(x)?;
        let ref_logp = reference.log_probs(x)?;
        let margin = (logp[w] - ref_logp[w]) - (logp[l] - ref_logp[l]);
        let z = beta * margin;
        loss -= log_sigmoid(z);
        // d/dz of −log σ(z) is −σ(−z); the softmax terms of the two
        // log-probabilities cancel, leaving β(e_w − e_l).
        let c = sigmoid(-z) * beta * inv_n;
        let row = grad.row_mut(x.0);
        row[w] -= c;
        row[l] += c;
    }
    Ok((loss * inv_n, grad))
}

/// Mean of `−log σ(β/|y_w| · log π(y_w) − β/|y_l| · log π(y_l) − γ)`.
pub fn simpo_loss_and_grad(
    policy: &Policy,
    world: &World,
    batch: &[PreferencePair],
    beta: f64,
    gamma: f64,
) -> Result<(f64, LogitTable)> {
    non_empty(batch, "SimPO")?;
    let inv_n = 1.0 / batch.len() as f64;
    let mut grad = policy.zeros();
    let mut loss = 0.0;
    for pair in batch {
        let x = pair.prompt_id;
        let w = policy.position(x, pair.chosen_id)?;
        let l = policy.position(x, pair.rejected_id)?;
        let len_w = world.response(pair.chosen_id)?.token_length as f64;
        let len_l = world.response(pair.rejected_id)?.token_length as f64;
        let logp = policy.log_probs(x)?;
        let probs: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
        let z = beta / len_w * logp[w] - beta / len_l * logp[l] - gamma;
        loss -= log_sigmoid(z);
        let s = sigmoid(-z) * inv_n;
        add_logprob_grad(&mut grad, x.0, &probs, w, -s * beta / len_w);
        add_logprob_grad(&mut grad, x.0, &probs, l, s * beta / len_l);
    }
    Ok((loss * inv_n, grad))
}

/// `KL(π(·|x) ‖ π_ref(·|x))` over the prompt's candidates.
pub fn kl_divergence(policy: &Policy, reference: &ReferenceSnapshot, prompt: PromptId) -> Result<f64> {
    let logp = policy.log_probs(prompt)?;
    let ref_logp = reference.log_probs(prompt)?;
    Ok(logp
        .iter()
        .zip(&ref_logp)
        .map(|(lp, lr)| lp.exp() * (lp - lr))
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlhfValue {
    /// Mean over prompts of `E_π[r] − kl_coef · KL(π ‖ π_ref)`.
    pub objective: f64,
    pub mean_reward: f64,
    pub mean_kl: f64,
    /// Gradient of `objective` (ascent direction).
    pub grad: LogitTable,
}

/// Closed-form KL-regularized expected reward over each prompt's candidates.
pub fn rlhf_objective_and_grad(
    policy: &Policy,
    reference: &ReferenceSnapshot,
    reward: &RewardModel,
    prompts: &[PromptId],
    kl_coef: f64,
) -> Result<RlhfValue> {
    non_empty(prompts, "RLHF")?;
    if !reference.covers(policy) {
        return Err(Error::invalid("reference snapshot index set differs from the policy"));
    }
    if !reward.table().same_shape(&policy.zeros()) {
        return Err(Error::invalid("reward model index set differs from the policy"));
    }
    let inv_n = 1.0 / prompts.len() as f64;
    let mut grad = policy.zeros();
    let (mut total_r, mut total_kl) = (0.0, 0.0);
    for &x in prompts {
        let logp = policy.log_probs(x)?;
        let ref_logp = reference.log_probs(x)?;
        let rewards = reward.table().row(x.0);
        let probs: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
        // per-candidate regularized reward g_j = r_j − κ(log π_j − log π_ref,j)
        let g: Vec<f64> = rewards
            .iter()
            .zip(logp.iter().zip(&ref_logp))
            .map(|(r, (lp, lr))| r - kl_coef * (lp - lr))
            .collect();
        let baseline: f64 = probs.iter().zip(&g).map(|(p, gj)| p * gj).sum();
        total_r += probs.iter().zip(rewards).map(|(p, r)| p * r).sum::<f64>();
        total_kl += probs
            .iter()
            .zip(logp.iter().zip(&ref_logp))
            .map(|(p, (lp, lr))| p * (lp - lr))
            .sum::<f64>();
        // ∂/∂θ_j Σ π_i g_i = π_j (g_j − Σ π_i g_i); the KL derivative inside g
        // contributes −κ Σ_i π_i (δ_ij − π_j) = 0.
        let row = grad.row_mut(x.0);
        for ((gr, p), gj) in row.iter_mut().zip(&probs).zip(&g) {
            *gr += inv_n * p * (gj - baseline);
        }
    }
    let mean_reward = total_r * inv_n;
    let mean_kl = total_kl * inv_n;
    Ok(RlhfValue {
        objective: mean_reward - kl_coef * mean_kl,
        mean_reward,
        mean_kl,
        grad,
    })
}
