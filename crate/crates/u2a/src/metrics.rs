//! Unlearning-performance metrics: Min-k% membership scores with exact
//! pair-counting AUC, perplexity, and the reward-value of a policy.

use crate::error::{Error, Result};
use crate::policy::{sequence_logprobs, PolicyParams, TokenSeq};
use crate::reward::{pa_objective, ContextDistribution, RewardModel};
use serde::Serialize;

/// Mean of the lowest ⌈k%·n⌉ per-token log-probabilities; higher is more
/// member-like.
pub fn min_k_prob_score(params: &PolicyParams, seq: &TokenSeq, k_percent: f64) -> Result<f64> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::InvalidInput(format!(
            "k_percent must be in (0, 100], got {k_percent}"
        )));
    }
    let mut lps = sequence_logprobs(params, seq);
    lps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let take = ((k_percent / 100.0) * lps.len() as f64).ceil() as usize;
    let take = take.clamp(1, lps.len());
    Ok(lps[..take].iter().sum::<f64>() / take as f64)
}

/// Probability that a random member outscores a random nonmember under the
/// Min-k% score, ties counting one half; exact pair counting.
pub fn mia_auc(
    params: &PolicyParams,
    members: &[TokenSeq],
    nonmembers: &[TokenSeq],
    k_percent: f64,
) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::InvalidInput(
            "mia_auc needs non-empty member and nonmember sets".into(),
        ));
    }
    let m_scores: Vec<f64> = members
        .iter()
        .map(|s| min_k_prob_score(params, s, k_percent))
        .collect::<Result<_>>()?;
    let n_scores: Vec<f64> = nonmembers
        .iter()
        .map(|s| min_k_prob_score(params, s, k_percent))
        .collect::<Result<_>>()?;
    let mut wins = 0.0;
    for &m in &m_scores {
        for &n in &n_scores {
            if m > n {
                wins += 1.0;
            } else if m == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (m_scores.len() * n_scores.len()) as f64)
}

/// exp(total NLL / total token count). The total is compensated-summed so
/// the uniform-policy identity PPL = V holds to the last ulp.
pub fn perplexity(params: &PolicyParams, data: &[TokenSeq]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("perplexity over empty data".into()));
    }
    let mut total = 0.0f64;
    let mut comp = 0.0f64;
    let mut tokens = 0usize;
    for seq in data {
        for lp in sequence_logprobs(params, seq) {
            let y = -lp - comp;
            let t = total + y;
            comp = (t - total) - y;
            total = t;
            tokens += 1;
        }
    }
    Ok((total / tokens as f64).exp())
}

/// The reward-value metric, realized as the alignment objective J(θ).
pub fn reward_value(
    params: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
) -> f64 {
    pa_objective(params, reward, rho)
}

/// The metrics the eval command reports.
#[derive(Debug, Clone, Serialize)]
pub struct EvalMetrics {
    pub mia_auc: f64,
    pub ppl: f64,
    pub reward_value: f64,
}
