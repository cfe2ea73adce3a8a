//! Quantitative impact tooling: the first-order estimate of how unlearning
//! one sample moves the alignment objective, its norm/angle decomposition,
//! the low-reward-token methodology, and re-solve oracles that measure the
//! true change by actually unlearning.

use crate::bilevel::WeightVector;
use crate::config::seed_stream;
use crate::error::{Error, Result};
use crate::forget::{forget_grad, inner_solve, ForgetLossKind, InnerConfig};
use crate::math::{dot, norm2};
use crate::policy::{PolicyParams, TokenSeq};
use crate::reward::{pa_grad, pa_objective, token_rewards, ContextDistribution, RewardModel};
use rand::seq::SliceRandom;
use serde::Serialize;

/// Per-sample impact record, one row of impact.csv.
#[derive(Debug, Clone, Serialize)]
pub struct ImpactRecord {
    pub index: usize,
    pub delta_j_est: f64,
    pub delta_j_true: Option<f64>,
    pub grad_j_norm: f64,
    pub grad_l_norm: f64,
    pub cos_phi: f64,
    pub low_reward_fraction: f64,
}

/// First-order estimate of J(θ*(ω)) − J(θ*) for unlearning `sample` with
/// scalar weight ω: −(ω/2)·∇J(θ*)ᵀ∇ℓ(sample; θ*).
pub fn estimate_delta_j(
    sample: &TokenSeq,
    omega: f64,
    theta_star: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
    kind: &ForgetLossKind,
) -> Result<f64> {
    if omega < 0.0 {
        return Err(Error::InvalidInput("omega must be nonnegative".into()));
    }
    let gj = pa_grad(theta_star, reward, rho);
    let gl = forget_grad(kind, theta_star, sample, theta_star)?;
    Ok(-(omega / 2.0) * dot(&gj, &gl))
}

/// Gradient-norm/angle decomposition of the impact estimate:
/// (‖∇J‖, ‖∇ℓ‖, cos φ), with cos φ = 0 when either norm is below 1e-15.
pub fn decompose(
    sample: &TokenSeq,
    theta_star: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
    kind: &ForgetLossKind,
) -> Result<(f64, f64, f64)> {
    let gj = pa_grad(theta_star, reward, rho);
    let gl = forget_grad(kind, theta_star, sample, theta_star)?;
    let nj = norm2(&gj);
    let nl = norm2(&gl);
    let cos_phi = if nj < 1e-15 || nl < 1e-15 {
        0.0
    } else {
        dot(&gj, &gl) / (nj * nl)
    };
    Ok((nj, nl, cos_phi))
}

/// Fraction of the sample's tokens whose pointwise reward falls strictly
/// below `threshold`.
pub fn low_reward_fraction(
    sample: &TokenSeq,
    reward: &RewardModel,
    threshold: f64,
) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InvalidInput("empty sample".into()));
    }
    let rewards = token_rewards(reward, sample);
    let low = rewards.iter().filter(|&&r| r < threshold).count();
    Ok(low as f64 / rewards.len() as f64)
}

/// Mean pointwise token reward over a pool, the per-run threshold for
/// classifying tokens as low-reward.
pub fn mean_token_reward(pool: &[TokenSeq], reward: &RewardModel) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::InvalidInput("empty pool".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in pool {
        for r in token_rewards(reward, seq) {
            total += r;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// True change of the alignment objective from actually unlearning a group:
/// runs the inner solver with mass `omega` spread uniformly over the group
/// and returns J(θ*(ω)) − J(θ*).
#[allow(clippy::too_many_arguments)]
pub fn true_delta_j(
    group: &[TokenSeq],
    omega: f64,
    theta_star: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
    kind: &ForgetLossKind,
    inner_cfg: &InnerConfig,
) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::InvalidInput("empty group".into()));
    }
    if omega < 0.0 {
        return Err(Error::InvalidInput("omega must be nonnegative".into()));
    }
    if omega == 0.0 {
        return Ok(0.0);
    }
    let weights = WeightVector::from_omega(vec![omega / group.len() as f64; group.len()])?;
    let solved = inner_solve(kind, &weights, group, theta_star, None, inner_cfg)?;
    Ok(pa_objective(&solved.params, reward, rho) - pa_objective(theta_star, reward, rho))
}

/// One analyzed group, one row of groups.csv.
#[derive(Debug, Clone, Serialize)]
pub struct GroupRecord {
    pub group: usize,
    pub members: Vec<usize>,
    pub low_reward_fraction: f64,
    /// ΔJ with total unlearning mass 1 spread over the group.
    pub delta_j_true: f64,
    /// ΔJ with mass 1 per member (total mass = group size).
    pub delta_j_true_unit: f64,
}

/// Summary of a group experiment.
#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub groups: usize,
    pub group_size: usize,
    pub threshold: f64,
    pub spearman: f64,
    pub positive: usize,
    pub negative: usize,
}

/// Sample random groups from the pool (without replacement inside a group),
/// measure each group's true ΔJ under both weight conventions and its
/// low-reward token fraction against the pool-mean threshold, and summarize
/// with the rank correlation between fraction and ΔJ.
#[allow(clippy::too_many_arguments)]
pub fn group_impact_experiment(
    pool: &[TokenSeq],
    groups: usize,
    group_size: usize,
    theta_star: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
    kind: &ForgetLossKind,
    inner_cfg: &InnerConfig,
    seed: u64,
) -> Result<(Vec<GroupRecord>, GroupSummary)> {
    if group_size == 0 || group_size > pool.len() {
        return Err(Error::InvalidInput(format!(
            "group size {group_size} invalid for a pool of {}",
            pool.len()
        )));
    }
    if groups == 0 {
        return Err(Error::InvalidInput("need at least one group".into()));
    }
    let threshold = mean_token_reward(pool, reward)?;
    let mut rng = seed_stream(seed, "impact-groups");
    let indices: Vec<usize> = (0..pool.len()).collect();

    let mut records = Vec::with_capacity(groups);
    for g in 0..groups {
        let mut members: Vec<usize> = indices
            .choose_multiple(&mut rng, group_size)
            .cloned()
            .collect();
        members.sort_unstable();
        let group: Vec<TokenSeq> = members.iter().map(|&i| pool[i].clone()).collect();

        let mut low = 0usize;
        let mut total = 0usize;
        for seq in &group {
            for r in token_rewards(reward, seq) {
                if r < threshold {
                    low += 1;
                }
                total += 1;
            }
        }
        let low_frac = low as f64 / total as f64;

        let dj = true_delta_j(&group, 1.0, theta_star, reward, rho, kind, inner_cfg)?;
        let dj_unit = true_delta_j(
            &group,
            group.len() as f64,
            theta_star,
            reward,
            rho,
            kind,
            inner_cfg,
        )?;
        records.push(GroupRecord {
            group: g,
            members,
            low_reward_fraction: low_frac,
            delta_j_true: dj,
            delta_j_true_unit: dj_unit,
        });
    }

    let fractions: Vec<f64> = records.iter().map(|r| r.low_reward_fraction).collect();
    let deltas: Vec<f64> = records.iter().map(|r| r.delta_j_true).collect();
    let summary = GroupSummary {
        groups,
        group_size,
        threshold,
        spearman: spearman(&fractions, &deltas),
        positive: deltas.iter().filter(|&&d| d > 0.0).count(),
        negative: deltas.iter().filter(|&&d| d < 0.0).count(),
    };
    Ok((records, summary))
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Average rank across ties, 1-based.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let mean = (n as f64 + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for i in 0..n {
        let dx = rx[i] - mean;
        let dy = ry[i] - mean;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return 0.0;
    }
    cov / (var_x * var_y).sqrt()
}

/// Build the per-sample impact table for a candidate pool.
#[allow(clippy::too_many_arguments)]
pub fn impact_table(
    pool: &[TokenSeq],
    omega: f64,
    theta_star: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
    kind: &ForgetLossKind,
    inner_cfg: &InnerConfig,
    with_true: bool,
) -> Result<Vec<ImpactRecord>> {
    let threshold = mean_token_reward(pool, reward)?;
    let mut out = Vec::with_capacity(pool.len());
    for (index, sample) in pool.iter().enumerate() {
        let est = estimate_delta_j(sample, omega, theta_star, reward, rho, kind)?;
        let (nj, nl, cos_phi) = decompose(sample, theta_star, reward, rho, kind)?;
        let truth = if with_true {
            Some(true_delta_j(
                std::slice::from_ref(sample),
                omega,
                theta_star,
                reward,
                rho,
                kind,
                inner_cfg,
            )?)
        } else {
            None
        };
        out.push(ImpactRecord {
            index,
            delta_j_est: est,
            delta_j_true: truth,
            grad_j_norm: nj,
            grad_l_norm: nl,
            cos_phi,
            low_reward_fraction: low_reward_fraction(sample, reward, threshold)?,
        });
    }
    Ok(out)
}
