//! Pointwise Bradley-Terry reward model and the alignment objective J(θ).
//!
//! The reward is a lookup table r(context, token); preference fitting is
//! convex logistic regression on margins. J(θ) is the expected reward of the
//! policy's next-token distribution under a fixed context distribution ρ,
//! computed exactly by enumeration.

use crate::error::{Error, Result};
use crate::math::{all_finite, log_sigmoid, sigmoid};
use crate::policy::{PolicyParams, TokenSeq, Vocab};
use serde::{Deserialize, Serialize};

/// One annotated comparison: in `context`, `preferred` beats `dispreferred`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context: usize,
    pub preferred: usize,
    pub dispreferred: usize,
}

impl PreferencePair {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if self.context > vocab.bos_id() {
            return Err(Error::InvalidInput(format!(
                "preference context {} out of range",
                self.context
            )));
        }
        if self.preferred >= vocab.size() || self.dispreferred >= vocab.size() {
            return Err(Error::InvalidInput(
                "preference token outside the vocab".into(),
            ));
        }
        if self.preferred == self.dispreferred {
            return Err(Error::InvalidInput(
                "preferred and dispreferred tokens coincide".into(),
            ));
        }
        Ok(())
    }
}

/// Dense pointwise reward: `r(c, t) = w[c][t]`, one row per context.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    vocab: Vocab,
    w: Vec<f64>,
}

impl RewardModel {
    pub fn zeros(vocab: Vocab) -> Self {
        RewardModel {
            vocab,
            w: vec![0.0; vocab.param_dim()],
        }
    }

    pub fn from_flat(vocab: Vocab, w: Vec<f64>) -> Result<Self> {
        if w.len() != vocab.param_dim() {
            return Err(Error::InvalidInput(format!(
                "reward table has length {}, expected {}",
                w.len(),
                vocab.param_dim()
            )));
        }
        if !all_finite(&w) {
            return Err(Error::InvalidInput("non-finite reward entry".into()));
        }
        Ok(RewardModel { vocab, w })
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.w
    }

    pub fn row(&self, context: usize) -> &[f64] {
        let v = self.vocab.size();
        &self.w[context * v..(context + 1) * v]
    }

    pub fn get(&self, context: usize, token: usize) -> f64 {
        self.row(context)[token]
    }
}

/// Fixed distribution over context ids (tokens plus BOS).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextDistribution {
    rho: Vec<f64>,
}

impl ContextDistribution {
    pub fn new(rho: Vec<f64>, vocab: &Vocab) -> Result<Self> {
        if rho.len() != vocab.n_contexts() {
            return Err(Error::InvalidInput(format!(
                "context distribution has {} entries, expected {}",
                rho.len(),
                vocab.n_contexts()
            )));
        }
        if rho.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput(
                "context distribution entries must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = rho.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "context distribution sums to {sum}, expected 1"
            )));
        }
        Ok(ContextDistribution { rho })
    }

    /// Empirical context frequencies of a data split (every token position
    /// contributes its context, BOS included).
    pub fn from_data(data: &[TokenSeq], vocab: &Vocab) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidInput(
                "context distribution over empty data".into(),
            ));
        }
        let mut counts = vec![0.0; vocab.n_contexts()];
        for seq in data {
            for (ctx, _) in seq.pairs(vocab) {
                counts[ctx] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        for c in &mut counts {
            *c /= total;
        }
        // Renormalize exactly once more so the sum invariant holds bitwise.
        let sum: f64 = counts.iter().sum();
        for c in &mut counts {
            *c /= sum;
        }
        ContextDistribution::new(counts, vocab)
    }

    pub fn probs(&self) -> &[f64] {
        &self.rho
    }

    pub fn prob(&self, context: usize) -> f64 {
        self.rho[context]
    }
}

/// Mean negative log-sigmoid of the preference margins.
pub fn bt_loss(model: &RewardModel, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("bt_loss over empty pairs".into()));
    }
    let mut total = 0.0;
    for p in pairs {
        let margin = model.get(p.context, p.preferred) - model.get(p.context, p.dispreferred);
        total -= log_sigmoid(margin);
    }
    Ok(total / pairs.len() as f64)
}

fn bt_grad(model: &RewardModel, pairs: &[PreferencePair], l2: f64) -> Vec<f64> {
    let v = model.vocab().size();
    let mut grad = vec![0.0; model.as_flat().len()];
    let inv = 1.0 / pairs.len() as f64;
    for p in pairs {
        let margin = model.get(p.context, p.preferred) - model.get(p.context, p.dispreferred);
        let coeff = (sigmoid(margin) - 1.0) * inv;
        grad[p.context * v + p.preferred] += coeff;
        grad[p.context * v + p.dispreferred] -= coeff;
    }
    if l2 > 0.0 {
        for (g, w) in grad.iter_mut().zip(model.as_flat()) {
            *g += 2.0 * l2 * w;
        }
    }
    grad
}

/// Gradient descent on `bt_loss + l2·‖w‖²` from zero init; deterministic.
pub fn train_reward(
    vocab: Vocab,
    pairs: &[PreferencePair],
    steps: usize,
    lr: f64,
    l2: f64,
    _seed: u64,
) -> Result<RewardModel> {
    if steps == 0 {
        return Err(Error::InvalidConfig("train_reward needs steps >= 1".into()));
    }
    if lr <= 0.0 || l2 < 0.0 {
        return Err(Error::InvalidConfig(
            "train_reward needs lr > 0 and l2 >= 0".into(),
        ));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput("train_reward over empty pairs".into()));
    }
    for p in pairs {
        p.validate(&vocab)?;
    }
    let mut model = RewardModel::zeros(vocab);
    for step in 0..steps {
        let grad = bt_grad(&model, pairs, l2);
        if !all_finite(&grad) {
            return Err(Error::Divergence {
                step,
                what: "non-finite gradient in train_reward".into(),
            });
        }
        for (w, g) in model.w.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        if !all_finite(&model.w) {
            return Err(Error::Divergence {
                step,
                what: "non-finite reward weights in train_reward".into(),
            });
        }
    }
    Ok(model)
}

/// J(θ) = Σ_c ρ(c) Σ_t softmax(θ[c])_t · r(c, t), exact enumeration.
pub fn pa_objective(
    params: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
) -> f64 {
    let vocab = params.vocab();
    let mut j = 0.0;
    for c in 0..vocab.n_contexts() {
        let p_c = rho.prob(c);
        if p_c == 0.0 {
            continue;
        }
        let pi = params.softmax_row(c);
        let r = reward.row(c);
        let mut expected = 0.0;
        for t in 0..vocab.size() {
            expected += pi[t] * r[t];
        }
        j += p_c * expected;
    }
    j
}

/// Exact gradient of `pa_objective`: row c is
/// ρ(c)·(diag(π_c) − π_c π_cᵀ)·r_c, i.e. entry j is ρ(c)·π_j·(r_j − π_cᵀr_c).
pub fn pa_grad(
    params: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
) -> Vec<f64> {
    let vocab = params.vocab();
    let v = vocab.size();
    let mut grad = vec![0.0; params.dim()];
    for c in 0..vocab.n_contexts() {
        let p_c = rho.prob(c);
        if p_c == 0.0 {
            continue;
        }
        let pi = params.softmax_row(c);
        let r = reward.row(c);
        let mut expected = 0.0;
        for t in 0..v {
            expected += pi[t] * r[t];
        }
        let row = &mut grad[c * v..(c + 1) * v];
        for j in 0..v {
            row[j] = p_c * pi[j] * (r[j] - expected);
        }
    }
    grad
}

/// Per-token rewards r(context_t, x_t) along one sequence.
pub fn token_rewards(reward: &RewardModel, seq: &TokenSeq) -> Vec<f64> {
    seq.pairs(&reward.vocab())
        .map(|(ctx, x)| reward.get(ctx, x))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_reward(vocab: Vocab, seed: u64, scale: f64) -> RewardModel {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let w = (0..vocab.param_dim())
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        RewardModel::from_flat(vocab, w).unwrap()
    }

    fn random_policy(vocab: Vocab, seed: u64, scale: f64) -> PolicyParams {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let theta = (0..vocab.param_dim())
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        PolicyParams::from_flat(vocab, theta).unwrap()
    }

    fn uniform_rho(vocab: Vocab) -> ContextDistribution {
        let n = vocab.n_contexts();
        ContextDistribution::new(vec![1.0 / n as f64; n], &vocab).unwrap()
    }

    #[test]
    fn bt_loss_at_zero_is_ln_two() {
        let v = Vocab::new(4).unwrap();
        let model = RewardModel::zeros(v);
        let pairs = vec![
            PreferencePair { context: 0, preferred: 1, dispreferred: 2 },
            PreferencePair { context: 4, preferred: 0, dispreferred: 3 },
        ];
        assert_abs_diff_eq!(
            bt_loss(&model, &pairs).unwrap(),
            2.0f64.ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn bt_loss_saturates_with_large_margin() {
        let v = Vocab::new(3).unwrap();
        let mut w = vec![0.0; v.param_dim()];
        w[1] = 20.0; // r(0, 1) = 20, everything else 0
        let model = RewardModel::from_flat(v, w).unwrap();
        let pairs = vec![PreferencePair { context: 0, preferred: 1, dispreferred: 2 }];
        assert!(bt_loss(&model, &pairs).unwrap() < 1e-8);
    }

    #[test]
    fn bt_loss_matches_per_pair_sigmoid_oracle() {
        let v = Vocab::new(5).unwrap();
        let model = random_reward(v, 13, 2.0);
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let pairs: Vec<PreferencePair> = (0..10)
            .map(|_| {
                let context = rng.gen_range(0..v.n_contexts());
                let preferred = rng.gen_range(0..v.size());
                let mut dispreferred = rng.gen_range(0..v.size());
                while dispreferred == preferred {
                    dispreferred = rng.gen_range(0..v.size());
                }
                PreferencePair { context, preferred, dispreferred }
            })
            .collect();
        let loss = bt_loss(&model, &pairs).unwrap();
        let mut oracle = 0.0;
        for p in &pairs {
            let m = model.get(p.context, p.preferred) - model.get(p.context, p.dispreferred);
            let sigma = 1.0 / (1.0 + (-m).exp());
            oracle -= sigma.ln();
        }
        oracle /= pairs.len() as f64;
        assert_abs_diff_eq!(loss, oracle, epsilon = 1e-12);
    }

    #[test]
    fn bt_loss_rejects_empty_pairs() {
        let v = Vocab::new(2).unwrap();
        assert!(bt_loss(&RewardModel::zeros(v), &[]).is_err());
    }

    #[test]
    fn train_reward_learns_margin_sign() {
        let v = Vocab::new(3).unwrap();
        let pairs = vec![PreferencePair { context: 1, preferred: 0, dispreferred: 2 }; 8];
        let model = train_reward(v, &pairs, 500, 0.5, 1e-3, 0).unwrap();
        assert!(model.get(1, 0) - model.get(1, 2) > 0.0);
    }

    #[test]
    fn train_reward_huge_l2_pins_weights_near_zero() {
        let v = Vocab::new(3).unwrap();
        let pairs = vec![PreferencePair { context: 0, preferred: 1, dispreferred: 0 }; 4];
        let model = train_reward(v, &pairs, 300, 1e-7, 1e6, 0).unwrap();
        let norm: f64 = model.as_flat().iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm = {norm}");
    }

    #[test]
    fn train_reward_symmetric_pairs_give_zero_margin() {
        let v = Vocab::new(4).unwrap();
        let pairs = vec![
            PreferencePair { context: 2, preferred: 0, dispreferred: 1 },
            PreferencePair { context: 2, preferred: 1, dispreferred: 0 },
        ];
        let model = train_reward(v, &pairs, 2000, 0.5, 1e-3, 0).unwrap();
        let margin = model.get(2, 0) - model.get(2, 1);
        assert!(margin.abs() < 1e-6, "margin = {margin}");
    }

    #[test]
    fn pa_objective_constant_reward_is_that_constant() {
        let v = Vocab::new(4).unwrap();
        let kappa = 0.37;
        let reward = RewardModel::from_flat(v, vec![kappa; v.param_dim()]).unwrap();
        let params = random_policy(v, 3, 2.0);
        let j = pa_objective(&params, &reward, &uniform_rho(v));
        assert_abs_diff_eq!(j, kappa, epsilon = 1e-12);
    }

    #[test]
    fn pa_objective_degenerate_policy_reads_one_cell() {
        let v = Vocab::new(4).unwrap();
        let reward = random_reward(v, 8, 1.0);
        let mut rho = vec![0.0; v.n_contexts()];
        rho[2] = 1.0;
        let rho = ContextDistribution::new(rho, &v).unwrap();
        let mut params = PolicyParams::zeros(v);
        params.row_mut(2)[3] = 60.0;
        let j = pa_objective(&params, &reward, &rho);
        assert_abs_diff_eq!(j, reward.get(2, 3), epsilon = 1e-9);
    }

    #[test]
    fn pa_objective_matches_monte_carlo() {
        let v = Vocab::new(5).unwrap();
        let params = random_policy(v, 21, 1.0);
        let reward = random_reward(v, 22, 1.0);
        let rho = uniform_rho(v);
        let exact = pa_objective(&params, &reward, &rho);

        let n = 1_000_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let c = rng.gen_range(0..v.n_contexts());
            let pi = params.softmax_row(c);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut tok = v.size() - 1;
            for (t, &p) in pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    tok = t;
                    break;
                }
            }
            let r = reward.get(c, tok);
            sum += r;
            sum_sq += r * r;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (exact - mean).abs() <= 3.0 * se,
            "exact {exact} vs mc {mean} (3se = {})",
            3.0 * se
        );
    }

    #[test]
    fn pa_grad_zero_for_constant_reward() {
        let v = Vocab::new(3).unwrap();
        let reward = RewardModel::from_flat(v, vec![-2.5; v.param_dim()]).unwrap();
        let params = random_policy(v, 17, 2.0);
        let grad = pa_grad(&params, &reward, &uniform_rho(v));
        for g in grad {
            assert_abs_diff_eq!(g, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn pa_grad_zero_weight_context_row_is_zero() {
        let v = Vocab::new(3).unwrap();
        let reward = random_reward(v, 4, 1.0);
        let params = random_policy(v, 5, 1.0);
        let mut rho = vec![1.0 / v.size() as f64; v.n_contexts()];
        rho[1] = 0.0; // mass only on the other contexts
        let s: f64 = rho.iter().sum();
        for p in &mut rho {
            *p /= s;
        }
        let rho = ContextDistribution::new(rho, &v).unwrap();
        let grad = pa_grad(&params, &reward, &rho);
        for j in 0..v.size() {
            assert_eq!(grad[v.size() + j], 0.0); // row for context 1
        }
    }

    #[test]
    fn pa_grad_matches_finite_differences() {
        for seed in [31u64, 32, 33, 34, 35] {
            let v = Vocab::new(4).unwrap();
            let params = random_policy(v, seed, 1.5);
            let reward = random_reward(v, seed + 10, 1.0);
            let rho = uniform_rho(v);
            let grad = pa_grad(&params, &reward, &rho);
            let h = 1e-5;
            let mut max_rel: f64 = 0.0;
            let mut fd = vec![0.0; params.dim()];
            for i in 0..params.dim() {
                let mut plus = params.clone();
                plus.as_flat_mut()[i] += h;
                let mut minus = params.clone();
                minus.as_flat_mut()[i] -= h;
                fd[i] = (pa_objective(&plus, &reward, &rho)
                    - pa_objective(&minus, &reward, &rho))
                    / (2.0 * h);
            }
            let num: f64 = grad
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
            max_rel = max_rel.max(num / den);
            assert!(max_rel < 1e-6, "seed {seed}: rel err {max_rel}");
        }
    }

    #[test]
    fn reward_shift_invariance() {
        // Shifting every reward by a constant shifts J by that constant and
        // leaves the gradient unchanged.
        let v = Vocab::new(4).unwrap();
        let params = random_policy(v, 41, 1.0);
        let reward = random_reward(v, 42, 1.0);
        let shift = 1.75;
        let shifted =
            RewardModel::from_flat(v, reward.as_flat().iter().map(|w| w + shift).collect())
                .unwrap();
        let rho = uniform_rho(v);
        let j0 = pa_objective(&params, &reward, &rho);
        let j1 = pa_objective(&params, &shifted, &rho);
        assert_abs_diff_eq!(j1 - j0, shift, epsilon = 1e-10);
        let g0 = pa_grad(&params, &reward, &rho);
        let g1 = pa_grad(&params, &shifted, &rho);
        for (a, b) in g0.iter().zip(&g1) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn pa_objective_is_bounded_by_reward_range() {
        let v = Vocab::new(5).unwrap();
        let reward = random_reward(v, 51, 3.0);
        let rho = uniform_rho(v);
        let lo = reward.as_flat().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = reward
            .as_flat()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        for seed in 0..5u64 {
            let params = random_policy(v, seed, 4.0);
            let j = pa_objective(&params, &reward, &rho);
            assert!(j >= lo - 1e-12 && j <= hi + 1e-12);
        }
    }

    #[test]
    fn token_rewards_definition_and_causality() {
        let v = Vocab::new(4).unwrap();
        let reward = random_reward(v, 61, 1.0);
        // Zero reward model gives all zeros.
        let zeros = RewardModel::zeros(v);
        let seq = TokenSeq::new(vec![1, 3, 0], &v).unwrap();
        assert!(token_rewards(&zeros, &seq).iter().all(|&r| r == 0.0));
        // Length-1 sequence reads the BOS row.
        let one = TokenSeq::new(vec![2], &v).unwrap();
        assert_eq!(token_rewards(&reward, &one), vec![reward.get(v.bos_id(), 2)]);
        // Prefix invariance: extending the sequence does not change the
        // rewards of the prefix.
        let ext = TokenSeq::new(vec![1, 3, 0, 2, 2], &v).unwrap();
        let short = token_rewards(&reward, &seq);
        let long = token_rewards(&reward, &ext);
        assert_eq!(&long[..3], &short[..]);
    }
}
