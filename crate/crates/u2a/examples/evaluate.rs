//! Membership-inference and utility metrics before and after unlearning:
//! Min-k% scores, the exact pair-counting AUC between the negative pool and
//! held-out sequences, retain-split perplexity, and the reward value.
//!
//! ```bash
//! cargo run --release --example evaluate
//! ```

use u2a::bilevel::WeightVector;
use u2a::forget::{inner_solve, ForgetLossKind, InnerConfig};
use u2a::metrics::{mia_auc, min_k_prob_score, perplexity, reward_value};
use u2a::policy::train_mle;
use u2a::reward::{train_reward, ContextDistribution};
use u2a::world::{generate, SyntheticWorldSpec};

fn main() -> u2a::Result<()> {
    let spec = SyntheticWorldSpec {
        seed: 10,
        ..SyntheticWorldSpec::default()
    };
    let world = generate(&spec)?;
    let theta_star = train_mle(world.vocab, &world.dataset.train, 2000, 0.5, spec.seed)?.params;
    let reward = train_reward(world.vocab, &world.prefs, 2000, 0.5, 1e-3, spec.seed)?;
    let rho = ContextDistribution::from_data(&world.dataset.retain, &world.vocab)?;

    let k = 20.0;
    let score_of = |label: &str, params: &u2a::policy::PolicyParams| -> u2a::Result<()> {
        let member_mean = world
            .dataset
            .negatives
            .iter()
            .map(|s| min_k_prob_score(params, s, k))
            .sum::<u2a::Result<f64>>()?
            / world.dataset.negatives.len() as f64;
        println!(
            "{label:<18} mean min-{k}% member score {member_mean:+.4}   auc {:.4}   ppl {:.3}   J {:+.4}",
            mia_auc(params, &world.dataset.negatives, &world.dataset.holdout, k)?,
            perplexity(params, &world.dataset.retain)?,
            reward_value(params, &reward, &rho),
        );
        Ok(())
    };

    score_of("original", &theta_star)?;

    let n = world.dataset.negatives.len();
    let uniform = WeightVector::from_omega(vec![1.0 / n as f64; n])?;
    let unlearned = inner_solve(
        &ForgetLossKind::Ga,
        &uniform,
        &world.dataset.negatives,
        &theta_star,
        None,
        &InnerConfig::default(),
    )?;
    score_of("after unlearning", &unlearned.params)?;
    Ok(())
}
