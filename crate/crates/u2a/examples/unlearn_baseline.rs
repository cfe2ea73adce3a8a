//! Uniform-weight unlearning over the whole negative pool with each of the
//! three forget losses, reporting alignment and unlearning metrics before
//! and after.
//!
//! ```bash
//! cargo run --release --example unlearn_baseline
//! ```

use u2a::bilevel::WeightVector;
use u2a::forget::{inner_solve, ForgetLossKind, InnerConfig};
use u2a::metrics::{mia_auc, perplexity, reward_value};
use u2a::policy::{train_mle, PolicyParams};
use u2a::reward::{train_reward, ContextDistribution, RewardModel};
use u2a::world::{generate, SyntheticWorldSpec};

fn report(
    label: &str,
    params: &PolicyParams,
    world: &u2a::world::World,
    reward: &RewardModel,
    rho: &ContextDistribution,
) -> u2a::Result<()> {
    println!(
        "{label:<22} J {:+.4}   ppl(retain) {:>7.3}   mia auc {:.3}",
        reward_value(params, reward, rho),
        perplexity(params, &world.dataset.retain)?,
        mia_auc(params, &world.dataset.negatives, &world.dataset.holdout, 20.0)?,
    );
    Ok(())
}

fn main() -> u2a::Result<()> {
    let spec = SyntheticWorldSpec {
        seed: 5,
        ..SyntheticWorldSpec::default()
    };
    let world = generate(&spec)?;
    let theta_star = train_mle(world.vocab, &world.dataset.train, 2000, 0.5, spec.seed)?.params;
    let reward = train_reward(world.vocab, &world.prefs, 2000, 0.5, 1e-3, spec.seed)?;
    let rho = ContextDistribution::from_data(&world.dataset.retain, &world.vocab)?;

    report("original model", &theta_star, &world, &reward, &rho)?;

    let n = world.dataset.negatives.len();
    let uniform = WeightVector::from_omega(vec![1.0 / n as f64; n])?;
    let inner = InnerConfig::default();

    let kinds = [
        ForgetLossKind::Ga,
        ForgetLossKind::GradDiff {
            lambda_r: 1.0,
            retain: world.dataset.retain.clone(),
        },
        ForgetLossKind::Npo { beta: 0.1 },
    ];
    for kind in kinds {
        let solved = inner_solve(
            &kind,
            &uniform,
            &world.dataset.negatives,
            &theta_star,
            None,
            &inner,
        )?;
        report(
            &format!("uniform {} unlearn", kind.name()),
            &solved.params,
            &world,
            &reward,
            &rho,
        )?;
    }
    Ok(())
}
