//! Per-sample impact of unlearning on the alignment objective: the
//! first-order estimate −(ω/2)·∇Jᵀ∇ℓ against the true change measured by
//! actually re-solving the inner problem, plus the norm/angle decomposition
//! and the second-order error scaling in ω.
//!
//! ```bash
//! cargo run --release --example impact_analysis
//! ```

use u2a::analysis::{decompose, estimate_delta_j, low_reward_fraction, mean_token_reward, true_delta_j};
use u2a::forget::{ForgetLossKind, InnerConfig};
use u2a::policy::train_mle;
use u2a::reward::{train_reward, ContextDistribution};
use u2a::world::{generate, SyntheticWorldSpec};

fn main() -> u2a::Result<()> {
    let spec = SyntheticWorldSpec {
        seed: 3,
        n_negatives: 12,
        ..SyntheticWorldSpec::default()
    };
    let world = generate(&spec)?;
    let theta_star = train_mle(world.vocab, &world.dataset.train, 2000, 0.5, spec.seed)?.params;
    let reward = train_reward(world.vocab, &world.prefs, 2000, 0.5, 1e-3, spec.seed)?;
    let rho = ContextDistribution::from_data(&world.dataset.retain, &world.vocab)?;
    let kind = ForgetLossKind::Ga;
    let inner = InnerConfig {
        inner_steps: 20_000,
        grad_tol: 1e-12,
        ..InnerConfig::default()
    };
    let threshold = mean_token_reward(&world.dataset.negatives, &reward)?;

    println!("sample  low_frac  cos_phi   est(ω=0.01)   true(ω=0.01)");
    let omega = 0.01;
    for (i, sample) in world.dataset.negatives.iter().enumerate() {
        let est = estimate_delta_j(sample, omega, &theta_star, &reward, &rho, &kind)?;
        let truth = true_delta_j(
            std::slice::from_ref(sample),
            omega,
            &theta_star,
            &reward,
            &rho,
            &kind,
            &inner,
        )?;
        let (_, _, cos_phi) = decompose(sample, &theta_star, &reward, &rho, &kind)?;
        let frac = low_reward_fraction(sample, &reward, threshold)?;
        println!("{i:>6}  {frac:>8.3}  {cos_phi:>+7.3}  {est:>+12.3e}  {truth:>+12.3e}");
    }

    // Halving ω should shrink the estimate error by about 4 (second order).
    let sample = &world.dataset.negatives[0];
    let mut errs = Vec::new();
    for omega in [0.01, 0.005] {
        let est = estimate_delta_j(sample, omega, &theta_star, &reward, &rho, &kind)?;
        let truth = true_delta_j(
            std::slice::from_ref(sample),
            omega,
            &theta_star,
            &reward,
            &rho,
            &kind,
            &inner,
        )?;
        errs.push((truth - est).abs());
    }
    println!(
        "\nsecond-order check on sample 0: error(0.01)/error(0.005) = {:.2} (theory: 4)",
        errs[0] / errs[1]
    );
    Ok(())
}
