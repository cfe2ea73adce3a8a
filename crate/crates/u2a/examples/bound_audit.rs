//! Audit the O(1/t) suboptimality bound on a tiny pool where the reference
//! optimum is exhaustively computable: optimize the weights on every
//! non-empty candidate subset, take the best g as g*, measure smoothness
//! from the trace, and check g(ω^t) − g* ≤ (8L̂ + 4ε̂₁)/(t+3) per iteration.
//!
//! ```bash
//! cargo run --release --example bound_audit
//! ```

use u2a::bilevel::{optimize_on_support, CgConfig, OuterConfig, WeightVector};
use u2a::forget::InnerConfig;
use u2a::policy::train_mle;
use u2a::reward::{train_reward, ContextDistribution};
use u2a::selector::{check_suboptimality_bound, estimate_smoothness, run_u2a, U2aConfig};
use u2a::world::{generate, SyntheticWorldSpec};

fn main() -> u2a::Result<()> {
    let spec = SyntheticWorldSpec {
        seed: 9,
        vocab_size: 4,
        bad_tokens: vec![0],
        n_negatives: 4,
        n_train: 48,
        n_retain: 32,
        n_holdout: 16,
        len_min: 3,
        len_max: 6,
        ..SyntheticWorldSpec::default()
    };
    let world = generate(&spec)?;
    let theta_star = train_mle(world.vocab, &world.dataset.train, 2000, 0.5, spec.seed)?.params;
    let reward = train_reward(world.vocab, &world.prefs, 2000, 0.5, 1e-3, spec.seed)?;
    let rho = ContextDistribution::from_data(&world.dataset.retain, &world.vocab)?;

    let inner = InnerConfig {
        lambda: 2.0,
        inner_steps: 50_000,
        grad_tol: 1e-10,
        ..InnerConfig::default()
    };
    let outer = OuterConfig {
        beta: 0.02,
        outer_steps: 60,
        ..OuterConfig::default()
    };
    let cfg = U2aConfig {
        max_iters: 4,
        delta: 0.0,
        inner: inner.clone(),
        outer: outer.clone(),
        seed: spec.seed,
        ..U2aConfig::default()
    };

    // Exhaustive reference: optimize the weights on all 15 subsets.
    let n = world.dataset.negatives.len();
    let mut g_star = f64::INFINITY;
    let mut best_mask = 0usize;
    for mask in 1usize..(1 << n) {
        let mut omega = vec![0.0; n];
        let members = (0..n).filter(|i| mask & (1 << i) != 0).count();
        for i in 0..n {
            if mask & (1 << i) != 0 {
                omega[i] = 1.0 / members as f64;
            }
        }
        let w = WeightVector::from_omega(omega)?;
        let opt = optimize_on_support(
            &cfg.kind,
            &w,
            &world.dataset.negatives,
            &theta_star,
            None,
            &reward,
            &rho,
            &inner,
            &CgConfig::default(),
            &outer,
        )?;
        println!("subset {mask:04b}: optimized g = {:+.6}", opt.g);
        if opt.g < g_star {
            g_star = opt.g;
            best_mask = mask;
        }
    }
    println!("\nexhaustive best: subset {best_mask:04b} with g* = {g_star:+.6}");

    let run = run_u2a(&world.dataset, &theta_star, &reward, &rho, &cfg)?;
    println!(
        "greedy run: g_final = {:+.6} (gap to exhaustive {:+.2e})",
        run.g_final,
        run.g_final - g_star
    );

    let l_hat = estimate_smoothness(&run);
    let report = check_suboptimality_bound(&run, g_star, l_hat);
    println!("\nL̂ = {l_hat:.4}, ε̂₁ = {:.4}", report.epsilon1);
    println!("iter    g − g*        bound      ok");
    for c in &report.checks {
        println!(
            "{:>4}  {:>10.3e}  {:>10.3e}  {}",
            c.iter,
            c.lhs,
            c.rhs,
            if c.satisfied { "yes" } else { "NO" }
        );
    }
    println!(
        "\nall iterations within the bound: {} (max ratio {:.3})",
        report.all_satisfied, report.max_violation_ratio
    );
    Ok(())
}
