//! The implicit outer gradient against a finite-difference oracle: perturb
//! the weights along simplex tangents, re-solve the inner problem to high
//! precision on each side, and compare difference quotients of g with the
//! CG-based implicit gradient.
//!
//! ```bash
//! cargo run --release --example implicit_gradient
//! ```

use u2a::bilevel::{implicit_grad, outer_objective, CgConfig, WeightVector};
use u2a::forget::{inner_solve, ForgetLossKind, InnerConfig};
use u2a::policy::train_mle;
use u2a::reward::{train_reward, ContextDistribution};
use u2a::world::{generate, SyntheticWorldSpec};

fn main() -> u2a::Result<()> {
    let spec = SyntheticWorldSpec {
        seed: 8,
        n_negatives: 6,
        ..SyntheticWorldSpec::default()
    };
    let world = generate(&spec)?;
    let theta_star = train_mle(world.vocab, &world.dataset.train, 2000, 0.5, spec.seed)?.params;
    let reward = train_reward(world.vocab, &world.prefs, 2000, 0.5, 1e-3, spec.seed)?;
    let rho = ContextDistribution::from_data(&world.dataset.retain, &world.vocab)?;
    let kind = ForgetLossKind::Ga;
    let beta = 0.5;

    let inner = InnerConfig {
        lambda: 2.0,
        inner_steps: 200_000,
        inner_lr: 0.1,
        grad_tol: 1e-12,
        ..InnerConfig::default()
    };
    let cg = CgConfig {
        tol: 1e-12,
        max_iters: 500,
    };

    // An interior point on the simplex over three support atoms.
    let weights = WeightVector::from_omega(vec![0.5, 0.3, 0.2, 0.0, 0.0, 0.0])?;
    let solved = inner_solve(&kind, &weights, &world.dataset.negatives, &theta_star, None, &inner)?;

    let grad = implicit_grad(
        &kind,
        &weights,
        &solved.params,
        &world.dataset.negatives,
        &theta_star,
        &reward,
        &rho,
        &inner,
        &cg,
        beta,
    )?;
    let shown: Vec<String> = grad.iter().map(|g| format!("{g:+.6e}")).collect();
    println!(
        "implicit ∂g/∂ω over support {:?}: [{}]",
        weights.support(),
        shown.join(", ")
    );

    // Tangent directions e_i − e_j keep the perturbation on the simplex.
    let h = 1e-4;
    let g_at = |omega: Vec<f64>| -> u2a::Result<f64> {
        let w = WeightVector::from_omega(omega)?;
        let s = inner_solve(&kind, &w, &world.dataset.negatives, &theta_star, Some(&solved.params), &inner)?;
        Ok(outer_objective(&w, &s.params, &reward, &rho, beta))
    };
    println!("\npair   implicit diff    fd quotient      rel err");
    for (a, b) in [(0usize, 1usize), (1, 2), (0, 2)] {
        let mut plus = weights.omega().to_vec();
        plus[a] += h;
        plus[b] -= h;
        let mut minus = weights.omega().to_vec();
        minus[a] -= h;
        minus[b] += h;
        let fd = (g_at(plus)? - g_at(minus)?) / (2.0 * h);
        let implicit = grad[a] - grad[b];
        let rel = ((implicit - fd) / fd).abs();
        println!("({a},{b})  {implicit:>+13.6e}  {fd:>+13.6e}  {rel:.2e}");
    }
    Ok(())
}
