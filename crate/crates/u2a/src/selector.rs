//! Greedy construction of the unlearning set: pick the candidate whose
//! marginal gain most decreases the outer objective, re-project onto the
//! simplex, re-optimize the weights on the grown support, and stop early
//! when an addition stops paying.
//!
//! Each iteration ends after the support re-optimization, and the recorded
//! per-iteration g values form the series the early-stop test reads, so
//! replaying a trace reproduces the stop decision exactly.

use crate::bilevel::{
    adjoint_solve, optimize_on_support, outer_objective, simplex_project, AdjointState, CgConfig,
    OuterConfig, WeightVector, OMEGA_FLOOR,
};
use crate::config::seed_stream;
use crate::error::{Error, Result};
use crate::forget::{inner_solve, ForgetLossKind, InnerConfig};
use crate::policy::{Dataset, PolicyParams, TokenSeq};
use crate::reward::{pa_objective, ContextDistribution, RewardModel};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Which end of the marginal-gain ranking the greedy step takes.
///
/// `Min` adds the candidate with the most negative ∂g/∂ω data term (the
/// steepest decrease of g); `Max` keeps the literal argmax reading for
/// comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainSign {
    Min,
    Max,
}

/// Everything one greedy run needs.
#[derive(Debug, Clone)]
pub struct U2aConfig {
    pub max_iters: usize,
    pub delta: f64,
    pub kind: ForgetLossKind,
    pub inner: InnerConfig,
    pub cg: CgConfig,
    pub outer: OuterConfig,
    pub gain_sign: GainSign,
    pub seed: u64,
}

impl Default for U2aConfig {
    fn default() -> Self {
        U2aConfig {
            max_iters: 100,
            delta: 0.01,
            kind: ForgetLossKind::Ga,
            inner: InnerConfig::default(),
            cg: CgConfig::default(),
            outer: OuterConfig::default(),
            gain_sign: GainSign::Min,
            seed: 0,
        }
    }
}

impl U2aConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::InvalidConfig("delta must be >= 0".into()));
        }
        self.kind.validate()?;
        self.inner.validate()?;
        self.outer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStop,
    MaxIters,
    /// The candidate pool emptied before T and before the δ test fired.
    Exhausted,
}

/// One completed iteration of the greedy loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Outer objective after this iteration's support re-optimization.
    pub g: f64,
    /// Alignment objective J(θ*(ω)) at the same point.
    pub j: f64,
    /// Atom added at the start of this iteration (the seed atom for iter 1);
    /// absent when the pool was already exhausted.
    pub selected: Option<usize>,
    pub cg_iters: usize,
    pub damped: bool,
    pub inner_steps: usize,
    /// Wall time of the iteration; excluded from serialized run artifacts.
    #[serde(skip)]
    pub ms: u128,
    /// ω after the support re-optimization.
    pub omega: Vec<f64>,
    /// ∂g/∂ω snapshot over every candidate: data term everywhere, plus the
    /// β/(2√ω) term on support entries above the floor.
    pub grad: Vec<f64>,
}

/// Full account of one greedy run.
#[derive(Debug, Clone)]
pub struct U2aRun {
    /// Atoms in the order they entered the support.
    pub selected: Vec<usize>,
    pub weights: WeightVector,
    pub theta_final: PolicyParams,
    pub g_final: f64,
    pub j_final: f64,
    pub stop_reason: StopReason,
    pub trace: Vec<TraceRecord>,
}

/// Marginal-gain data terms `uᵀ∇ℓ_k` for every candidate outside the
/// support, as (candidate index, value) pairs in index order.
///
/// The sparsity term β/(2√ω_k) is omitted: it diverges at ω_k = 0 and
/// penalizes every new atom identically, so the data term is the only
/// finite, order-preserving ranking at the boundary.
#[allow(clippy::too_many_arguments)]
pub fn marginal_gains(
    kind: &ForgetLossKind,
    weights: &WeightVector,
    theta_opt: &PolicyParams,
    candidates: &[TokenSeq],
    theta_star: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
    inner_cfg: &InnerConfig,
    cg_cfg: &CgConfig,
) -> Result<Vec<(usize, f64)>> {
    let adjoint = adjoint_solve(
        kind, weights, theta_opt, candidates, theta_star, reward, rho, inner_cfg, cg_cfg,
    )?;
    gains_from_adjoint(&adjoint, kind, weights.support(), theta_opt, candidates, theta_star)
}

fn gains_from_adjoint(
    adjoint: &AdjointState,
    kind: &ForgetLossKind,
    support: &[usize],
    theta_opt: &PolicyParams,
    candidates: &[TokenSeq],
    theta_star: &PolicyParams,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for (k, candidate) in candidates.iter().enumerate() {
        if support.contains(&k) {
            continue;
        }
        let d = adjoint.data_term(kind, theta_opt, candidate, theta_star)?;
        out.push((k, d));
    }
    Ok(out)
}

/// Pick the next atom from (index, data term) pairs; `None` when the pool is
/// exhausted. Ties break toward the lowest index.
pub fn select_next(gains: &[(usize, f64)], sign: GainSign) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(k, d) in gains {
        let better = match best {
            None => true,
            Some((_, bd)) => match sign {
                GainSign::Min => d < bd,
                GainSign::Max => d > bd,
            },
        };
        if better {
            best = Some((k, d));
        }
    }
    best.map(|(k, _)| k)
}

struct IterationEnd {
    weights: WeightVector,
    theta: PolicyParams,
    g: f64,
    adjoint: AdjointState,
    grad_snapshot: Vec<f64>,
    cg_iters: usize,
    inner_steps: usize,
    damped: bool,
}

/// Full ∂g/∂ω snapshot: data term for every candidate, plus the sparsity
/// term on supported entries above the floor.
fn grad_snapshot(
    adjoint: &AdjointState,
    kind: &ForgetLossKind,
    weights: &WeightVector,
    theta_opt: &PolicyParams,
    candidates: &[TokenSeq],
    theta_star: &PolicyParams,
    beta: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(candidates.len());
    for (k, candidate) in candidates.iter().enumerate() {
        let mut v = adjoint.data_term(kind, theta_opt, candidate, theta_star)?;
        let w = weights.omega()[k];
        if w > OMEGA_FLOOR {
            v += 0.5 * beta / w.sqrt();
        }
        out.push(v);
    }
    Ok(out)
}

/// Run the greedy loop on `dataset.negatives`.
pub fn run_u2a(
    dataset: &Dataset,
    theta_star: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
    cfg: &U2aConfig,
) -> Result<U2aRun> {
    cfg.validate()?;
    let candidates = &dataset.negatives;
    if candidates.is_empty() {
        return Err(Error::InvalidInput(
            "u2a needs a non-empty candidate pool".into(),
        ));
    }
    let n = candidates.len();

    let mut rng = seed_stream(cfg.seed, "u2a-init");
    let init = rng.gen_range(0..n);

    let mut selected = vec![init];
    let mut weights = WeightVector::onehot(n, init)?;

    // Iteration 1: solve and measure the seed atom.
    let started = Instant::now();
    let solved = inner_solve(&cfg.kind, &weights, candidates, theta_star, None, &cfg.inner)?;
    let mut theta = solved.params;
    let mut g_cur = outer_objective(&weights, &theta, reward, rho, cfg.outer.beta);
    let adjoint = adjoint_solve(
        &cfg.kind, &weights, &theta, candidates, theta_star, reward, rho, &cfg.inner, &cfg.cg,
    )?;
    let snapshot = grad_snapshot(
        &adjoint, &cfg.kind, &weights, &theta, candidates, theta_star, cfg.outer.beta,
    )?;
    let mut trace = vec![TraceRecord {
        iter: 1,
        g: g_cur,
        j: pa_objective(&theta, reward, rho),
        selected: Some(init),
        cg_iters: adjoint.cg_iters,
        damped: adjoint.damped,
        inner_steps: solved.steps,
        ms: started.elapsed().as_millis(),
        omega: weights.omega().to_vec(),
        grad: snapshot,
    }];
    let mut last_adjoint = adjoint;

    let mut stop_reason = StopReason::MaxIters;

    for t in 2..=cfg.max_iters {
        let started = Instant::now();

        // Select from the previous iteration's adjoint solve; the pool
        // excludes every managed atom, floored ones included.
        let gains = gains_from_adjoint(
            &last_adjoint,
            &cfg.kind,
            &selected,
            &theta,
            candidates,
            theta_star,
        )?;
        let Some(k_star) = select_next(&gains, cfg.gain_sign) else {
            stop_reason = StopReason::Exhausted;
            break;
        };
        selected.push(k_star);

        // Strong initialization of the new atom, then restore feasibility by
        // projecting the whole vector; managed atoms keep at least the floor.
        let mut stepped = weights.omega().to_vec();
        stepped[k_star] = 1.0;
        let projected = simplex_project(&stepped);
        let mut omega = vec![0.0; n];
        for &i in &selected {
            omega[i] = projected.omega()[i].max(OMEGA_FLOOR);
        }
        weights = WeightVector::from_omega(omega)?;

        let end = end_iteration(
            &weights, &theta, g_cur, &trace, candidates, theta_star, reward, rho, cfg,
        )?;
        weights = end.weights;
        theta = end.theta;
        let g_new = end.g;
        last_adjoint = end.adjoint;

        trace.push(TraceRecord {
            iter: t,
            g: g_new,
            j: pa_objective(&theta, reward, rho),
            selected: Some(k_star),
            cg_iters: end.cg_iters,
            damped: end.damped,
            inner_steps: end.inner_steps,
            ms: started.elapsed().as_millis(),
            omega: weights.omega().to_vec(),
            grad: end.grad_snapshot,
        });

        let improvement = g_cur - g_new;
        g_cur = g_new;
        if improvement <= cfg.delta {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }

    // Final re-optimization: drop atoms at or below the floor, renormalize,
    // optimize the surviving support.
    let mut omega: Vec<f64> = weights
        .omega()
        .iter()
        .map(|&w| if w > OMEGA_FLOOR { w } else { 0.0 })
        .collect();
    let mass: f64 = omega.iter().sum();
    for w in &mut omega {
        *w /= mass;
    }
    let trimmed = WeightVector::from_omega(omega)?;
    let final_opt = optimize_on_support(
        &cfg.kind,
        &trimmed,
        candidates,
        theta_star,
        Some(&theta),
        reward,
        rho,
        &cfg.inner,
        &cfg.cg,
        &cfg.outer,
    )?;

    let run = U2aRun {
        selected,
        g_final: final_opt.g,
        j_final: pa_objective(&final_opt.params, reward, rho),
        weights: final_opt.weights,
        theta_final: final_opt.params,
        stop_reason,
        trace,
    };
    debug_assert!(run.weights.is_simplex(1e-10));
    Ok(run)
}

/// Re-optimize the grown support and take the end-of-iteration measurements.
/// If the projected restart lands above the previous optimum, redo the
/// optimization from the previous optimum with the new atom floored and keep
/// the better outcome, so the recorded g series never increases.
#[allow(clippy::too_many_arguments)]
fn end_iteration(
    weights: &WeightVector,
    warm: &PolicyParams,
    g_prev: f64,
    trace: &[TraceRecord],
    candidates: &[TokenSeq],
    theta_star: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
    cfg: &U2aConfig,
) -> Result<IterationEnd> {
    let mut opt = optimize_on_support(
        &cfg.kind,
        weights,
        candidates,
        theta_star,
        Some(warm),
        reward,
        rho,
        &cfg.inner,
        &cfg.cg,
        &cfg.outer,
    )?;
    let mut cg_iters = opt.cg_iters;
    let mut inner_steps = opt.inner_steps;
    let mut damped = opt.damped;

    if opt.g > g_prev {
        let prev_omega = &trace.last().expect("trace non-empty").omega;
        let mut fallback = prev_omega.clone();
        for (i, w) in fallback.iter_mut().enumerate() {
            if weights.omega()[i] > 0.0 && *w < OMEGA_FLOOR {
                *w = OMEGA_FLOOR;
            }
        }
        let fallback = WeightVector::from_omega(fallback)?;
        let retry = optimize_on_support(
            &cfg.kind,
            &fallback,
            candidates,
            theta_star,
            Some(warm),
            reward,
            rho,
            &cfg.inner,
            &cfg.cg,
            &cfg.outer,
        )?;
        cg_iters += retry.cg_iters;
        inner_steps += retry.inner_steps;
        damped |= retry.damped;
        if retry.g < opt.g {
            opt = retry;
        }
    }

    let adjoint = adjoint_solve(
        &cfg.kind,
        &opt.weights,
        &opt.params,
        candidates,
        theta_star,
        reward,
        rho,
        &cfg.inner,
        &cfg.cg,
    )?;
    cg_iters += adjoint.cg_iters;
    damped |= adjoint.damped;
    let snapshot = grad_snapshot(
        &adjoint,
        &cfg.kind,
        &opt.weights,
        &opt.params,
        candidates,
        theta_star,
        cfg.outer.beta,
    )?;

    Ok(IterationEnd {
        weights: opt.weights,
        theta: opt.params,
        g: opt.g,
        adjoint,
        grad_snapshot: snapshot,
        cg_iters,
        inner_steps,
        damped,
    })
}

/// Numerical smoothness estimate L̂ from a run's trace: the largest observed
/// ‖∇g_t − ∇g_{t−1}‖ / ‖ω_t − ω_{t−1}‖ over consecutive iterations.
pub fn estimate_smoothness(run: &U2aRun) -> f64 {
    let mut l_hat = 0.0f64;
    for pair in run.trace.windows(2) {
        let d_omega: f64 = pair[0]
            .omega
            .iter()
            .zip(&pair[1].omega)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if d_omega < 1e-12 {
            continue;
        }
        let d_grad: f64 = pair[0]
            .grad
            .iter()
            .zip(&pair[1].grad)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        l_hat = l_hat.max(d_grad / d_omega);
    }
    l_hat
}

/// One iteration of the suboptimality audit.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub iter: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Audit report for the O(1/t) suboptimality bound
/// g(ω^{t,*}) − g* ≤ (8L̂ + 4ε̂₁)/(t+3).
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub epsilon1: f64,
    pub l_hat: f64,
    pub g_star: f64,
    pub checks: Vec<BoundCheck>,
    pub max_violation_ratio: f64,
    pub all_satisfied: bool,
}

/// Check every trace iteration against the measured O(1/t) bound.
/// `g_star` comes from an exhaustive or long-run reference; `l_hat` is a
/// numerical smoothness estimate (see [`estimate_smoothness`]).
pub fn check_suboptimality_bound(run: &U2aRun, g_star: f64, l_hat: f64) -> BoundReport {
    let epsilon1 = run.trace.first().map(|r| r.g - g_star).unwrap_or(0.0);
    let mut checks = Vec::with_capacity(run.trace.len());
    let mut max_ratio = 0.0f64;
    for rec in &run.trace {
        let lhs = rec.g - g_star;
        let rhs = (8.0 * l_hat + 4.0 * epsilon1) / (rec.iter as f64 + 3.0);
        let satisfied = lhs <= rhs + 1e-12;
        if rhs > 0.0 {
            max_ratio = max_ratio.max(lhs / rhs);
        }
        checks.push(BoundCheck {
            iter: rec.iter,
            lhs,
            rhs,
            satisfied,
        });
    }
    BoundReport {
        epsilon1,
        l_hat,
        g_star,
        all_satisfied: checks.iter().all(|c| c.satisfied),
        max_violation_ratio: max_ratio,
        checks,
    }
}
