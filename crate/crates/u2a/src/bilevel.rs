//! Bi-level machinery: simplex projection, conjugate-gradient solves against
//! the inner Hessian, the implicit outer gradient, and projected gradient
//! descent restricted to a fixed support.
//!
//! The outer objective is `g(ω) = −J(θ*(ω)) + β Σ √ω_i` over the n-simplex;
//! its gradient threads through the inner optimum via one CG solve
//! `u = H⁻¹ ∇J`, after which every coordinate is a dot product `uᵀ∇ℓ_i`.

use crate::error::{Error, Result};
use crate::forget::{
    forget_curvature_bound, forget_grad, inner_grad, inner_hvp, inner_solve, ForgetLossKind,
    InnerConfig,
};
use crate::math::{all_finite, dot, norm2};
use crate::policy::{PolicyParams, TokenSeq};
use crate::reward::{pa_grad, pa_objective, ContextDistribution, RewardModel};

/// Weights at or below this floor are treated as zero by the outer
/// objective and are dropped from the support at the final re-optimization.
pub const OMEGA_FLOOR: f64 = 1e-12;

/// Largest inner-gradient norm accepted as "θ is an inner optimum".
pub const STALE_TOL: f64 = 1e-6;

/// Nonnegative per-candidate unlearning weights with an explicit support.
///
/// Simplex membership (Σω = 1) is required of algorithm iterates and of
/// `simplex_project` outputs, not of every vector: the inner problem is also
/// evaluated at sub-simplex masses (single-sample impact probes use small
/// scalar weights).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    omega: Vec<f64>,
    support: Vec<usize>,
}

impl WeightVector {
    pub fn from_omega(omega: Vec<f64>) -> Result<Self> {
        if omega.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let support = omega
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
            .collect();
        Ok(WeightVector { omega, support })
    }

    /// Skips validation; used by tests exercising the error paths.
    #[cfg(test)]
    pub(crate) fn from_omega_unchecked(omega: Vec<f64>) -> Self {
        let support = omega
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
            .collect();
        WeightVector { omega, support }
    }

    pub fn zeros(n: usize) -> Self {
        WeightVector {
            omega: vec![0.0; n],
            support: vec![],
        }
    }

    pub fn onehot(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::InvalidInput(format!(
                "onehot index {index} out of range for {n} candidates"
            )));
        }
        let mut omega = vec![0.0; n];
        omega[index] = 1.0;
        Ok(WeightVector {
            omega,
            support: vec![index],
        })
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn sum(&self) -> f64 {
        self.omega.iter().sum()
    }

    pub fn is_simplex(&self, tol: f64) -> bool {
        self.omega.iter().all(|&w| w >= 0.0) && (self.sum() - 1.0).abs() <= tol
    }

}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
///
/// The output satisfies the KKT form `out_i = max(v_i − τ, 0)` with
/// `Σ out = 1`.
pub fn simplex_project(v: &[f64]) -> WeightVector {
    let n = v.len();
    assert!(n > 0, "cannot project an empty vector");
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    let mut found = false;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
            found = true;
        } else {
            break;
        }
    }
    if !found {
        // All entries equal (or pathological input): fall back to uniform.
        return WeightVector::from_omega(vec![1.0 / n as f64; n]).unwrap();
    }
    let omega: Vec<f64> = v.iter().map(|&x| (x - tau).max(0.0)).collect();
    WeightVector::from_omega(omega).unwrap()
}

/// CG solver configuration. `tol` is relative to ‖b‖.
#[derive(Debug, Clone)]
pub struct CgConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            tol: 1e-8,
            max_iters: 200,
        }
    }
}

/// Diagonal damping applied to the Hessian inside CG only.
///
/// `initial_mu > 0` means the positive-definiteness guard already fired;
/// `restart_mu` is used if non-positive curvature shows up mid-solve.
#[derive(Debug, Clone, Copy)]
pub struct DampingPolicy {
    pub initial_mu: f64,
    pub restart_mu: f64,
}

impl DampingPolicy {
    pub fn none() -> Self {
        DampingPolicy {
            initial_mu: 0.0,
            restart_mu: 0.1,
        }
    }

    /// Guard from a measured curvature bound B of −Σω_i∇²ℓ_i: damp upfront
    /// when 2λ ≤ B so the damped Hessian has eigenvalues ≥ 0.1.
    pub fn from_curvature_bound(curvature_bound: f64, lambda: f64) -> Self {
        let gap = curvature_bound - 2.0 * lambda;
        DampingPolicy {
            initial_mu: if gap >= 0.0 { gap + 0.1 } else { 0.0 },
            restart_mu: gap.max(0.0) + 0.1,
        }
    }
}

/// Outcome of a CG solve, with the residual recomputed explicitly.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iters: usize,
    pub residual_norm: f64,
    pub damped: bool,
    pub mu: f64,
}

/// Conjugate gradient on `(H + μI) x = b` for a symmetric operator `H`
/// supplied as a matrix-vector closure.
///
/// On non-positive curvature the damping policy is applied and the solve
/// restarts once. Success implies ‖(H+μI)x − b‖ ≤ tol·‖b‖, verified on the
/// actual operator rather than the recurrence.
pub fn cg_solve(
    apply_h: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    cfg: &CgConfig,
    damping: &DampingPolicy,
) -> Result<CgOutcome> {
    if cfg.tol <= 0.0 {
        return Err(Error::InvalidConfig("cg tol must be positive".into()));
    }
    if !all_finite(b) {
        return Err(Error::InvalidInput("non-finite rhs in cg_solve".into()));
    }
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x: vec![0.0; b.len()],
            iters: 0,
            residual_norm: 0.0,
            damped: damping.initial_mu > 0.0,
            mu: damping.initial_mu,
        });
    }
    let target = cfg.tol * b_norm;

    let mut mu = damping.initial_mu;
    let mut restarted = false;
    let mut total_iters = 0usize;

    'attempt: loop {
        let apply = |x: &[f64]| -> Result<Vec<f64>> {
            let mut hx = apply_h(x)?;
            if mu != 0.0 {
                for (h, xi) in hx.iter_mut().zip(x) {
                    *h += mu * xi;
                }
            }
            Ok(hx)
        };

        let mut x = vec![0.0; b.len()];
        let mut r = b.to_vec();
        let mut p = r.clone();
        let mut rs = dot(&r, &r);

        while total_iters < cfg.max_iters {
            let ap = apply(&p)?;
            let p_ap = dot(&p, &ap);
            total_iters += 1;
            if p_ap <= 0.0 {
                if restarted || mu > 0.0 {
                    return Err(Error::CgNoConvergence {
                        residual: rs.sqrt(),
                        iters: total_iters,
                    });
                }
                mu = damping.restart_mu;
                restarted = true;
                continue 'attempt;
            }
            let alpha = rs / p_ap;
            for i in 0..x.len() {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rs_new = dot(&r, &r);
            if rs_new.sqrt() <= target {
                // Verify the contract on the real operator, not the recurrence.
                let hx = apply(&x)?;
                let true_residual: f64 = hx
                    .iter()
                    .zip(b)
                    .map(|(a, bi)| (a - bi) * (a - bi))
                    .sum::<f64>()
                    .sqrt();
                if true_residual <= target {
                    return Ok(CgOutcome {
                        x,
                        iters: total_iters,
                        residual_norm: true_residual,
                        damped: mu > 0.0,
                        mu,
                    });
                }
                // Recurrence drifted; keep iterating with the true residual.
                r = b.iter().zip(&hx).map(|(bi, h)| bi - h).collect();
                p = r.clone();
                rs = dot(&r, &r);
                continue;
            }
            let beta = rs_new / rs;
            for i in 0..p.len() {
                p[i] = r[i] + beta * p[i];
            }
            rs = rs_new;
        }
        return Err(Error::CgNoConvergence {
            residual: rs.sqrt(),
            iters: total_iters,
        });
    }
}

/// Sparsity weight and solver knobs for the outer problem.
#[derive(Debug, Clone)]
pub struct OuterConfig {
    pub beta: f64,
    pub outer_lr: f64,
    pub outer_steps: usize,
    pub omega_floor: f64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        OuterConfig {
            beta: 0.5,
            outer_lr: 3e-2,
            outer_steps: 30,
            omega_floor: OMEGA_FLOOR,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::InvalidConfig("beta must be >= 0".into()));
        }
        if self.outer_lr <= 0.0 {
            return Err(Error::InvalidConfig("outer_lr must be positive".into()));
        }
        if self.omega_floor <= 0.0 {
            return Err(Error::InvalidConfig("omega_floor must be positive".into()));
        }
        Ok(())
    }
}

/// g(ω) = −J(θ*(ω)) + β Σ √ω_i, with entries at or below the floor
/// contributing nothing to the sparsity term.
///
/// `theta_opt` must be an inner optimum for `weights`; callers that cannot
/// guarantee it go through `adjoint_solve`, which checks.
pub fn outer_objective(
    weights: &WeightVector,
    theta_opt: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
    beta: f64,
) -> f64 {
    let sqrt_sum: f64 = weights
        .omega()
        .iter()
        .filter(|&&w| w > OMEGA_FLOOR)
        .map(|&w| w.sqrt())
        .sum();
    -pa_objective(theta_opt, reward, rho) + beta * sqrt_sum
}

/// The single CG solve behind one outer-gradient evaluation:
/// `u = (H + μI)⁻¹ ∇J(θ*(ω))` plus the measurements made on the way.
#[derive(Debug, Clone)]
pub struct AdjointState {
    pub u: Vec<f64>,
    pub grad_j: Vec<f64>,
    pub cg_iters: usize,
    pub damped: bool,
    pub mu: f64,
    pub curvature_bound: f64,
}

/// Solve the adjoint system at a verified inner optimum.
#[allow(clippy::too_many_arguments)]
pub fn adjoint_solve(
    kind: &ForgetLossKind,
    weights: &WeightVector,
    theta_opt: &PolicyParams,
    candidates: &[TokenSeq],
    theta_star: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
    inner_cfg: &InnerConfig,
    cg_cfg: &CgConfig,
) -> Result<AdjointState> {
    let g_inner = inner_grad(kind, weights, theta_opt, candidates, theta_star, inner_cfg)?;
    let g_norm = norm2(&g_inner);
    if g_norm >= STALE_TOL {
        return Err(Error::StalePoint(format!(
            "inner gradient norm {g_norm:.3e} exceeds {STALE_TOL:.0e}"
        )));
    }
    let grad_j = pa_grad(theta_opt, reward, rho);
    let bound = forget_curvature_bound(kind, weights, theta_opt, candidates, theta_star, inner_cfg)?;
    let damping = DampingPolicy::from_curvature_bound(bound, inner_cfg.lambda);
    let apply = |x: &[f64]| -> Result<Vec<f64>> {
        inner_hvp(kind, weights, theta_opt, candidates, theta_star, x, inner_cfg)
    };
    let outcome = cg_solve(&apply, &grad_j, cg_cfg, &damping)?;
    Ok(AdjointState {
        u: outcome.x,
        grad_j,
        cg_iters: outcome.iters,
        damped: outcome.damped,
        mu: outcome.mu,
        curvature_bound: bound,
    })
}

impl AdjointState {
    /// Data term of ∂g/∂ω_k: `uᵀ ∇ℓ_k(θ*(ω))`.
    pub fn data_term(
        &self,
        kind: &ForgetLossKind,
        theta_opt: &PolicyParams,
        candidate: &TokenSeq,
        theta_star: &PolicyParams,
    ) -> Result<f64> {
        let g = forget_grad(kind, theta_opt, candidate, theta_star)?;
        Ok(dot(&self.u, &g))
    }
}

/// ∂g/∂ω_i for every support coordinate, in support order: the data term
/// plus the sparsity term β/(2√ω_i), weights clamped to the floor.
#[allow(clippy::too_many_arguments)]
pub fn implicit_grad(
    kind: &ForgetLossKind,
    weights: &WeightVector,
    theta_opt: &PolicyParams,
    candidates: &[TokenSeq],
    theta_star: &PolicyParams,
    reward: &RewardModel,
    rho: &ContextDistribution,
    inner_cfg: &InnerConfig,
    cg_cfg: &CgConfig,
    beta: f64,
) -> Result<Vec<f64>> {
    let adjoint = adjoint_solve(
        kind, weights, theta_opt, candidates, theta_star, reward, rho, inner_cfg, cg_cfg,
    )?;
    support_grad(&adjoint, kind, weights, theta_opt, candidates, theta_star, beta)
}

/// Support-coordinate gradient from an existing adjoint solve.
pub fn support_grad(
    adjoint: &AdjointState,
    kind: &ForgetLossKind,
    weights: &WeightVector,
    theta_opt: &PolicyParams,
    candidates: &[TokenSeq],
    theta_star: &PolicyParams,
    beta: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(weights.support().len());
    for &i in weights.support() {
        let data = adjoint.data_term(kind, theta_opt, &candidates[i], theta_star)?;
        let w = weights.omega()[i].max(OMEGA_FLOOR);
        out.push(data + 0.5 * beta / w.sqrt());
    }
    Ok(out)
}

/// Result of support-restricted projected gradient descent.
#[derive(Debug, Clone)]
pub struct SupportOpt {
    pub weights: WeightVector,
    pub params: PolicyParams,
    pub g: f64,
    pub inner_steps: usize,
    pub cg_iters: usize,
    pub damped: bool,
}

/// Projected gradient descent on g restricted to the support of `weights`:
/// step along −∂g/∂ω on the support coordinates, project back onto the
/// support simplex, clamp support entries to the floor, re-solve the inner
/// problem, and keep the best iterate seen (the input included), so the
/// returned g never exceeds the input's.
#[allow(clippy::too_many_arguments)]
pub fn optimize_on_support(
    kind: &ForgetLossKind,
    weights: &WeightVector,
    candidates: &[TokenSeq],
    theta_star: &PolicyParams,
    warm: Option<&PolicyParams>,
    reward: &RewardModel,
    rho: &ContextDistribution,
    inner_cfg: &InnerConfig,
    cg_cfg: &CgConfig,
    outer_cfg: &OuterConfig,
) -> Result<SupportOpt> {
    outer_cfg.validate()?;
    let support: Vec<usize> = weights.support().to_vec();
    if support.is_empty() {
        return Err(Error::InvalidInput(
            "optimize_on_support needs a non-empty support".into(),
        ));
    }

    let mut inner_steps = 0usize;
    let mut cg_iters = 0usize;
    let mut damped = false;

    let solved = inner_solve(kind, weights, candidates, theta_star, warm, inner_cfg)?;
    inner_steps += solved.steps;
    let mut cur_w = weights.clone();
    let mut cur_theta = solved.params;
    let mut cur_g = outer_objective(&cur_w, &cur_theta, reward, rho, outer_cfg.beta);

    let mut best = SupportOpt {
        weights: cur_w.clone(),
        params: cur_theta.clone(),
        g: cur_g,
        inner_steps,
        cg_iters,
        damped,
    };

    // A singleton support has a zero-dimensional feasible simplex.
    if support.len() == 1 {
        return Ok(best);
    }

    // The step size adapts: growth on accepted moves lets the iterate cross
    // flat valleys of the data term within the step budget, halving on
    // rejection keeps every accepted move a descent step.
    let mut lr = outer_cfg.outer_lr;
    let lr_cap = outer_cfg.outer_lr * 1e4;
    let floor = outer_cfg.omega_floor;

    for _ in 0..outer_cfg.outer_steps {
        let adjoint = adjoint_solve(
            kind, &cur_w, &cur_theta, candidates, theta_star, reward, rho, inner_cfg, cg_cfg,
        )?;
        cg_iters += adjoint.cg_iters;
        damped |= adjoint.damped;
        let grad = support_grad(
            &adjoint,
            kind,
            &cur_w,
            &cur_theta,
            candidates,
            theta_star,
            outer_cfg.beta,
        )?;

        let mut accepted = false;
        for _ in 0..8 {
            let stepped: Vec<f64> = support
                .iter()
                .enumerate()
                .map(|(s, &i)| cur_w.omega()[i] - lr * grad[s])
                .collect();
            let projected = simplex_project(&stepped);
            let mut omega = vec![0.0; cur_w.len()];
            for (s, &i) in support.iter().enumerate() {
                omega[i] = projected.omega()[s].max(floor);
            }
            let trial_w = WeightVector::from_omega(omega)?;

            let moved: f64 = support
                .iter()
                .map(|&i| (trial_w.omega()[i] - cur_w.omega()[i]).abs())
                .sum();
            if moved < 1e-15 {
                // Projection returned the current point; nothing to do.
                accepted = false;
                break;
            }

            let trial_solve =
                inner_solve(kind, &trial_w, candidates, theta_star, Some(&cur_theta), inner_cfg)?;
            inner_steps += trial_solve.steps;
            let trial_g =
                outer_objective(&trial_w, &trial_solve.params, reward, rho, outer_cfg.beta);

            if trial_g <= cur_g {
                cur_w = trial_w;
                cur_theta = trial_solve.params;
                cur_g = trial_g;
                accepted = true;
                lr = (lr * 1.5).min(lr_cap);
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            break;
        }
        if cur_g < best.g {
            best.weights = cur_w.clone();
            best.params = cur_theta.clone();
            best.g = cur_g;
        }
    }

    best.inner_steps = inner_steps;
    best.cg_iters = cg_iters;
    best.damped = damped;
    debug_assert!(best.weights.is_simplex(1e-10));
    Ok(best)
}
