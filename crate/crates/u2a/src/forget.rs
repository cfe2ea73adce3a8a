//! Per-sample unlearning losses (gradient-ascent, retain-regularized
//! gradient-ascent, negative preference optimization), the shared parameter
//! regularizer, and the weighted inner problem
//! `f(θ, ω) = Σ_i ω_i ℓ_i(θ) + λ‖θ − θ*‖²` with exact gradients and
//! Hessian-vector products.

use crate::bilevel::WeightVector;
use crate::error::{Error, Result};
use crate::math::{all_finite, norm2, sigmoid, softplus};
use crate::policy::{nll_grad, nll_loss, PolicyParams, TokenSeq};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Which per-sample unlearning loss drives the inner problem.
#[derive(Debug, Clone)]
pub enum ForgetLossKind {
    /// ℓ = Σ_t log p(x_t | ·; θ); minimizing it is gradient ascent on the
    /// sample's NLL.
    Ga,
    /// Gradient ascent plus a retain-split NLL term folded into each sample
    /// so the weighted sum keeps the `Σ ω_i ℓ_i` shape.
    GradDiff {
        lambda_r: f64,
        retain: Vec<TokenSeq>,
    },
    /// ℓ = −(2/β)·log σ(−β(L_θ − L_ref)) with L the sample's total
    /// log-likelihood and L_ref its value at θ*.
    Npo { beta: f64 },
}

impl ForgetLossKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            ForgetLossKind::Ga => Ok(()),
            ForgetLossKind::GradDiff { lambda_r, retain } => {
                if *lambda_r < 0.0 || !lambda_r.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "graddiff retain coefficient must be >= 0, got {lambda_r}"
                    )));
                }
                if *lambda_r > 0.0 && retain.is_empty() {
                    return Err(Error::InvalidConfig(
                        "graddiff with lambda_r > 0 needs a non-empty retain split".into(),
                    ));
                }
                Ok(())
            }
            ForgetLossKind::Npo { beta } => {
                if *beta <= 0.0 || !beta.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "npo beta must be positive, got {beta}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ForgetLossKind::Ga => "ga",
            ForgetLossKind::GradDiff { .. } => "graddiff",
            ForgetLossKind::Npo { .. } => "npo",
        }
    }
}

/// How `inner_hvp` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HvpMode {
    Analytic,
    FiniteDifference,
}

/// Inner-problem configuration: regularization strength and solver knobs.
#[derive(Debug, Clone)]
pub struct InnerConfig {
    pub lambda: f64,
    pub inner_steps: usize,
    pub inner_lr: f64,
    /// Gradient-norm stopping threshold for `inner_solve`.
    pub grad_tol: f64,
    pub hvp_mode: HvpMode,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            lambda: 1.0,
            inner_steps: 2000,
            inner_lr: 0.1,
            grad_tol: 1e-8,
            hvp_mode: HvpMode::Analytic,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.inner_steps == 0 {
            return Err(Error::InvalidConfig("inner_steps must be >= 1".into()));
        }
        if self.inner_lr <= 0.0 {
            return Err(Error::InvalidConfig("inner_lr must be positive".into()));
        }
        if self.grad_tol < 0.0 {
            return Err(Error::InvalidConfig("grad_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Total log-likelihood of one sample, Σ_t log p(x_t | ·; θ).
fn sample_loglik(params: &PolicyParams, sample: &TokenSeq) -> f64 {
    let vocab = params.vocab();
    sample
        .pairs(&vocab)
        .map(|(c, x)| params.log_prob(c, x))
        .sum()
}

/// out += scale · ∇_θ Σ_t log p for one sample.
fn ga_grad_accum(params: &PolicyParams, sample: &TokenSeq, scale: f64, out: &mut [f64]) {
    let vocab = params.vocab();
    let v = vocab.size();
    for (c, x) in sample.pairs(&vocab) {
        let p = params.softmax_row(c);
        let row = &mut out[c * v..(c + 1) * v];
        for j in 0..v {
            row[j] -= scale * p[j];
        }
        row[x] += scale;
    }
}

/// out += scale · (∇² Σ_t log p)·vec for one sample. Each (context, target)
/// pair contributes −(diag(π) − ππᵀ) on its context row block.
fn ga_hvp_accum(params: &PolicyParams, sample: &TokenSeq, scale: f64, vec: &[f64], out: &mut [f64]) {
    let vocab = params.vocab();
    let v = vocab.size();
    for (c, _) in sample.pairs(&vocab) {
        let p = params.softmax_row(c);
        let v_row = &vec[c * v..(c + 1) * v];
        let mut dotv = 0.0;
        for j in 0..v {
            dotv += p[j] * v_row[j];
        }
        let row = &mut out[c * v..(c + 1) * v];
        for j in 0..v {
            row[j] += scale * p[j] * (dotv - v_row[j]);
        }
    }
}

/// out += scale · (∇² nll_loss(retain))·vec, the positive-semidefinite mirror
/// of the GA blocks, averaged over retain sequences.
fn nll_hvp_accum(params: &PolicyParams, retain: &[TokenSeq], scale: f64, vec: &[f64], out: &mut [f64]) {
    let vocab = params.vocab();
    let v = vocab.size();
    let inv = scale / retain.len() as f64;
    for seq in retain {
        for (c, _) in seq.pairs(&vocab) {
            let p = params.softmax_row(c);
            let v_row = &vec[c * v..(c + 1) * v];
            let mut dotv = 0.0;
            for j in 0..v {
                dotv += p[j] * v_row[j];
            }
            let row = &mut out[c * v..(c + 1) * v];
            for j in 0..v {
                row[j] += inv * p[j] * (v_row[j] - dotv);
            }
        }
    }
}

/// NPO sigmoid weight s = σ(β(L_θ − L_ref)) for one sample.
fn npo_weight(beta: f64, l_theta: f64, l_ref: f64) -> f64 {
    sigmoid(beta * (l_theta - l_ref))
}

/// Value of the per-sample forget loss at `params`.
pub fn forget_loss(
    kind: &ForgetLossKind,
    params: &PolicyParams,
    sample: &TokenSeq,
    theta_star: &PolicyParams,
) -> Result<f64> {
    kind.validate()?;
    let l_theta = sample_loglik(params, sample);
    match kind {
        ForgetLossKind::Ga => Ok(l_theta),
        ForgetLossKind::GradDiff { lambda_r, retain } => {
            let reg = if *lambda_r > 0.0 {
                lambda_r * nll_loss(params, retain)?
            } else {
                0.0
            };
            Ok(l_theta + reg)
        }
        ForgetLossKind::Npo { beta } => {
            let l_ref = sample_loglik(theta_star, sample);
            Ok((2.0 / beta) * softplus(beta * (l_theta - l_ref)))
        }
    }
}

/// Exact gradient of `forget_loss` with respect to θ.
pub fn forget_grad(
    kind: &ForgetLossKind,
    params: &PolicyParams,
    sample: &TokenSeq,
    theta_star: &PolicyParams,
) -> Result<Vec<f64>> {
    kind.validate()?;
    let mut out = vec![0.0; params.dim()];
    match kind {
        ForgetLossKind::Ga => ga_grad_accum(params, sample, 1.0, &mut out),
        ForgetLossKind::GradDiff { lambda_r, retain } => {
            ga_grad_accum(params, sample, 1.0, &mut out);
            if *lambda_r > 0.0 {
                let g = nll_grad(params, retain)?;
                for (o, gi) in out.iter_mut().zip(&g) {
                    *o += lambda_r * gi;
                }
            }
        }
        ForgetLossKind::Npo { beta } => {
            let l_theta = sample_loglik(params, sample);
            let l_ref = sample_loglik(theta_star, sample);
            let s = npo_weight(*beta, l_theta, l_ref);
            ga_grad_accum(params, sample, 2.0 * s, &mut out);
        }
    }
    Ok(out)
}

/// ‖θ − θ*‖², the parameter regularizer.
pub fn reg_loss(params: &PolicyParams, theta_star: &PolicyParams) -> Result<f64> {
    if params.dim() != theta_star.dim() {
        return Err(Error::InvalidInput("parameter shape mismatch".into()));
    }
    let mut total = 0.0;
    for (a, b) in params.as_flat().iter().zip(theta_star.as_flat()) {
        let d = a - b;
        total += d * d;
    }
    Ok(total)
}

/// 2(θ − θ*).
pub fn reg_grad(params: &PolicyParams, theta_star: &PolicyParams) -> Result<Vec<f64>> {
    if params.dim() != theta_star.dim() {
        return Err(Error::InvalidInput("parameter shape mismatch".into()));
    }
    Ok(params
        .as_flat()
        .iter()
        .zip(theta_star.as_flat())
        .map(|(a, b)| 2.0 * (a - b))
        .collect())
}

fn check_weights(weights: &WeightVector, candidates: &[TokenSeq]) -> Result<()> {
    if weights.len() != candidates.len() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} candidates",
            weights.len(),
            candidates.len()
        )));
    }
    if weights.omega().iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidInput("negative or non-finite weight".into()));
    }
    Ok(())
}

/// f(θ, ω) = Σ_i ω_i ℓ_i(θ) + λ‖θ − θ*‖².
pub fn inner_objective(
    kind: &ForgetLossKind,
    weights: &WeightVector,
    params: &PolicyParams,
    candidates: &[TokenSeq],
    theta_star: &PolicyParams,
    cfg: &InnerConfig,
) -> Result<f64> {
    cfg.validate()?;
    check_weights(weights, candidates)?;
    let mut f = cfg.lambda * reg_loss(params, theta_star)?;
    for (&w, sample) in weights.omega().iter().zip(candidates) {
        if w == 0.0 {
            continue;
        }
        f += w * forget_loss(kind, params, sample, theta_star)?;
    }
    Ok(f)
}

/// ∇_θ f(θ, ω), assembled sample by sample in index order.
pub fn inner_grad(
    kind: &ForgetLossKind,
    weights: &WeightVector,
    params: &PolicyParams,
    candidates: &[TokenSeq],
    theta_star: &PolicyParams,
    cfg: &InnerConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    kind.validate()?;
    check_weights(weights, candidates)?;
    let mut out = vec![0.0; params.dim()];
    let mut weight_mass = 0.0;
    for (&w, sample) in weights.omega().iter().zip(candidates) {
        if w == 0.0 {
            continue;
        }
        weight_mass += w;
        match kind {
            ForgetLossKind::Ga | ForgetLossKind::GradDiff { .. } => {
                ga_grad_accum(params, sample, w, &mut out);
            }
            ForgetLossKind::Npo { beta } => {
                let l_theta = sample_loglik(params, sample);
                let l_ref = sample_loglik(theta_star, sample);
                let s = npo_weight(*beta, l_theta, l_ref);
                ga_grad_accum(params, sample, 2.0 * s * w, &mut out);
            }
        }
    }
    // GradDiff's retain term appears once per unit of total weight.
    if let ForgetLossKind::GradDiff { lambda_r, retain } = kind {
        if *lambda_r > 0.0 && weight_mass > 0.0 {
            let g = nll_grad(params, retain)?;
            for (o, gi) in out.iter_mut().zip(&g) {
                *o += weight_mass * lambda_r * gi;
            }
        }
    }
    let two_lambda = 2.0 * cfg.lambda;
    for (o, (a, b)) in out
        .iter_mut()
        .zip(params.as_flat().iter().zip(theta_star.as_flat()))
    {
        *o += two_lambda * (a - b);
    }
    Ok(out)
}

/// (Σ_i ω_i ∇²ℓ_i(θ) + 2λI)·v.
pub fn inner_hvp(
    kind: &ForgetLossKind,
    weights: &WeightVector,
    params: &PolicyParams,
    candidates: &[TokenSeq],
    theta_star: &PolicyParams,
    v: &[f64],
    cfg: &InnerConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    kind.validate()?;
    check_weights(weights, candidates)?;
    if v.len() != params.dim() {
        return Err(Error::InvalidInput("hvp vector shape mismatch".into()));
    }
    if !all_finite(v) {
        return Err(Error::InvalidInput("non-finite hvp vector".into()));
    }
    let out = match cfg.hvp_mode {
        HvpMode::Analytic => {
            let mut out = vec![0.0; params.dim()];
            let mut weight_mass = 0.0;
            for (&w, sample) in weights.omega().iter().zip(candidates) {
                if w == 0.0 {
                    continue;
                }
                weight_mass += w;
                match kind {
                    ForgetLossKind::Ga | ForgetLossKind::GradDiff { .. } => {
                        ga_hvp_accum(params, sample, w, v, &mut out);
                    }
                    ForgetLossKind::Npo { beta } => {
                        let l_theta = sample_loglik(params, sample);
                        let l_ref = sample_loglik(theta_star, sample);
                        let s = npo_weight(*beta, l_theta, l_ref);
                        // ∇²ℓ = 2βs(1−s)·∇L∇Lᵀ + 2s·∇²L
                        let mut grad_l = vec![0.0; params.dim()];
                        ga_grad_accum(params, sample, 1.0, &mut grad_l);
                        let t = crate::math::dot(&grad_l, v);
                        let rank1 = w * 2.0 * beta * s * (1.0 - s) * t;
                        crate::math::axpy(rank1, &grad_l, &mut out);
                        ga_hvp_accum(params, sample, w * 2.0 * s, v, &mut out);
                    }
                }
            }
            if let ForgetLossKind::GradDiff { lambda_r, retain } = kind {
                if *lambda_r > 0.0 && weight_mass > 0.0 {
                    nll_hvp_accum(params, retain, weight_mass * lambda_r, v, &mut out);
                }
            }
            let two_lambda = 2.0 * cfg.lambda;
            for (o, vi) in out.iter_mut().zip(v) {
                *o += two_lambda * vi;
            }
            out
        }
        HvpMode::FiniteDifference => {
            let theta_norm = norm2(params.as_flat());
            let v_norm = norm2(v);
            let h = 1e-5 * (1.0 + theta_norm) / v_norm.max(1e-12);
            let mut plus = params.clone();
            let mut minus = params.clone();
            for i in 0..v.len() {
                plus.as_flat_mut()[i] += h * v[i];
                minus.as_flat_mut()[i] -= h * v[i];
            }
            let gp = inner_grad(kind, weights, &plus, candidates, theta_star, cfg)?;
            let gm = inner_grad(kind, weights, &minus, candidates, theta_star, cfg)?;
            gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        }
    };
    if !all_finite(&out) {
        return Err(Error::Numerical("non-finite hessian-vector product".into()));
    }
    Ok(out)
}

/// Result of solving the inner problem.
#[derive(Debug, Clone)]
pub struct InnerSolve {
    pub params: PolicyParams,
    pub steps: usize,
    pub grad_norm: f64,
}

/// Gradient descent on f(·, ω) from `init` (θ* when `None`). Stops at
/// `inner_steps` or when the gradient norm drops below `grad_tol`.
pub fn inner_solve(
    kind: &ForgetLossKind,
    weights: &WeightVector,
    candidates: &[TokenSeq],
    theta_star: &PolicyParams,
    init: Option<&PolicyParams>,
    cfg: &InnerConfig,
) -> Result<InnerSolve> {
    cfg.validate()?;
    kind.validate()?;
    check_weights(weights, candidates)?;
    let mut params = init.unwrap_or(theta_star).clone();
    let mut steps = 0;
    let mut grad_norm;
    loop {
        let grad = inner_grad(kind, weights, &params, candidates, theta_star, cfg)?;
        if !all_finite(&grad) {
            return Err(Error::Divergence {
                step: steps,
                what: "non-finite inner gradient".into(),
            });
        }
        grad_norm = norm2(&grad);
        if grad_norm < cfg.grad_tol || steps >= cfg.inner_steps {
            break;
        }
        let theta = params.as_flat_mut();
        for i in 0..theta.len() {
            theta[i] -= cfg.inner_lr * grad[i];
        }
        if !all_finite(params.as_flat()) {
            return Err(Error::Divergence {
                step: steps,
                what: "non-finite parameters in inner_solve".into(),
            });
        }
        steps += 1;
    }
    Ok(InnerSolve {
        params,
        steps,
        grad_norm,
    })
}

/// Spectral-norm estimate of −Σ_i ω_i ∇²ℓ_i(θ) by 50 power-iteration steps,
/// used by the positive-definiteness guard before CG solves.
pub fn forget_curvature_bound(
    kind: &ForgetLossKind,
    weights: &WeightVector,
    params: &PolicyParams,
    candidates: &[TokenSeq],
    theta_star: &PolicyParams,
    cfg: &InnerConfig,
) -> Result<f64> {
    let d = params.dim();
    let mut rng = ChaCha12Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15);
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = norm2(&v);
    for x in &mut v {
        *x /= n;
    }
    let apply = |x: &[f64]| -> Result<Vec<f64>> {
        let hv = inner_hvp(kind, weights, params, candidates, theta_star, x, cfg)?;
        let two_lambda = 2.0 * cfg.lambda;
        Ok(hv
            .iter()
            .zip(x)
            .map(|(h, xi)| -(h - two_lambda * xi))
            .collect())
    };
    let mut bound = 0.0;
    for _ in 0..50 {
        let av = apply(&v)?;
        let norm = norm2(&av);
        if norm < 1e-300 {
            return Ok(0.0);
        }
        bound = norm;
        v = av;
        for x in &mut v {
            *x /= norm;
        }
    }
    Ok(bound)
}
