//! Bigram linear-softmax policy: exact loss, gradient, and per-token
//! log-probabilities.
//!
//! The policy conditions each token on the immediately preceding token only,
//! with a reserved begin-of-sequence context row. Parameters are a dense
//! `(V+1) × V` logit table, so every downstream quantity (gradients,
//! Hessian-vector products, the alignment objective) has a closed form.

use crate::error::{Error, Result};
use crate::math::{all_finite, log_sum_exp, softmax};
use serde::{Deserialize, Serialize};

/// Token alphabet. Real tokens are `0..size`; `bos_id() == size` is the
/// reserved begin-of-sequence context and is never emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidInput(format!(
                "vocab size must be at least 2, got {size}"
            )));
        }
        Ok(Vocab { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bos_id(&self) -> usize {
        self.size
    }

    /// Number of context rows: one per token plus the BOS row.
    pub fn n_contexts(&self) -> usize {
        self.size + 1
    }

    /// Flattened parameter dimension d = (V+1)·V.
    pub fn param_dim(&self) -> usize {
        (self.size + 1) * self.size
    }
}

/// One training sample: a non-empty sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<usize>,
}

impl TokenSeq {
    pub fn new(tokens: Vec<usize>, vocab: &Vocab) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab.size()) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} out of range for vocab size {}",
                vocab.size()
            )));
        }
        Ok(TokenSeq { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// (context, target) pairs; position 0 is conditioned on BOS.
    pub fn pairs<'a>(&'a self, vocab: &Vocab) -> impl Iterator<Item = (usize, usize)> + 'a {
        let bos = vocab.bos_id();
        self.tokens.iter().enumerate().map(move |(t, &x)| {
            let ctx = if t == 0 { bos } else { self.tokens[t - 1] };
            (ctx, x)
        })
    }
}

/// Dense policy parameters: row per context (tokens then BOS), column per
/// next token. Also addressable as a flat vector of length `(V+1)·V`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab: Vocab,
    theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(vocab: Vocab) -> Self {
        PolicyParams {
            vocab,
            theta: vec![0.0; vocab.param_dim()],
        }
    }

    pub fn from_flat(vocab: Vocab, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != vocab.param_dim() {
            return Err(Error::InvalidInput(format!(
                "parameter vector has length {}, expected {}",
                theta.len(),
                vocab.param_dim()
            )));
        }
        if !all_finite(&theta) {
            return Err(Error::InvalidInput("non-finite policy parameter".into()));
        }
        Ok(PolicyParams { vocab, theta })
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn row(&self, context: usize) -> &[f64] {
        let v = self.vocab.size();
        &self.theta[context * v..(context + 1) * v]
    }

    pub fn row_mut(&mut self, context: usize) -> &mut [f64] {
        let v = self.vocab.size();
        &mut self.theta[context * v..(context + 1) * v]
    }

    pub fn softmax_row(&self, context: usize) -> Vec<f64> {
        softmax(self.row(context))
    }

    /// log p(target | context).
    pub fn log_prob(&self, context: usize, target: usize) -> f64 {
        let row = self.row(context);
        row[target] - log_sum_exp(row)
    }
}

/// The four data splits one experiment works with.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// Sequences the original model was fit on.
    pub train: Vec<TokenSeq>,
    /// Candidate pool for unlearning.
    pub negatives: Vec<TokenSeq>,
    /// Kept data: context distribution source and retain-loss split.
    pub retain: Vec<TokenSeq>,
    /// Non-member sequences for membership inference.
    pub holdout: Vec<TokenSeq>,
}

impl Dataset {
    pub fn validate(&self, vocab: &Vocab, l_max: Option<usize>) -> Result<()> {
        for (name, split) in [
            ("train", &self.train),
            ("negatives", &self.negatives),
            ("retain", &self.retain),
            ("holdout", &self.holdout),
        ] {
            for (i, seq) in split.iter().enumerate() {
                if seq.is_empty() {
                    return Err(Error::InvalidInput(format!("{name}[{i}] is empty")));
                }
                if let Some(max) = l_max {
                    if seq.len() > max {
                        return Err(Error::InvalidInput(format!(
                            "{name}[{i}] has length {} > L_max {max}",
                            seq.len()
                        )));
                    }
                }
                if seq.tokens.iter().any(|&t| t >= vocab.size()) {
                    return Err(Error::InvalidInput(format!(
                        "{name}[{i}] contains a token outside the vocab"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Mean over sequences of the per-sequence token negative log-likelihood sum.
pub fn nll_loss(params: &PolicyParams, data: &[TokenSeq]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("nll_loss over empty data".into()));
    }
    let mut total = 0.0;
    for seq in data {
        for (ctx, x) in seq.pairs(&params.vocab()) {
            total -= params.log_prob(ctx, x);
        }
    }
    Ok(total / data.len() as f64)
}

/// Exact gradient of `nll_loss` as a flat vector. Each (context, target)
/// pair contributes `(softmax(theta[ctx]) − onehot(target)) / |data|` to its
/// context row.
pub fn nll_grad(params: &PolicyParams, data: &[TokenSeq]) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidInput("nll_grad over empty data".into()));
    }
    let vocab = params.vocab();
    let v = vocab.size();
    let mut grad = vec![0.0; params.dim()];
    for seq in data {
        for (ctx, x) in seq.pairs(&vocab) {
            let p = params.softmax_row(ctx);
            let row = &mut grad[ctx * v..(ctx + 1) * v];
            for j in 0..v {
                row[j] += p[j];
            }
            row[x] -= 1.0;
        }
    }
    let inv = 1.0 / data.len() as f64;
    for g in &mut grad {
        *g *= inv;
    }
    Ok(grad)
}

/// Outcome of maximum-likelihood training.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub params: PolicyParams,
    pub final_loss: f64,
}

/// Plain gradient descent on `nll_loss` from zero initialization.
///
/// The objective is convex in the logits, so the zero start loses nothing;
/// `_seed` is part of the call signature for config plumbing but the routine
/// is fully deterministic.
pub fn train_mle(
    vocab: Vocab,
    data: &[TokenSeq],
    steps: usize,
    lr: f64,
    _seed: u64,
) -> Result<MleFit> {
    if steps == 0 {
        return Err(Error::InvalidConfig("train_mle needs steps >= 1".into()));
    }
    if lr <= 0.0 {
        return Err(Error::InvalidConfig("train_mle needs lr > 0".into()));
    }
    let mut params = PolicyParams::zeros(vocab);
    for step in 0..steps {
        let grad = nll_grad(&params, data)?;
        if !all_finite(&grad) {
            return Err(Error::Divergence {
                step,
                what: "non-finite gradient in train_mle".into(),
            });
        }
        let theta = params.as_flat_mut();
        for i in 0..theta.len() {
            theta[i] -= lr * grad[i];
        }
    }
    let final_loss = nll_loss(&params, data)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            step: steps,
            what: "non-finite final loss in train_mle".into(),
        });
    }
    Ok(MleFit { params, final_loss })
}

/// Per-token log p(x_t | context_t) for one sequence.
pub fn sequence_logprobs(params: &PolicyParams, seq: &TokenSeq) -> Vec<f64> {
    seq.pairs(&params.vocab())
        .map(|(ctx, x)| params.log_prob(ctx, x))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_params(vocab: Vocab, seed: u64, scale: f64) -> PolicyParams {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let theta = (0..vocab.param_dim())
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        PolicyParams::from_flat(vocab, theta).unwrap()
    }

    fn random_seqs(vocab: Vocab, n: usize, max_len: usize, seed: u64) -> Vec<TokenSeq> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(1..=max_len);
                let toks = (0..len).map(|_| rng.gen_range(0..vocab.size())).collect();
                TokenSeq::new(toks, &vocab).unwrap()
            })
            .collect()
    }

    /// Central finite difference of a scalar function of the flat parameters.
    fn fd_grad(
        params: &PolicyParams,
        h: f64,
        f: impl Fn(&PolicyParams) -> f64,
    ) -> Vec<f64> {
        let mut out = vec![0.0; params.dim()];
        for i in 0..params.dim() {
            let mut plus = params.clone();
            plus.as_flat_mut()[i] += h;
            let mut minus = params.clone();
            minus.as_flat_mut()[i] -= h;
            out[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        diff / norm.max(1e-300)
    }

    #[test]
    fn vocab_rejects_degenerate_sizes() {
        assert!(Vocab::new(0).is_err());
        assert!(Vocab::new(1).is_err());
        assert!(Vocab::new(2).is_ok());
    }

    #[test]
    fn token_seq_validates_ids_and_nonempty() {
        let v = Vocab::new(4).unwrap();
        assert!(TokenSeq::new(vec![], &v).is_err());
        assert!(TokenSeq::new(vec![0, 4], &v).is_err());
        assert!(TokenSeq::new(vec![0, 3, 1], &v).is_ok());
    }

    #[test]
    fn nll_loss_uniform_softmax() {
        // theta = 0, V = 4, one sequence of 3 tokens: loss = 3 ln 4.
        let v = Vocab::new(4).unwrap();
        let params = PolicyParams::zeros(v);
        let seq = TokenSeq::new(vec![1, 2, 0], &v).unwrap();
        let loss = nll_loss(&params, &[seq]).unwrap();
        assert_abs_diff_eq!(loss, 3.0 * 4.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn nll_loss_near_deterministic_limit() {
        let v = Vocab::new(4).unwrap();
        let mut params = PolicyParams::zeros(v);
        params.row_mut(v.bos_id())[2] = 50.0;
        let seq = TokenSeq::new(vec![2], &v).unwrap();
        let loss = nll_loss(&params, &[seq]).unwrap();
        // ln(1 + 3 e^{-50}) ~ 3e-22, indistinguishable from 0 at 1e-15.
        assert!(loss.abs() < 1e-15, "loss = {loss}");
    }

    #[test]
    fn nll_loss_matches_term_by_term_oracle() {
        // Oracle enumerates softmax denominators explicitly, no shared code
        // with the log_sum_exp path.
        let v = Vocab::new(6).unwrap();
        let params = random_params(v, 7, 2.0);
        let seqs = random_seqs(v, 5, 7, 7);
        let loss = nll_loss(&params, &seqs).unwrap();

        let mut oracle = 0.0;
        for seq in &seqs {
            for (ctx, x) in seq.pairs(&v) {
                let row = params.row(ctx);
                let denom: f64 = row.iter().map(|&l| l.exp()).sum();
                oracle -= (row[x].exp() / denom).ln();
            }
        }
        oracle /= seqs.len() as f64;
        assert_abs_diff_eq!(loss, oracle, epsilon = 1e-10);
    }

    #[test]
    fn nll_loss_rejects_empty_data() {
        let v = Vocab::new(2).unwrap();
        let params = PolicyParams::zeros(v);
        assert!(matches!(
            nll_loss(&params, &[]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn nll_grad_uniform_single_pair() {
        let v = Vocab::new(2).unwrap();
        let params = PolicyParams::zeros(v);
        let seq = TokenSeq::new(vec![1], &v).unwrap();
        let grad = nll_grad(&params, &[seq]).unwrap();
        // The only pair is (bos, 1): that row is [0.5, 0.5] - onehot(1).
        let bos = v.bos_id();
        assert_abs_diff_eq!(grad[bos * 2], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(grad[bos * 2 + 1], -0.5, epsilon = 1e-15);
        for i in 0..bos * 2 {
            assert_eq!(grad[i], 0.0);
        }
    }

    #[test]
    fn nll_grad_zero_at_stationary_point() {
        // At theta = 0 every conditional is uniform; data with balanced
        // counts for every observed context has zero gradient.
        let v = Vocab::new(2).unwrap();
        let params = PolicyParams::zeros(v);
        let data = vec![
            TokenSeq::new(vec![0, 0], &v).unwrap(),
            TokenSeq::new(vec![0, 1], &v).unwrap(),
            TokenSeq::new(vec![1, 0], &v).unwrap(),
            TokenSeq::new(vec![1, 1], &v).unwrap(),
        ];
        let grad = nll_grad(&params, &data).unwrap();
        for g in grad {
            assert_abs_diff_eq!(g, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn nll_grad_matches_finite_differences() {
        for seed in [1u64, 2, 3, 4, 5] {
            let v = Vocab::new(5).unwrap();
            let params = random_params(v, seed, 1.5);
            let seqs = random_seqs(v, 4, 6, seed + 100);
            let grad = nll_grad(&params, &seqs).unwrap();
            let fd = fd_grad(&params, 1e-5, |p| nll_loss(p, &seqs).unwrap());
            assert!(
                rel_err(&grad, &fd) < 1e-6,
                "seed {seed}: rel err {}",
                rel_err(&grad, &fd)
            );
        }
    }

    #[test]
    fn train_mle_fits_deterministic_chain() {
        let v = Vocab::new(3).unwrap();
        let seq = TokenSeq::new(vec![0, 1], &v).unwrap();
        let data = vec![seq; 4];
        let fit = train_mle(v, &data, 2000, 0.5, 0).unwrap();
        let p = fit.params.softmax_row(0);
        assert!(p[1] >= 0.99, "fitted conditional p(1|0) = {}", p[1]);
    }

    #[test]
    fn train_mle_fixed_point_stays_at_zero() {
        let v = Vocab::new(2).unwrap();
        let data = vec![
            TokenSeq::new(vec![0, 0], &v).unwrap(),
            TokenSeq::new(vec![0, 1], &v).unwrap(),
            TokenSeq::new(vec![1, 0], &v).unwrap(),
            TokenSeq::new(vec![1, 1], &v).unwrap(),
        ];
        let fit = train_mle(v, &data, 50, 0.5, 0).unwrap();
        assert_eq!(fit.params, PolicyParams::zeros(v));
    }

    #[test]
    fn train_mle_is_deterministic() {
        let v = Vocab::new(4).unwrap();
        let data = random_seqs(v, 6, 5, 42);
        let a = train_mle(v, &data, 200, 0.3, 9).unwrap();
        let b = train_mle(v, &data, 200, 0.3, 9).unwrap();
        assert_eq!(a.params.as_flat(), b.params.as_flat());
    }

    #[test]
    fn sequence_logprobs_uniform_and_consistency() {
        let v = Vocab::new(5).unwrap();
        let params = PolicyParams::zeros(v);
        let seq = TokenSeq::new(vec![2, 4, 0], &v).unwrap();
        let lps = sequence_logprobs(&params, &seq);
        for lp in &lps {
            assert_abs_diff_eq!(*lp, -(5.0f64.ln()), epsilon = 1e-14);
        }
        // Sum of entries equals -nll_loss of the singleton dataset.
        let params2 = random_params(v, 11, 1.0);
        let lps2 = sequence_logprobs(&params2, &seq);
        let total: f64 = lps2.iter().sum();
        assert_abs_diff_eq!(
            total,
            -nll_loss(&params2, std::slice::from_ref(&seq)).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sequence_logprobs_length_one_is_bos_row() {
        let v = Vocab::new(3).unwrap();
        let params = random_params(v, 5, 2.0);
        let seq = TokenSeq::new(vec![1], &v).unwrap();
        let lps = sequence_logprobs(&params, &seq);
        assert_eq!(lps.len(), 1);
        assert_abs_diff_eq!(lps[0], params.log_prob(v.bos_id(), 1), epsilon = 0.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let v = Vocab::new(7).unwrap();
        let params = random_params(v, 3, 3.0);
        for c in 0..v.n_contexts() {
            let s: f64 = params.softmax_row(c).iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn nll_loss_is_convex_along_midpoints() {
        for seed in [21u64, 22, 23] {
            let v = Vocab::new(4).unwrap();
            let a = random_params(v, seed, 2.0);
            let b = random_params(v, seed + 50, 2.0);
            let seqs = random_seqs(v, 5, 5, seed);
            let mid_theta: Vec<f64> = a
                .as_flat()
                .iter()
                .zip(b.as_flat())
                .map(|(x, y)| 0.5 * (x + y))
                .collect();
            let mid = PolicyParams::from_flat(v, mid_theta).unwrap();
            let lm = nll_loss(&mid, &seqs).unwrap();
            let la = nll_loss(&a, &seqs).unwrap();
            let lb = nll_loss(&b, &seqs).unwrap();
            assert!(lm <= 0.5 * (la + lb) + 1e-12);
        }
    }
}
