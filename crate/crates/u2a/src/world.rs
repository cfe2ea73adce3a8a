//! Synthetic-world generation: a planted "bad token" set with reward −1
//! (+1 elsewhere), benign train/retain/holdout splits, a heterogeneous
//! negative pool leaning on bad tokens, and preference pairs that let a
//! Bradley-Terry model recover the planted reward.

use crate::config::seed_stream;
use crate::error::{Error, Result};
use crate::policy::{Dataset, TokenSeq, Vocab};
use crate::reward::{PreferencePair, RewardModel};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticWorldSpec {
    pub vocab_size: usize,
    /// Planted bad-token set B; emissions from B carry reward −1.
    pub bad_tokens: Vec<usize>,
    pub len_min: usize,
    pub len_max: usize,
    pub n_train: usize,
    pub n_negatives: usize,
    pub n_retain: usize,
    pub n_holdout: usize,
    pub n_prefs: usize,
    /// Marginal probability that a negative-pool token comes from B. Each
    /// negative sequence draws its own intensity around this mean, so pools
    /// spread in low-reward fraction; 1.0 degenerates to all-B.
    pub negative_bias: f64,
    /// B-token probability in the benign splits.
    pub benign_bias: f64,
    /// Probability that a preference pair's preferred token is outside B.
    pub pref_clean_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        SyntheticWorldSpec {
            vocab_size: 12,
            bad_tokens: vec![0, 1, 2],
            len_min: 4,
            len_max: 10,
            n_train: 256,
            n_negatives: 64,
            n_retain: 128,
            n_holdout: 64,
            n_prefs: 512,
            negative_bias: 0.8,
            benign_bias: 0.1,
            pref_clean_prob: 0.95,
            seed: 0,
        }
    }
}

impl SyntheticWorldSpec {
    pub fn validate(&self) -> Result<()> {
        let vocab = Vocab::new(self.vocab_size)?;
        if self.bad_tokens.is_empty() || self.bad_tokens.len() >= self.vocab_size {
            return Err(Error::InvalidConfig(
                "bad token set must be non-empty and a strict subset of the vocab".into(),
            ));
        }
        if self.bad_tokens.iter().any(|&t| t >= vocab.size()) {
            return Err(Error::InvalidConfig("bad token outside the vocab".into()));
        }
        if self.len_min == 0 || self.len_min > self.len_max {
            return Err(Error::InvalidConfig(
                "need 1 <= len_min <= len_max".into(),
            ));
        }
        for (name, count) in [
            ("n_train", self.n_train),
            ("n_negatives", self.n_negatives),
            ("n_retain", self.n_retain),
            ("n_holdout", self.n_holdout),
            ("n_prefs", self.n_prefs),
        ] {
            if count == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(self.negative_bias > 0.0 && self.negative_bias <= 1.0) {
            return Err(Error::InvalidConfig(
                "negative_bias must lie in (0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.benign_bias) || !(0.0..=1.0).contains(&self.pref_clean_prob)
        {
            return Err(Error::InvalidConfig(
                "benign_bias and pref_clean_prob must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// A generated world: data splits, preference pairs, and the planted reward.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: SyntheticWorldSpec,
    pub vocab: Vocab,
    pub dataset: Dataset,
    pub prefs: Vec<PreferencePair>,
    pub true_reward: RewardModel,
}

fn good_tokens(spec: &SyntheticWorldSpec) -> Vec<usize> {
    (0..spec.vocab_size)
        .filter(|t| !spec.bad_tokens.contains(t))
        .collect()
}

fn gen_sequence(
    rng: &mut ChaCha12Rng,
    spec: &SyntheticWorldSpec,
    vocab: &Vocab,
    good: &[usize],
    p_bad: f64,
) -> TokenSeq {
    let len = rng.gen_range(spec.len_min..=spec.len_max);
    let toks = (0..len)
        .map(|_| {
            if rng.gen_bool(p_bad) {
                spec.bad_tokens[rng.gen_range(0..spec.bad_tokens.len())]
            } else {
                good[rng.gen_range(0..good.len())]
            }
        })
        .collect();
    TokenSeq::new(toks, vocab).expect("generated sequence is valid")
}

/// Per-sequence bad-token intensity: uniform with mean `bias`, degenerate at
/// bias = 1.
fn negative_intensity(rng: &mut ChaCha12Rng, bias: f64) -> f64 {
    let lo = (2.0 * bias - 1.0).max(0.0);
    let hi = (2.0 * bias).min(1.0);
    if hi - lo < 1e-12 {
        bias
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Generate the world deterministically from the spec's seed.
pub fn generate(spec: &SyntheticWorldSpec) -> Result<World> {
    spec.validate()?;
    let vocab = Vocab::new(spec.vocab_size)?;
    let good = good_tokens(spec);

    let mut rng = seed_stream(spec.seed, "world-benign");
    let benign_train: Vec<TokenSeq> = (0..spec.n_train)
        .map(|_| gen_sequence(&mut rng, spec, &vocab, &good, spec.benign_bias))
        .collect();
    let retain: Vec<TokenSeq> = (0..spec.n_retain)
        .map(|_| gen_sequence(&mut rng, spec, &vocab, &good, spec.benign_bias))
        .collect();
    let holdout: Vec<TokenSeq> = (0..spec.n_holdout)
        .map(|_| gen_sequence(&mut rng, spec, &vocab, &good, spec.benign_bias))
        .collect();

    let mut rng = seed_stream(spec.seed, "world-negatives");
    let negatives: Vec<TokenSeq> = (0..spec.n_negatives)
        .map(|_| {
            let p = negative_intensity(&mut rng, spec.negative_bias);
            gen_sequence(&mut rng, spec, &vocab, &good, p)
        })
        .collect();

    // The original model is fit on everything including the negatives, so
    // membership questions about the negative pool are well-posed.
    let mut train = benign_train;
    train.extend(negatives.iter().cloned());

    let mut rng = seed_stream(spec.seed, "world-prefs");
    let prefs: Vec<PreferencePair> = (0..spec.n_prefs)
        .map(|_| {
            let context = rng.gen_range(0..=vocab.bos_id());
            let preferred = if rng.gen_bool(spec.pref_clean_prob) {
                good[rng.gen_range(0..good.len())]
            } else {
                spec.bad_tokens[rng.gen_range(0..spec.bad_tokens.len())]
            };
            let mut dispreferred = if rng.gen_bool(spec.pref_clean_prob) {
                spec.bad_tokens[rng.gen_range(0..spec.bad_tokens.len())]
            } else {
                good[rng.gen_range(0..good.len())]
            };
            while dispreferred == preferred {
                dispreferred = rng.gen_range(0..vocab.size());
            }
            PreferencePair {
                context,
                preferred,
                dispreferred,
            }
        })
        .collect();

    let mut w = vec![0.0; vocab.param_dim()];
    for c in 0..vocab.n_contexts() {
        for t in 0..vocab.size() {
            w[c * vocab.size() + t] = if spec.bad_tokens.contains(&t) { -1.0 } else { 1.0 };
        }
    }
    let true_reward = RewardModel::from_flat(vocab, w)?;

    let dataset = Dataset {
        train,
        negatives,
        retain,
        holdout,
    };
    dataset.validate(&vocab, Some(spec.len_max))?;

    Ok(World {
        spec: spec.clone(),
        vocab,
        dataset,
        prefs,
        true_reward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::mean_token_reward;
    use crate::reward::token_rewards;

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticWorldSpec {
            seed: 42,
            ..SyntheticWorldSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.dataset.train, b.dataset.train);
        assert_eq!(a.dataset.negatives, b.dataset.negatives);
        assert_eq!(a.prefs, b.prefs);
    }

    #[test]
    fn degenerate_bias_gives_pure_bad_negatives() {
        let spec = SyntheticWorldSpec {
            negative_bias: 1.0,
            n_negatives: 16,
            ..SyntheticWorldSpec::default()
        };
        let world = generate(&spec).unwrap();
        for seq in &world.dataset.negatives {
            assert!(seq
                .tokens
                .iter()
                .all(|t| spec.bad_tokens.contains(t)));
        }
    }

    #[test]
    fn negatives_are_lower_reward_than_retain() {
        let world = generate(&SyntheticWorldSpec::default()).unwrap();
        let threshold = mean_token_reward(&world.dataset.negatives, &world.true_reward).unwrap();
        let frac = |split: &[TokenSeq]| {
            let mut low = 0usize;
            let mut total = 0usize;
            for seq in split {
                for r in token_rewards(&world.true_reward, seq) {
                    if r < threshold {
                        low += 1;
                    }
                    total += 1;
                }
            }
            low as f64 / total as f64
        };
        assert!(frac(&world.dataset.negatives) > frac(&world.dataset.retain));
    }

    #[test]
    fn preference_pairs_are_valid_and_mostly_clean() {
        let world = generate(&SyntheticWorldSpec::default()).unwrap();
        let mut clean = 0usize;
        for p in &world.prefs {
            p.validate(&world.vocab).unwrap();
            if !world.spec.bad_tokens.contains(&p.preferred) {
                clean += 1;
            }
        }
        let frac = clean as f64 / world.prefs.len() as f64;
        assert!(frac > 0.88, "clean preferred fraction {frac}");
    }

    #[test]
    fn train_split_contains_the_negatives() {
        let world = generate(&SyntheticWorldSpec::default()).unwrap();
        let n = world.dataset.negatives.len();
        let tail = &world.dataset.train[world.dataset.train.len() - n..];
        assert_eq!(tail, &world.dataset.negatives[..]);
    }

    #[test]
    fn spec_validation_rejects_bad_sets() {
        let mut spec = SyntheticWorldSpec::default();
        spec.bad_tokens = vec![];
        assert!(spec.validate().is_err());
        let mut spec = SyntheticWorldSpec::default();
        spec.bad_tokens = (0..spec.vocab_size).collect();
        assert!(spec.validate().is_err());
        let mut spec = SyntheticWorldSpec::default();
        spec.negative_bias = 0.0;
        assert!(spec.validate().is_err());
    }
}
