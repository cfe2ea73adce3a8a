//! Fit the bigram policy by maximum likelihood on a synthetic world and
//! round-trip it through the versioned model file.
//!
//! ```bash
//! cargo run --release --example train_policy
//! ```

use u2a::artifacts::{load_policy, save_policy};
use u2a::metrics::perplexity;
use u2a::policy::{nll_loss, train_mle, PolicyParams};
use u2a::world::{generate, SyntheticWorldSpec};

fn main() -> u2a::Result<()> {
    let spec = SyntheticWorldSpec {
        seed: 1,
        ..SyntheticWorldSpec::default()
    };
    let world = generate(&spec)?;
    let data = &world.dataset.train;

    let zero = PolicyParams::zeros(world.vocab);
    println!(
        "before training: nll {:.4}, ppl {:.3} (uniform = vocab size {})",
        nll_loss(&zero, data)?,
        perplexity(&zero, data)?,
        spec.vocab_size
    );

    let fit = train_mle(world.vocab, data, 2000, 0.5, spec.seed)?;
    println!(
        "after {} steps:  nll {:.4}, ppl {:.3}",
        2000,
        fit.final_loss,
        perplexity(&fit.params, data)?
    );

    let dir = std::env::temp_dir().join("u2a_example_train_policy");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("policy.json");
    save_policy(&path, &fit.params, "example")?;
    let loaded = load_policy(&path)?;
    assert_eq!(loaded.as_flat(), fit.params.as_flat());
    println!("model file round-trips bit-exactly: {}", path.display());
    Ok(())
}
