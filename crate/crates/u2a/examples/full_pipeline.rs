//! The whole artifact pipeline through the same entry points the `u2a`
//! binary uses: generate a world into a directory, train the policy and the
//! reward, run greedy weighted unlearning, analyze, and evaluate — then list
//! what landed on disk.
//!
//! ```bash
//! cargo run --release --example full_pipeline
//! ```

use u2a::cli::{
    cmd_analyze, cmd_eval, cmd_gen_data, cmd_train, cmd_train_reward, cmd_u2a,
    cmd_unlearn_baseline, AnalyzeArgs, CommonArgs, EvalArgs, GenDataArgs,
};

fn main() -> u2a::Result<()> {
    let dir = std::env::temp_dir().join("u2a_example_pipeline");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir)?;

    let common = CommonArgs {
        out: dir.clone(),
        seed: Some(11),
        lambda: Some(2.0),
        beta: Some(0.02),
        delta: Some(1e-4),
        max_iters: Some(10),
        ..CommonArgs::default()
    };

    cmd_gen_data(&GenDataArgs {
        common: common.clone(),
        world: None,
        vocab: None,
        bad_tokens: None,
        n_train: Some(128),
        n_negatives: Some(32),
        n_retain: Some(64),
        n_holdout: Some(32),
        n_prefs: None,
        len_min: None,
        len_max: None,
        negative_bias: Some(0.7),
        benign_bias: None,
        pref_clean_prob: None,
    })?;
    cmd_train(&common)?;
    cmd_train_reward(&common)?;
    cmd_unlearn_baseline(&common)?;
    cmd_u2a(&common)?;
    cmd_analyze(&AnalyzeArgs {
        common: common.clone(),
        omega: 0.01,
        groups: 20,
        group_size: 8,
    })?;
    cmd_eval(&EvalArgs {
        common: common.clone(),
        model: Some(dir.join("u2a_model.json")),
    })?;

    println!("\nartifacts in {}:", dir.display());
    let mut names: Vec<String> = std::fs::read_dir(&dir)?
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for name in names {
        println!("  {name}");
    }
    Ok(())
}
