//! Experiment front door: subcommands chaining data generation, training,
//! unlearning, analysis, and evaluation over a shared artifact directory.
//!
//! Flags mirror the `RunConfig` keys; a JSON config file merges under them
//! (flags win). Every command appends a manifest line and writes its
//! artifacts atomically.

use crate::analysis::{group_impact_experiment, impact_table};
use crate::artifacts;
use crate::bilevel::WeightVector;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::forget::inner_solve;
use crate::metrics::{mia_auc, perplexity, reward_value, EvalMetrics};
use crate::policy::{train_mle, Dataset, Vocab};
use crate::reward::{train_reward, ContextDistribution, RewardModel};
use crate::selector::run_u2a;
use crate::world::{generate, SyntheticWorldSpec};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(
    name = "u2a",
    version,
    about = "Weighted machine unlearning for preference alignment on a bigram policy"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world (data splits, preferences, planted reward)
    GenData(GenDataArgs),
    /// Fit the policy on train.jsonl by maximum likelihood
    Train(CommonArgs),
    /// Fit the Bradley-Terry reward on prefs.jsonl
    TrainReward(CommonArgs),
    /// Unlearn every negative with uniform weights
    UnlearnBaseline(CommonArgs),
    /// Greedily select and weight negatives to unlearn
    U2a(CommonArgs),
    /// Per-sample and per-group impact tables
    Analyze(AnalyzeArgs),
    /// Membership-inference AUC, perplexity, and reward value
    Eval(EvalArgs),
}

/// Flags shared by every pipeline stage. All tunables are optional; a value
/// resolves from the flag, then the config file, then the default.
#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Artifact directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// JSON config file merged under the flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Inner-problem regularization strength
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Sparsity coefficient on the weight vector
    #[arg(long)]
    pub beta: Option<f64>,
    /// Early-stopping threshold on outer-objective improvement
    #[arg(long)]
    pub delta: Option<f64>,
    /// Maximum greedy iterations
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub inner_steps: Option<usize>,
    /// Inner gradient-descent learning rate (desk default 0.1; LLM-scale
    /// recipes commonly use 4e-6)
    #[arg(long)]
    pub inner_lr: Option<f64>,
    #[arg(long)]
    pub inner_grad_tol: Option<f64>,
    #[arg(long)]
    pub outer_steps: Option<usize>,
    /// Learning rate for the unlearning weights
    #[arg(long)]
    pub outer_lr: Option<f64>,
    #[arg(long)]
    pub cg_tol: Option<f64>,
    #[arg(long)]
    pub cg_max_iters: Option<usize>,
    /// Forget loss: ga, graddiff, or npo
    #[arg(long)]
    pub forget_loss: Option<String>,
    #[arg(long)]
    pub npo_beta: Option<f64>,
    #[arg(long)]
    pub graddiff_lambda_r: Option<f64>,
    /// Greedy selection direction: min (default) or max
    #[arg(long)]
    pub gain_sign: Option<String>,
    #[arg(long)]
    pub k_percent: Option<f64>,
    #[arg(long)]
    pub train_steps: Option<usize>,
    #[arg(long)]
    pub train_lr: Option<f64>,
    #[arg(long)]
    pub reward_steps: Option<usize>,
    #[arg(long)]
    pub reward_lr: Option<f64>,
    #[arg(long)]
    pub reward_l2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Full world spec as JSON (flags below override its fields)
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Comma-separated planted bad-token ids
    #[arg(long, value_delimiter = ',')]
    pub bad_tokens: Option<Vec<usize>>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_negatives: Option<usize>,
    #[arg(long)]
    pub n_retain: Option<usize>,
    #[arg(long)]
    pub n_holdout: Option<usize>,
    #[arg(long)]
    pub n_prefs: Option<usize>,
    #[arg(long)]
    pub len_min: Option<usize>,
    #[arg(long)]
    pub len_max: Option<usize>,
    #[arg(long)]
    pub negative_bias: Option<f64>,
    #[arg(long)]
    pub benign_bias: Option<f64>,
    #[arg(long)]
    pub pref_clean_prob: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Probe weight for per-sample estimates and true re-solves
    #[arg(long, default_value_t = 0.01)]
    pub omega: f64,
    #[arg(long, default_value_t = 40)]
    pub groups: usize,
    #[arg(long, default_value_t = 8)]
    pub group_size: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Policy file to evaluate (defaults to policy.json in the out dir)
    #[arg(long)]
    pub model: Option<PathBuf>,
}

impl CommonArgs {
    /// Resolve the effective configuration: defaults, then the config file,
    /// then any flags given here.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),* $(,)?) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        take!(
            lambda,
            beta,
            delta,
            max_iters,
            inner_steps,
            inner_lr,
            inner_grad_tol,
            outer_steps,
            outer_lr,
            cg_tol,
            cg_max_iters,
            forget_loss,
            npo_beta,
            graddiff_lambda_r,
            gain_sign,
            k_percent,
            train_steps,
            train_lr,
            reward_steps,
            reward_lr,
            reward_l2,
            seed
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_dataset(dir: &Path, vocab: &Vocab) -> Result<Dataset> {
    let dataset = Dataset {
        train: artifacts::load_seqs_jsonl(&dir.join("train.jsonl"), vocab)?,
        negatives: artifacts::load_seqs_jsonl(&dir.join("negatives.jsonl"), vocab)?,
        retain: artifacts::load_seqs_jsonl(&dir.join("retain.jsonl"), vocab)?,
        holdout: artifacts::load_seqs_jsonl(&dir.join("holdout.jsonl"), vocab)?,
    };
    dataset.validate(vocab, None)?;
    Ok(dataset)
}

fn load_world_vocab(dir: &Path) -> Result<Vocab> {
    let spec = artifacts::load_world_spec(&dir.join("world.json"))?;
    Vocab::new(spec.vocab_size)
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = args.common.resolve()?;
    let mut spec = match &args.world {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<SyntheticWorldSpec>(&text)
                .map_err(|e| Error::Format(format!("bad world spec {}: {e}", path.display())))?
        }
        None => SyntheticWorldSpec::default(),
    };
    macro_rules! take {
        ($($field:ident <- $arg:ident),* $(,)?) => {
            $(if let Some(v) = &args.$arg { spec.$field = v.clone(); })*
        };
    }
    take!(
        vocab_size <- vocab,
        bad_tokens <- bad_tokens,
        n_train <- n_train,
        n_negatives <- n_negatives,
        n_retain <- n_retain,
        n_holdout <- n_holdout,
        n_prefs <- n_prefs,
        len_min <- len_min,
        len_max <- len_max,
        negative_bias <- negative_bias,
        benign_bias <- benign_bias,
        pref_clean_prob <- pref_clean_prob,
    );
    spec.seed = cfg.seed;
    spec.validate()?;

    let world = generate(&spec)?;
    let dir = &args.common.out;
    std::fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    artifacts::save_world_spec(&dir.join("world.json"), &spec, &hash)?;
    artifacts::save_seqs_jsonl(&dir.join("train.jsonl"), &world.dataset.train)?;
    artifacts::save_seqs_jsonl(&dir.join("negatives.jsonl"), &world.dataset.negatives)?;
    artifacts::save_seqs_jsonl(&dir.join("retain.jsonl"), &world.dataset.retain)?;
    artifacts::save_seqs_jsonl(&dir.join("holdout.jsonl"), &world.dataset.holdout)?;
    artifacts::save_prefs_jsonl(&dir.join("prefs.jsonl"), &world.prefs)?;
    artifacts::append_manifest(dir, "gen-data", &cfg, started.elapsed().as_millis())?;
    println!(
        "world: vocab {} · {} train / {} negatives / {} retain / {} holdout · {} prefs",
        spec.vocab_size,
        world.dataset.train.len(),
        world.dataset.negatives.len(),
        world.dataset.retain.len(),
        world.dataset.holdout.len(),
        world.prefs.len()
    );
    Ok(())
}

pub fn cmd_train(args: &CommonArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = args.resolve()?;
    let dir = &args.out;
    let vocab = load_world_vocab(dir)?;
    let train = artifacts::load_seqs_jsonl(&dir.join("train.jsonl"), &vocab)?;
    let fit = train_mle(vocab, &train, cfg.train_steps, cfg.train_lr, cfg.seed)?;
    artifacts::save_policy(&dir.join("policy.json"), &fit.params, &cfg.hash())?;
    artifacts::append_manifest(dir, "train", &cfg, started.elapsed().as_millis())?;
    println!("trained policy: final nll {:.6}", fit.final_loss);
    Ok(())
}

pub fn cmd_train_reward(args: &CommonArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = args.resolve()?;
    let dir = &args.out;
    let vocab = load_world_vocab(dir)?;
    let prefs = artifacts::load_prefs_jsonl(&dir.join("prefs.jsonl"), &vocab)?;
    let model = train_reward(
        vocab,
        &prefs,
        cfg.reward_steps,
        cfg.reward_lr,
        cfg.reward_l2,
        cfg.seed,
    )?;
    artifacts::save_reward(&dir.join("reward.json"), &model, &cfg.hash())?;
    artifacts::append_manifest(dir, "train-reward", &cfg, started.elapsed().as_millis())?;
    let loss = crate::reward::bt_loss(&model, &prefs)?;
    println!("trained reward: bt loss {loss:.6} over {} pairs", prefs.len());
    Ok(())
}

pub fn cmd_unlearn_baseline(args: &CommonArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = args.resolve()?;
    let dir = &args.out;
    let vocab = load_world_vocab(dir)?;
    let dataset = load_dataset(dir, &vocab)?;
    let theta_star = artifacts::load_policy(&dir.join("policy.json"))?;
    let kind = cfg.forget_kind(&dataset.retain)?;
    let n = dataset.negatives.len();
    let weights = WeightVector::from_omega(vec![1.0 / n as f64; n])?;
    let solved = inner_solve(
        &kind,
        &weights,
        &dataset.negatives,
        &theta_star,
        None,
        &cfg.inner_config(),
    )?;
    artifacts::save_policy(&dir.join("unlearned.json"), &solved.params, &cfg.hash())?;
    artifacts::append_manifest(dir, "unlearn-baseline", &cfg, started.elapsed().as_millis())?;
    println!(
        "uniform unlearning over {n} negatives: {} inner steps, final grad norm {:.3e}",
        solved.steps, solved.grad_norm
    );
    Ok(())
}

pub fn cmd_u2a(args: &CommonArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = args.resolve()?;
    let dir = &args.out;
    let vocab = load_world_vocab(dir)?;
    let dataset = load_dataset(dir, &vocab)?;
    let theta_star = artifacts::load_policy(&dir.join("policy.json"))?;
    let reward = artifacts::load_reward(&dir.join("reward.json"))?;
    let rho = ContextDistribution::from_data(&dataset.retain, &vocab)?;
    let u2a_cfg = cfg.u2a_config(&dataset.retain)?;
    let run = run_u2a(&dataset, &theta_star, &reward, &rho, &u2a_cfg)?;
    let hash = cfg.hash();
    artifacts::save_run(&dir.join("run.json"), &run, &hash)?;
    artifacts::save_trace_csv(&dir.join("trace.csv"), &run)?;
    artifacts::save_policy(&dir.join("u2a_model.json"), &run.theta_final, &hash)?;
    artifacts::append_manifest(dir, "u2a", &cfg, started.elapsed().as_millis())?;
    println!(
        "u2a: {} iterations, {:?}, |support| {}, g {:.6}, J {:.6}",
        run.trace.len(),
        run.stop_reason,
        run.weights.support().len(),
        run.g_final,
        run.j_final
    );
    Ok(())
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = args.common.resolve()?;
    let dir = &args.common.out;
    let vocab = load_world_vocab(dir)?;
    let dataset = load_dataset(dir, &vocab)?;
    let theta_star = artifacts::load_policy(&dir.join("policy.json"))?;
    let reward = artifacts::load_reward(&dir.join("reward.json"))?;
    let rho = ContextDistribution::from_data(&dataset.retain, &vocab)?;
    let kind = cfg.forget_kind(&dataset.retain)?;
    let inner_cfg = cfg.inner_config();

    let records = impact_table(
        &dataset.negatives,
        args.omega,
        &theta_star,
        &reward,
        &rho,
        &kind,
        &inner_cfg,
        true,
    )?;
    artifacts::save_impact_csv(&dir.join("impact.csv"), &records)?;

    let (groups, summary) = group_impact_experiment(
        &dataset.negatives,
        args.groups,
        args.group_size,
        &theta_star,
        &reward,
        &rho,
        &kind,
        &inner_cfg,
        cfg.seed,
    )?;
    artifacts::save_groups_csv(&dir.join("groups.csv"), &groups)?;
    artifacts::append_manifest(dir, "analyze", &cfg, started.elapsed().as_millis())?;
    println!(
        "analyze: {} samples, {} groups (size {}), spearman(low_frac, dJ) {:.4}, dJ signs +{}/-{}",
        records.len(),
        summary.groups,
        summary.group_size,
        summary.spearman,
        summary.positive,
        summary.negative
    );
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = args.common.resolve()?;
    let dir = &args.common.out;
    let vocab = load_world_vocab(dir)?;
    let dataset = load_dataset(dir, &vocab)?;
    let model_path = args
        .model
        .clone()
        .unwrap_or_else(|| dir.join("policy.json"));
    let params = artifacts::load_policy(&model_path)?;
    let reward: RewardModel = artifacts::load_reward(&dir.join("reward.json"))?;
    let rho = ContextDistribution::from_data(&dataset.retain, &vocab)?;

    let metrics = EvalMetrics {
        mia_auc: mia_auc(&params, &dataset.negatives, &dataset.holdout, cfg.k_percent)?,
        ppl: perplexity(&params, &dataset.retain)?,
        reward_value: reward_value(&params, &reward, &rho),
    };
    artifacts::save_metrics(&dir.join("metrics.json"), &metrics, &cfg.hash())?;
    artifacts::append_manifest(dir, "eval", &cfg, started.elapsed().as_millis())?;
    println!(
        "{{\"mia_auc\":{},\"ppl\":{},\"reward_value\":{}}}",
        metrics.mia_auc, metrics.ppl, metrics.reward_value
    );
    Ok(())
}

/// Dispatch a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::TrainReward(args) => cmd_train_reward(args),
        Command::UnlearnBaseline(args) => cmd_unlearn_baseline(args),
        Command::U2a(args) => cmd_u2a(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Eval(args) => cmd_eval(args),
    }
}
