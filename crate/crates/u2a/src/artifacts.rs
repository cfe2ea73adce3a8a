//! Versioned on-disk artifacts.
//!
//! Every JSON artifact carries a `format` tag and the config hash that
//! produced it; reals are serialized at 17 significant digits so f64 values
//! round-trip losslessly. Writes go to a temp file and rename into place, so
//! failures never leave partial artifacts.

use crate::analysis::{GroupRecord, ImpactRecord};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::EvalMetrics;
use crate::policy::{PolicyParams, TokenSeq, Vocab};
use crate::reward::{PreferencePair, RewardModel};
use crate::selector::{StopReason, TraceRecord, U2aRun};
use crate::world::SyntheticWorldSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const POLICY_FORMAT: &str = "u2a-policy-v1";
pub const REWARD_FORMAT: &str = "u2a-reward-v1";
pub const RUN_FORMAT: &str = "u2a-run-v1";
pub const WORLD_FORMAT: &str = "u2a-world-v1";
pub const METRICS_FORMAT: &str = "u2a-metrics-v1";

struct SigDigits;

impl serde_json::ser::Formatter for SigDigits {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serialize with floats at 17 significant digits.
pub fn to_json(value: &impl Serialize) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigits);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("json is utf-8"))
}

/// Format one real for CSV cells, same 17-significant-digit convention.
pub fn fmt_real(value: f64) -> String {
    format!("{value:.16e}")
}

/// Write bytes to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json_atomic(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = to_json(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn check_format(path: &Path, got: &str, want: &str) -> Result<()> {
    if got != want {
        return Err(Error::Format(format!(
            "{}: format '{got}', expected '{want}'",
            path.display()
        )));
    }
    Ok(())
}

fn to_rows(flat: &[f64], cols: usize) -> Vec<Vec<f64>> {
    flat.chunks(cols).map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>], vocab: Vocab, path: &Path) -> Result<Vec<f64>> {
    if rows.len() != vocab.n_contexts() || rows.iter().any(|r| r.len() != vocab.size()) {
        return Err(Error::Format(format!(
            "{}: table shape does not match vocab {}",
            path.display(),
            vocab.size()
        )));
    }
    Ok(rows.iter().flatten().cloned().collect())
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    vocab: usize,
    theta: Vec<Vec<f64>>,
    #[serde(default)]
    config_hash: String,
}

pub fn save_policy(path: &Path, params: &PolicyParams, config_hash: &str) -> Result<()> {
    let file = PolicyFile {
        format: POLICY_FORMAT.into(),
        vocab: params.vocab().size(),
        theta: to_rows(params.as_flat(), params.vocab().size()),
        config_hash: config_hash.into(),
    };
    write_json_atomic(path, &file)
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    let file: PolicyFile = read_json(path)?;
    check_format(path, &file.format, POLICY_FORMAT)?;
    let vocab = Vocab::new(file.vocab)?;
    PolicyParams::from_flat(vocab, from_rows(&file.theta, vocab, path)?)
}

#[derive(Serialize, Deserialize)]
struct RewardFile {
    format: String,
    vocab: usize,
    w: Vec<Vec<f64>>,
    #[serde(default)]
    config_hash: String,
}

pub fn save_reward(path: &Path, model: &RewardModel, config_hash: &str) -> Result<()> {
    let file = RewardFile {
        format: REWARD_FORMAT.into(),
        vocab: model.vocab().size(),
        w: to_rows(model.as_flat(), model.vocab().size()),
        config_hash: config_hash.into(),
    };
    write_json_atomic(path, &file)
}

pub fn load_reward(path: &Path) -> Result<RewardModel> {
    let file: RewardFile = read_json(path)?;
    check_format(path, &file.format, REWARD_FORMAT)?;
    let vocab = Vocab::new(file.vocab)?;
    RewardModel::from_flat(vocab, from_rows(&file.w, vocab, path)?)
}

/// Run artifact. Wall time stays out of this file (it lives in the trace CSV
/// and the manifest) so identical runs are byte-identical.
#[derive(Serialize, Deserialize)]
pub struct RunFile {
    pub format: String,
    pub config_hash: String,
    pub vocab: usize,
    pub selected: Vec<usize>,
    pub omega: Vec<f64>,
    pub support: Vec<usize>,
    pub theta_final: Vec<Vec<f64>>,
    pub g_final: f64,
    pub j_final: f64,
    pub stop_reason: StopReason,
    pub trace: Vec<TraceRecord>,
}

pub fn save_run(path: &Path, run: &U2aRun, config_hash: &str) -> Result<()> {
    let vocab = run.theta_final.vocab();
    let file = RunFile {
        format: RUN_FORMAT.into(),
        config_hash: config_hash.into(),
        vocab: vocab.size(),
        selected: run.selected.clone(),
        omega: run.weights.omega().to_vec(),
        support: run.weights.support().to_vec(),
        theta_final: to_rows(run.theta_final.as_flat(), vocab.size()),
        g_final: run.g_final,
        j_final: run.j_final,
        stop_reason: run.stop_reason,
        trace: run.trace.clone(),
    };
    write_json_atomic(path, &file)
}

pub fn load_run(path: &Path) -> Result<RunFile> {
    let file: RunFile = read_json(path)?;
    check_format(path, &file.format, RUN_FORMAT)?;
    Ok(file)
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    format: String,
    config_hash: String,
    spec: SyntheticWorldSpec,
}

pub fn save_world_spec(path: &Path, spec: &SyntheticWorldSpec, config_hash: &str) -> Result<()> {
    let file = WorldFile {
        format: WORLD_FORMAT.into(),
        config_hash: config_hash.into(),
        spec: spec.clone(),
    };
    write_json_atomic(path, &file)
}

pub fn load_world_spec(path: &Path) -> Result<SyntheticWorldSpec> {
    let file: WorldFile = read_json(path)?;
    check_format(path, &file.format, WORLD_FORMAT)?;
    file.spec.validate()?;
    Ok(file.spec)
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    format: &'a str,
    config_hash: &'a str,
    mia_auc: f64,
    ppl: f64,
    reward_value: f64,
}

pub fn save_metrics(path: &Path, metrics: &EvalMetrics, config_hash: &str) -> Result<()> {
    let file = MetricsFile {
        format: METRICS_FORMAT,
        config_hash,
        mia_auc: metrics.mia_auc,
        ppl: metrics.ppl,
        reward_value: metrics.reward_value,
    };
    write_json_atomic(path, &file)
}

#[derive(Serialize, Deserialize)]
struct SeqRow {
    tokens: Vec<usize>,
}

pub fn save_seqs_jsonl(path: &Path, seqs: &[TokenSeq]) -> Result<()> {
    let mut out = String::new();
    for seq in seqs {
        out.push_str(&serde_json::to_string(&SeqRow {
            tokens: seq.tokens.clone(),
        })?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_seqs_jsonl(path: &Path, vocab: &Vocab) -> Result<Vec<TokenSeq>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: SeqRow = serde_json::from_str(line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(TokenSeq::new(row.tokens, vocab).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?);
    }
    Ok(out)
}

pub fn save_prefs_jsonl(path: &Path, prefs: &[PreferencePair]) -> Result<()> {
    let mut out = String::new();
    for p in prefs {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_prefs_jsonl(path: &Path, vocab: &Vocab) -> Result<Vec<PreferencePair>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: PreferencePair = serde_json::from_str(line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        pair.validate(vocab)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(pair);
    }
    Ok(out)
}

/// Trace CSV: `iter,g,J,selected,cg_iters,damped,inner_steps,ms`.
pub fn save_trace_csv(path: &Path, run: &U2aRun) -> Result<()> {
    let mut out = String::from("iter,g,J,selected,cg_iters,damped,inner_steps,ms\n");
    for rec in &run.trace {
        let selected = rec
            .selected
            .map(|s| s.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            rec.iter,
            fmt_real(rec.g),
            fmt_real(rec.j),
            selected,
            rec.cg_iters,
            rec.damped as u8,
            rec.inner_steps,
            rec.ms,
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// impact.csv: `index,delta_j_est,delta_j_true,grad_j_norm,grad_l_norm,cos_phi,low_frac`.
pub fn save_impact_csv(path: &Path, records: &[ImpactRecord]) -> Result<()> {
    let mut out =
        String::from("index,delta_j_est,delta_j_true,grad_j_norm,grad_l_norm,cos_phi,low_frac\n");
    for r in records {
        let truth = r.delta_j_true.map(fmt_real).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.index,
            fmt_real(r.delta_j_est),
            truth,
            fmt_real(r.grad_j_norm),
            fmt_real(r.grad_l_norm),
            fmt_real(r.cos_phi),
            fmt_real(r.low_reward_fraction),
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// groups.csv: `group,low_frac,delta_j_true,delta_j_true_unit` (the last
/// column is the per-sample-mass-one convention).
pub fn save_groups_csv(path: &Path, records: &[GroupRecord]) -> Result<()> {
    let mut out = String::from("group,low_frac,delta_j_true,delta_j_true_unit\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.group,
            fmt_real(r.low_reward_fraction),
            fmt_real(r.delta_j_true),
            fmt_real(r.delta_j_true_unit),
        ));
    }
    write_atomic(path, out.as_bytes())
}

#[derive(Serialize)]
struct ManifestLine<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    elapsed_ms: u128,
}

/// Append one provenance line to `manifest.jsonl` in `out_dir`.
pub fn append_manifest(
    out_dir: &Path,
    command: &str,
    config: &RunConfig,
    elapsed_ms: u128,
) -> Result<()> {
    let hash = config.hash();
    let line = ManifestLine {
        command,
        config_hash: &hash,
        seed: config.seed,
        elapsed_ms,
    };
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join("manifest.jsonl"))?;
    writeln!(f, "{}", serde_json::to_string(&line)?)?;
    Ok(())
}
