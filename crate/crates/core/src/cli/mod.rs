//! Experiment configuration and the `run` / `sweep` / `selfcheck` commands.
//!
//! Experiments are described by a single flat TOML file (schema below);
//! command-line flags override individual keys. Every output lands under the
//! configured output directory — resolved against `SECFED_OUTPUT_ROOT` when
//! that variable is set — and the effective config is echoed there so a run
//! can be reproduced from its artifacts alone.
//!
//! ```toml
//! # experiment.toml — all keys optional unless noted
//! num_clients = 10
//! rounds = 20
//! dropout_rate = 0.0
//! threshold = 4                  # aggregation threshold L
//! model_dim = 9
//! learning_rate = 0.2
//! local_steps = 1
//! samples_per_client = 24        # int, or array with one entry per client
//! data_noise_std = 0.01
//! # true_weights = [0.1, ...]    # optional, length model_dim
//! seed = 42
//! modulus_bits = 512
//! frac_bits = 32
//! slack_bits = 20
//! max_magnitude = 1024.0
//! epsilon = 1.0
//! delta = 1e-5
//! clip_bound = 1.0
//! scaling_factor = 1.0           # κ
//! block_size = 2                 # l
//! noise_mode = "combined-bits"   # or "two-party-gaussian"
//! sensitivity_divide_by_l = false
//! # sigma_override = 0.0         # optional: fix σ directly (noiseless test runs)
//! output_dir = "runs/experiment"
//! write_transcripts = false
//! ```

pub mod selfcheck;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::ahe::FixedPointParams;
use crate::bhm::BhmParams;
use crate::dp::DpParams;
use crate::fedsim::{
    compare_dropout_sweep, run_simulation, DataSpec, SampleSpec, SimConfig, SimReport,
};
use crate::protocol::NoiseMode;

/// Environment variable that rebases every output directory.
pub const OUTPUT_ROOT_ENV: &str = "SECFED_OUTPUT_ROOT";

fn default_num_clients() -> usize {
    10
}
fn default_rounds() -> u32 {
    20
}
fn default_threshold() -> usize {
    4
}
fn default_model_dim() -> usize {
    9
}
fn default_learning_rate() -> f64 {
    0.2
}
fn default_local_steps() -> u32 {
    1
}
fn default_samples() -> SamplesKey {
    SamplesKey::Uniform(24)
}
fn default_data_noise_std() -> f64 {
    0.01
}
fn default_seed() -> u64 {
    42
}
fn default_modulus_bits() -> u64 {
    2048
}
fn default_frac_bits() -> u32 {
    32
}
fn default_slack_bits() -> u32 {
    20
}
fn default_max_magnitude() -> f64 {
    1024.0
}
fn default_epsilon() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    1e-5
}
fn default_clip_bound() -> f64 {
    1.0
}
fn default_scaling_factor() -> f64 {
    1.0
}
fn default_block_size() -> usize {
    2
}
fn default_output_dir() -> String {
    "runs/experiment".into()
}

/// `samples_per_client`: a single count or one per client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SamplesKey {
    Uniform(usize),
    PerClient(Vec<usize>),
}

/// The flat on-disk experiment schema. Unknown keys are rejected with the
/// offending names and line numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_num_clients")]
    pub num_clients: usize,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default = "default_threshold")]
    pub threshold: usize,
    #[serde(default = "default_model_dim")]
    pub model_dim: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_local_steps")]
    pub local_steps: u32,
    #[serde(default = "default_samples")]
    pub samples_per_client: SamplesKey,
    #[serde(default = "default_data_noise_std")]
    pub data_noise_std: f64,
    #[serde(default)]
    pub true_weights: Option<Vec<f64>>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_modulus_bits")]
    pub modulus_bits: u64,
    #[serde(default = "default_frac_bits")]
    pub frac_bits: u32,
    #[serde(default = "default_slack_bits")]
    pub slack_bits: u32,
    #[serde(default = "default_max_magnitude")]
    pub max_magnitude: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_clip_bound")]
    pub clip_bound: f64,
    #[serde(default = "default_scaling_factor")]
    pub scaling_factor: f64,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    #[serde(default)]
    pub sensitivity_divide_by_l: bool,
    /// Fix σ directly instead of deriving it from (ε, δ). Intended for
    /// noiseless (σ = 0) correctness runs.
    #[serde(default)]
    pub sigma_override: Option<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub write_transcripts: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config is fully defaulted")
    }
}

const KNOWN_KEYS: [&str; 25] = [
    "num_clients",
    "rounds",
    "dropout_rate",
    "threshold",
    "model_dim",
    "learning_rate",
    "local_steps",
    "samples_per_client",
    "data_noise_std",
    "true_weights",
    "seed",
    "modulus_bits",
    "frac_bits",
    "slack_bits",
    "max_magnitude",
    "epsilon",
    "delta",
    "clip_bound",
    "scaling_factor",
    "block_size",
    "noise_mode",
    "sensitivity_divide_by_l",
    "sigma_override",
    "output_dir",
    "write_transcripts",
];

fn line_of_key(text: &str, key: &str) -> Option<usize> {
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim_start();
        if trimmed.starts_with(key)
            && trimmed[key.len()..].trim_start().starts_with(['=', '.'])
        {
            return Some(idx + 1);
        }
    }
    None
}

/// Parse an experiment file, rejecting unknown keys with name + line info
/// for every offender at once.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = text.parse().context("TOML syntax error")?;
    let known: BTreeSet<&str> = KNOWN_KEYS.into_iter().collect();
    let unknown: Vec<String> = table
        .keys()
        .filter(|k| !known.contains(k.as_str()))
        .map(|k| match line_of_key(text, k) {
            Some(line) => format!("unknown key `{k}` (line {line})"),
            None => format!("unknown key `{k}`"),
        })
        .collect();
    if !unknown.is_empty() {
        bail!("invalid config: {}", unknown.join(", "));
    }
    let config: ExperimentConfig = toml::from_str(text).context("invalid config value")?;
    config.to_sim_config()?; // surface range errors at load time
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

impl ExperimentConfig {
    /// Lower to the simulator's config, deriving σ (or honoring the
    /// override) and validating every range.
    pub fn to_sim_config(&self) -> Result<SimConfig> {
        let mut dp = DpParams::new(
            self.epsilon,
            self.delta,
            self.clip_bound,
            self.scaling_factor,
            self.rounds,
        )?
        .with_sensitivity_divide_by_l(self.sensitivity_divide_by_l);
        if let Some(sigma) = self.sigma_override {
            if !(sigma.is_finite() && sigma >= 0.0) {
                bail!("sigma_override must be non-negative, got {sigma}");
            }
            dp.sigma = sigma;
        }
        let config = SimConfig {
            num_clients: self.num_clients,
            rounds: self.rounds,
            dropout_rate: self.dropout_rate,
            threshold: self.threshold,
            model_dim: self.model_dim,
            learning_rate: self.learning_rate,
            local_steps: self.local_steps,
            data: DataSpec {
                true_weights: self.true_weights.clone(),
                noise_std: self.data_noise_std,
                samples_per_client: match &self.samples_per_client {
                    SamplesKey::Uniform(n) => SampleSpec::Uniform(*n),
                    SamplesKey::PerClient(v) => SampleSpec::PerClient(v.clone()),
                },
            },
            dp,
            bhm: BhmParams::new(self.block_size, self.scaling_factor)?,
            fixed: FixedPointParams::new(self.frac_bits, self.max_magnitude, self.slack_bits)?,
            modulus_bits: self.modulus_bits,
            noise_mode: self.noise_mode,
            keep_transcripts: self.write_transcripts,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Flag-level overrides; flags beat file keys.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub rounds: Option<u32>,
    pub dropout_rate: Option<f64>,
    pub output_dir: Option<String>,
}

impl CliOverrides {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(rounds) = self.rounds {
            config.rounds = rounds;
        }
        if let Some(rate) = self.dropout_rate {
            config.dropout_rate = rate;
        }
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
    }
}

/// Resolve the output directory, honoring [`OUTPUT_ROOT_ENV`].
pub fn resolve_output_dir(config: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(&config.output_dir),
        None => PathBuf::from(&config.output_dir),
    }
}

fn echo_config(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let text = toml::to_string_pretty(config).context("serializing config echo")?;
    fs::write(dir.join("config.toml"), text).context("writing config echo")?;
    Ok(())
}

fn write_run_outputs(report: &SimReport, dir: &Path) -> Result<()> {
    let metrics =
        fs::File::create(dir.join("metrics.csv")).context("creating metrics.csv")?;
    report
        .write_metrics_csv(metrics)
        .context("writing metrics.csv")?;
    let ledger = fs::File::create(dir.join("ledger.csv")).context("creating ledger.csv")?;
    report.ledger.write_csv(ledger).context("writing ledger.csv")?;
    if !report.transcripts.is_empty() {
        let mut file = fs::File::create(dir.join("transcripts.jsonl"))
            .context("creating transcripts.jsonl")?;
        for t in &report.transcripts {
            t.to_jsonl(&mut file).context("writing transcripts.jsonl")?;
        }
    }
    Ok(())
}

/// `secfed run <config>` — execute one simulation, write metrics, ledger,
/// config echo and optional transcripts. Exit code 0 on success, 2 when more
/// rounds aborted than completed.
pub fn cmd_run(config_path: &Path, overrides: &CliOverrides) -> Result<i32> {
    let mut config = load_config(config_path)?;
    overrides.apply(&mut config);
    let sim = config.to_sim_config()?;
    if let Some(warning) = sim.feasibility_warning() {
        eprintln!("warning: {warning}");
    }
    let dir = resolve_output_dir(&config);
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating output dir {}", dir.display()))?;
    let report = run_simulation(&sim)?;
    echo_config(&config, &dir)?;
    write_run_outputs(&report, &dir)?;
    let completed = report.completed_rounds();
    let skipped = report.skipped_rounds();
    println!(
        "run complete: {} rounds ({} completed, {} skipped), loss {:.6} -> {:.6}, outputs in {}",
        report.metrics.len(),
        completed,
        skipped,
        report.initial_loss,
        report.final_loss,
        dir.display()
    );
    if skipped > completed {
        eprintln!(
            "error: abort-dominated run ({skipped} skipped vs {completed} completed); \
             lower the threshold or the dropout rate"
        );
        return Ok(2);
    }
    Ok(0)
}

/// Parse `--dropout-rates 0,0.25,0.5`.
pub fn parse_rates(raw: &str) -> Result<Vec<f64>> {
    let mut rates = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let rate: f64 = part
            .parse()
            .with_context(|| format!("malformed dropout rate `{part}`"))?;
        if !(0.0..1.0).contains(&rate) {
            bail!("dropout rate {rate} outside [0, 1)");
        }
        rates.push(rate);
    }
    if rates.is_empty() {
        bail!("no dropout rates supplied");
    }
    Ok(rates)
}

/// `secfed sweep <config> --dropout-rates ...` — one simulation per rate on
/// a shared base seed, tabulated to sweep.csv.
pub fn cmd_sweep(config_path: &Path, rates_raw: &str, overrides: &CliOverrides) -> Result<i32> {
    let rates = parse_rates(rates_raw)?;
    let mut config = load_config(config_path)?;
    overrides.apply(&mut config);
    let sim = config.to_sim_config()?;
    let dir = resolve_output_dir(&config);
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating output dir {}", dir.display()))?;
    let table = compare_dropout_sweep(&sim, &rates)?;
    echo_config(&config, &dir)?;
    let file = fs::File::create(dir.join("sweep.csv")).context("creating sweep.csv")?;
    table.write_csv(file).context("writing sweep.csv")?;
    println!("sweep complete: {} rates, outputs in {}", rates.len(), dir.display());
    for row in &table.rows {
        println!(
            "  rate {:>5.2}: {} completed / {} skipped, final loss {:.6}{}",
            row.dropout_rate,
            row.completed_rounds,
            row.skipped_rounds,
            row.final_loss,
            if row.frequently_aborting {
                "  [frequently aborting]"
            } else {
                ""
            }
        );
    }
    Ok(0)
}

/// `secfed selfcheck` — run the fast invariant suite, print a table, exit
/// nonzero on any failure.
pub fn cmd_selfcheck() -> i32 {
    let outcomes = selfcheck::run_selfcheck(None);
    let mut failed = 0;
    println!("{:<28} {:<6} detail", "check", "result");
    for o in &outcomes {
        println!(
            "{:<28} {:<6} {}",
            o.name,
            if o.passed { "pass" } else { "FAIL" },
            o.detail
        );
        if !o.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} check(s) failed");
        1
    } else {
        0
    }
}
