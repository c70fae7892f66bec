//! Round-driven federation simulator.
//!
//! Synthetic linear-regression shards, a pluggable toy trainer, Bernoulli
//! dropout injection, and metric collection over full protocol rounds. Every
//! piece of randomness — keys, data, dropout, encryption, masks, noise bits —
//! derives from the one configured seed, so a run is reproducible down to the
//! bytes of its metrics CSV.

mod reference;

pub use reference::{run_reference, ReferenceReport};

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ahe::{keygen, AheError, FixedPointParams};
use crate::bhm::{self, BhmError, BhmParams};
use crate::dp::{self, DpError, DpParams, PrivacyLedger};
use crate::protocol::{
    run_round, AsState, ClientState, CspState, ModelShape, NoiseMode, ProtocolError,
    ProtocolParams, RoundError, RoundTranscript,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("client shard is empty")]
    EmptyShard,
    #[error(transparent)]
    Ahe(#[from] AheError),
    #[error(transparent)]
    Bhm(#[from] BhmError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl From<RoundError> for SimError {
    fn from(e: RoundError) -> Self {
        match e {
            RoundError::Protocol(p) => SimError::Protocol(p),
            RoundError::BelowThreshold { survivors, threshold } => SimError::Config(format!(
                "unexpected threshold abort escaped the round loop ({survivors} < {threshold})"
            )),
        }
    }
}

/// Per-client sample counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleSpec {
    /// Every client holds the same number of samples.
    Uniform(usize),
    /// Explicit per-client sizes, exercising weighted averaging.
    PerClient(Vec<usize>),
}

impl SampleSpec {
    pub fn size_of(&self, client: usize) -> usize {
        match self {
            SampleSpec::Uniform(n) => *n,
            SampleSpec::PerClient(v) => v[client],
        }
    }
}

/// Synthetic linear-regression generator spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    /// Ground-truth weights; sampled uniformly from [−1, 1] when absent.
    pub true_weights: Option<Vec<f64>>,
    /// Label noise standard deviation; 0 puts data exactly on the hyperplane.
    pub noise_std: f64,
    pub samples_per_client: SampleSpec,
}

/// Full simulation configuration. All randomness flows from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_clients: usize,
    pub rounds: u32,
    pub dropout_rate: f64,
    /// Aggregation threshold `L`.
    pub threshold: usize,
    pub model_dim: usize,
    pub learning_rate: f64,
    pub local_steps: u32,
    pub data: DataSpec,
    pub dp: DpParams,
    pub bhm: BhmParams,
    pub fixed: FixedPointParams,
    pub modulus_bits: u64,
    pub noise_mode: NoiseMode,
    /// Keep per-round transcripts in the report (memory for auditability).
    pub keep_transcripts: bool,
    pub seed: u64,
}

impl SimConfig {
    /// A small fast-test baseline; callers override what they study.
    pub fn small(seed: u64) -> Self {
        Self {
            num_clients: 8,
            rounds: 5,
            dropout_rate: 0.0,
            threshold: 2,
            model_dim: 9,
            learning_rate: 0.2,
            local_steps: 1,
            data: DataSpec {
                true_weights: None,
                noise_std: 0.01,
                samples_per_client: SampleSpec::Uniform(24),
            },
            dp: DpParams::new(1.0, 1e-5, 1.0, 1.0, 5).expect("valid defaults"),
            bhm: BhmParams::new(2, 1.0).expect("valid defaults"),
            fixed: FixedPointParams::default(),
            modulus_bits: 256,
            noise_mode: NoiseMode::CombinedBits,
            keep_transcripts: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.num_clients == 0 {
            return Err(SimError::Config("num_clients must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(SimError::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.threshold == 0 || self.threshold > self.num_clients {
            return Err(SimError::Config(format!(
                "threshold must lie in [1, num_clients], got {}",
                self.threshold
            )));
        }
        if self.model_dim == 0 {
            return Err(SimError::Config("model_dim must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(SimError::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if let SampleSpec::PerClient(sizes) = &self.data.samples_per_client {
            if sizes.len() != self.num_clients {
                return Err(SimError::Config(format!(
                    "samples_per_client lists {} clients, config has {}",
                    sizes.len(),
                    self.num_clients
                )));
            }
        }
        for c in 0..self.num_clients {
            if self.data.samples_per_client.size_of(c) == 0 {
                return Err(SimError::Config(format!("client {c} has an empty shard")));
            }
        }
        if let Some(w) = &self.data.true_weights {
            if w.len() != self.model_dim {
                return Err(SimError::Config(format!(
                    "true_weights has {} entries, model_dim is {}",
                    w.len(),
                    self.model_dim
                )));
            }
        }
        self.fixed.validate()?;
        Ok(())
    }

    /// Warn when the expected survivor count cannot reach the threshold.
    pub fn feasibility_warning(&self) -> Option<String> {
        let expected = self.num_clients as f64 * (1.0 - self.dropout_rate);
        if (self.threshold as f64) > expected {
            Some(format!(
                "threshold {} exceeds the expected survivor count {:.1} \
                 ({} clients at {:.0}% dropout); most rounds will abort",
                self.threshold,
                expected,
                self.num_clients,
                self.dropout_rate * 100.0
            ))
        } else {
            None
        }
    }
}

/// One client's synthetic data shard.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// The toy task: linear regression `y ≈ w·x` under mean squared error.
/// Stands in for the large models the protocol is agnostic to.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub weights: Vec<f64>,
}

impl ToyModel {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, xi)| w * xi).sum()
    }

    /// Mean squared error over a shard.
    pub fn loss(&self, shard: &Shard) -> f64 {
        let n = shard.len().max(1) as f64;
        shard
            .features
            .iter()
            .zip(&shard.targets)
            .map(|(x, y)| {
                let r = self.predict(x) - y;
                r * r
            })
            .sum::<f64>()
            / n
    }

    /// MSE gradient: `(2/N) Σ (w·x − y)·x`.
    pub fn gradient(&self, shard: &Shard) -> Vec<f64> {
        let n = shard.len() as f64;
        let mut grad = vec![0.0; self.weights.len()];
        for (x, y) in shard.features.iter().zip(&shard.targets) {
            let r = self.predict(x) - y;
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += 2.0 * r * xi / n;
            }
        }
        grad
    }
}

/// Randomness streams hanging off the configured seed.
const STREAM_TRUE_WEIGHTS: u64 = 1;
const STREAM_KEYGEN: u64 = 2;
const STREAM_DATA_BASE: u64 = 1 << 20;
const STREAM_DROPOUT_BASE: u64 = 1 << 21;

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable per-round seed for the protocol's own randomness.
fn round_seed(seed: u64, round: u32) -> u64 {
    // SplitMix64 finalizer over (seed, round).
    let mut z = seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The ground-truth weight vector for a config.
pub fn true_weights(config: &SimConfig) -> Vec<f64> {
    match &config.data.true_weights {
        Some(w) => w.clone(),
        None => {
            let mut rng = stream_rng(config.seed, STREAM_TRUE_WEIGHTS);
            (0..config.model_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect()
        }
    }
}

/// Generate every client's shard. Deterministic in the config seed; shard
/// sizes follow the configured per-client counts.
pub fn generate_data(config: &SimConfig) -> Result<Vec<Shard>, SimError> {
    config.validate()?;
    let truth = true_weights(config);
    let mut shards = Vec::with_capacity(config.num_clients);
    for client in 0..config.num_clients {
        let mut rng = stream_rng(config.seed, STREAM_DATA_BASE + client as u64);
        let n = config.data.samples_per_client.size_of(client);
        let mut features = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        let noise = if config.data.noise_std > 0.0 {
            let mut bits = vec![0u8; n * dp::BYTES_PER_GAUSSIAN];
            rng.fill(&mut bits[..]);
            dp::gaussians_from_bits(&bits, n)?
                .into_iter()
                .map(|z| z * config.data.noise_std)
                .collect()
        } else {
            vec![0.0; n]
        };
        for noise_term in noise.into_iter().take(n) {
            let x: Vec<f64> = (0..config.model_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let y: f64 = truth.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>() + noise_term;
            features.push(x);
            targets.push(y);
        }
        shards.push(Shard { features, targets });
    }
    Ok(shards)
}

/// Run `local_steps` gradient steps from the model's current weights and
/// return the weight delta `ΔW = −η·Σ gradients`.
pub fn local_train(
    model: &ToyModel,
    shard: &Shard,
    learning_rate: f64,
    local_steps: u32,
) -> Result<Vec<f64>, SimError> {
    if shard.is_empty() {
        return Err(SimError::EmptyShard);
    }
    let mut current = model.clone();
    for _ in 0..local_steps {
        let grad = current.gradient(shard);
        for (w, g) in current.weights.iter_mut().zip(&grad) {
            *w -= learning_rate * g;
        }
    }
    Ok(current
        .weights
        .iter()
        .zip(&model.weights)
        .map(|(after, before)| after - before)
        .collect())
}

/// One row of the per-round metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub completed: bool,
    pub abort_reason: Option<String>,
    pub survivors: usize,
    pub participating_weight: u64,
    /// MSE of the post-round global model over all clients' data.
    pub global_loss: f64,
    pub mean_update_norm_pre_clip: f64,
    pub mean_update_norm_post_clip: f64,
    /// Fraction of surviving clients whose update was actually clipped.
    pub clipped_fraction: f64,
    /// Mean Frobenius error of the block-Hankel projection over survivors.
    pub compression_error: f64,
    pub epsilon_total: f64,
    pub delta_total: f64,
}

/// Everything a simulation run produces.
#[derive(Debug, Clone)]
pub struct SimReport {
    pub config: SimConfig,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub metrics: Vec<RoundMetrics>,
    pub final_weights: Vec<f64>,
    /// Global weights after each completed-or-skipped round.
    pub weight_trajectory: Vec<Vec<f64>>,
    pub ledger: PrivacyLedger,
    pub transcripts: Vec<RoundTranscript>,
}

impl SimReport {
    pub fn completed_rounds(&self) -> usize {
        self.metrics.iter().filter(|m| m.completed).count()
    }

    pub fn skipped_rounds(&self) -> usize {
        self.metrics.len() - self.completed_rounds()
    }

    /// Metrics CSV with a stable documented column order.
    pub fn write_metrics_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(METRICS_COLUMNS)?;
        for m in &self.metrics {
            w.write_record([
                m.round.to_string(),
                m.completed.to_string(),
                m.abort_reason.clone().unwrap_or_default(),
                m.survivors.to_string(),
                m.participating_weight.to_string(),
                format!("{:?}", m.global_loss),
                format!("{:?}", m.mean_update_norm_pre_clip),
                format!("{:?}", m.mean_update_norm_post_clip),
                format!("{:?}", m.clipped_fraction),
                format!("{:?}", m.compression_error),
                format!("{:?}", m.epsilon_total),
                format!("{:?}", m.delta_total),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const METRICS_COLUMNS: [&str; 12] = [
    "round",
    "completed",
    "abort_reason",
    "survivors",
    "participating_weight",
    "global_loss",
    "mean_update_norm_pre_clip",
    "mean_update_norm_post_clip",
    "clipped_fraction",
    "compression_error",
    "epsilon_total",
    "delta_total",
];

/// Global loss: MSE of `weights` over the union of all shards.
pub fn global_loss(weights: &[f64], shards: &[Shard]) -> f64 {
    let model = ToyModel::new(weights.to_vec());
    let mut total = 0.0;
    let mut count = 0usize;
    for shard in shards {
        total += model.loss(shard) * shard.len() as f64;
        count += shard.len();
    }
    total / count.max(1) as f64
}

/// Draw the per-round dropout set: i.i.d. Bernoulli per client per round.
pub fn dropout_set(config: &SimConfig, round: u32) -> HashSet<u32> {
    let mut rng = stream_rng(config.seed, STREAM_DROPOUT_BASE + round as u64);
    (0..config.num_clients as u32)
        .filter(|_| rng.gen::<f64>() < config.dropout_rate)
        .collect()
}

fn protocol_params(config: &SimConfig) -> ProtocolParams {
    ProtocolParams {
        shape: ModelShape::for_dim(config.model_dim),
        bhm: config.bhm,
        fixed: config.fixed,
        dp: config.dp,
        noise_mode: config.noise_mode,
    }
}

/// The key pair a simulation at this config generates. Deterministic in the
/// seed, so audits can re-derive the ring modulus from the config alone.
pub fn keypair_for_config(config: &SimConfig) -> Result<crate::ahe::KeyPair, SimError> {
    let mut keygen_rng = stream_rng(config.seed, STREAM_KEYGEN);
    Ok(keygen(config.modulus_bits, &mut keygen_rng)?)
}

/// Run a full simulation through the secure protocol.
///
/// Skipped (threshold-aborted) rounds are logged but do not advance the
/// model and do not consume privacy budget. Hard protocol failures abort the
/// run.
pub fn run_simulation(config: &SimConfig) -> Result<SimReport, SimError> {
    config.validate()?;
    let shards = generate_data(config)?;
    let params = protocol_params(config);

    let keypair = keypair_for_config(config)?;
    config.fixed.ensure_fits(keypair.public_key().modulus())?;
    let csp_pk = keypair.public_key().clone();
    let mut csp_state = CspState::new(keypair);

    let initial_weights = vec![0.0; config.model_dim];
    let mut clients: Vec<ClientState> = (0..config.num_clients)
        .map(|i| {
            ClientState::new(
                i as u32,
                shards[i].len() as u64,
                csp_pk.clone(),
                initial_weights.clone(),
                params.clone(),
            )
        })
        .collect();
    let mut as_state = AsState::new(
        csp_pk,
        config.threshold,
        initial_weights.clone(),
        params.clone(),
    );

    let initial_loss = global_loss(&initial_weights, &shards);
    let mut ledger = PrivacyLedger::new();
    let mut metrics = Vec::with_capacity(config.rounds as usize);
    let mut transcripts = Vec::new();
    let mut trajectory = Vec::with_capacity(config.rounds as usize);

    for round in 0..config.rounds {
        let dropout = dropout_set(config, round);
        let mut updates = vec![vec![0.0; config.model_dim]; config.num_clients];
        let mut norms_pre = Vec::new();
        let mut norms_post = Vec::new();
        let mut clipped_count = 0usize;
        let mut compression_err = Vec::new();
        for (i, client) in clients.iter().enumerate() {
            if dropout.contains(&client.client_id) {
                continue;
            }
            let model = ToyModel::new(client.weights.clone());
            let delta = local_train(&model, &shards[i], config.learning_rate, config.local_steps)?;
            let pre = dp::l2_norm(&delta);
            let clipped = dp::clip(&delta, config.dp.clip_bound);
            let post = dp::l2_norm(&clipped);
            if pre > config.dp.clip_bound {
                clipped_count += 1;
            }
            norms_pre.push(pre);
            norms_post.push(post);
            let matrix = params.shape.to_matrix(&clipped)?;
            let projected = bhm::decompress(&bhm::compress(&matrix.view(), &params.bhm)?)?;
            let err = (&projected - &matrix)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            compression_err.push(err);
            updates[i] = delta;
        }
        let survivors = norms_pre.len();

        let outcome = run_round(
            &mut clients,
            &updates,
            &mut as_state,
            &mut csp_state,
            &dropout,
            round_seed(config.seed, round),
        );
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        match outcome {
            Ok(out) => {
                ledger.record(round, config.dp.epsilon, config.dp.delta);
                let (epsilon_total, delta_total) = ledger.total();
                metrics.push(RoundMetrics {
                    round,
                    completed: true,
                    abort_reason: None,
                    survivors,
                    participating_weight: out.participating_weight,
                    global_loss: global_loss(&out.new_weights, &shards),
                    mean_update_norm_pre_clip: mean(&norms_pre),
                    mean_update_norm_post_clip: mean(&norms_post),
                    clipped_fraction: if survivors == 0 {
                        0.0
                    } else {
                        clipped_count as f64 / survivors as f64
                    },
                    compression_error: mean(&compression_err),
                    epsilon_total,
                    delta_total,
                });
                if config.keep_transcripts {
                    transcripts.push(out.transcript);
                }
                trajectory.push(out.new_weights);
            }
            Err(RoundError::BelowThreshold { survivors: s, threshold }) => {
                let (epsilon_total, delta_total) = ledger.total();
                metrics.push(RoundMetrics {
                    round,
                    completed: false,
                    abort_reason: Some(format!("below-threshold {s}<{threshold}")),
                    survivors: s,
                    participating_weight: 0,
                    global_loss: global_loss(&as_state.global_weights, &shards),
                    mean_update_norm_pre_clip: mean(&norms_pre),
                    mean_update_norm_post_clip: mean(&norms_post),
                    clipped_fraction: if survivors == 0 {
                        0.0
                    } else {
                        clipped_count as f64 / survivors as f64
                    },
                    compression_error: mean(&compression_err),
                    epsilon_total,
                    delta_total,
                });
                trajectory.push(as_state.global_weights.clone());
            }
            Err(e) => return Err(e.into()),
        }
    }

    let final_weights = as_state.global_weights.clone();
    Ok(SimReport {
        config: config.clone(),
        initial_loss,
        final_loss: global_loss(&final_weights, &shards),
        metrics,
        final_weights,
        weight_trajectory: trajectory,
        ledger,
        transcripts,
    })
}

/// One row of a dropout sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub dropout_rate: f64,
    pub completed_rounds: usize,
    pub skipped_rounds: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub mean_survivors: f64,
    /// More rounds aborted than completed.
    pub frequently_aborting: bool,
}

/// Dropout-rate comparison over a shared base seed.
#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_COLUMNS: [&str; 7] = [
    "dropout_rate",
    "completed_rounds",
    "skipped_rounds",
    "initial_loss",
    "final_loss",
    "mean_survivors",
    "frequently_aborting",
];

impl SweepTable {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(SWEEP_COLUMNS)?;
        for row in &self.rows {
            w.write_record([
                format!("{:?}", row.dropout_rate),
                row.completed_rounds.to_string(),
                row.skipped_rounds.to_string(),
                format!("{:?}", row.initial_loss),
                format!("{:?}", row.final_loss),
                format!("{:?}", row.mean_survivors),
                row.frequently_aborting.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run [`run_simulation`] once per dropout rate on the shared base seed and
/// tabulate the outcomes.
pub fn compare_dropout_sweep(config: &SimConfig, rates: &[f64]) -> Result<SweepTable, SimError> {
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        if !(0.0..1.0).contains(&rate) {
            return Err(SimError::Config(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        let mut cfg = config.clone();
        cfg.dropout_rate = rate;
        let report = run_simulation(&cfg)?;
        let completed = report.completed_rounds();
        let skipped = report.skipped_rounds();
        let mean_survivors = if report.metrics.is_empty() {
            0.0
        } else {
            report.metrics.iter().map(|m| m.survivors as f64).sum::<f64>()
                / report.metrics.len() as f64
        };
        rows.push(SweepRow {
            dropout_rate: rate,
            completed_rounds: completed,
            skipped_rounds: skipped,
            initial_loss: report.initial_loss,
            final_loss: report.final_loss,
            mean_survivors,
            frequently_aborting: skipped > completed,
        });
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests;
