//! Differential privacy layer: L2 clipping, Gaussian noise-scale derivation,
//! Box-Muller sampling over a counter-based generator, and per-round privacy
//! bookkeeping under basic composition.
//!
//! The noise scale follows the Gaussian mechanism: `σ = sqrt(2·ln(1.25/δ))/ε`
//! gives (ε, δ)-DP for a query of sensitivity `S`, with noise `N(0, (σ·S)²)`.
//! Here `S = κ·C`: each client update is clipped to L2 norm `C` and scaled by
//! the compression factor `κ`, and the block-Hankel projection never
//! increases the L2 norm of the retained sequence values.
//!
//! Everything in this module is a pure function of its inputs and the
//! supplied seed or bit material.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("clip bound must be positive, got {0}")]
    InvalidClipBound(f64),
    #[error("scaling factor must be positive, got {0}")]
    InvalidScalingFactor(f64),
    #[error("noise std must be non-negative, got {0}")]
    NegativeStd(f64),
    #[error("need at least {needed} random bytes (128 bits per output), got {got}")]
    InsufficientBits { needed: usize, got: usize },
}

/// Privacy parameters for one experiment: `(ε, δ)` per round, the clipping
/// bound `C`, the compression scaling factor `κ`, the derived per-unit noise
/// scale `σ`, and the budgeted round count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    pub epsilon: f64,
    pub delta: f64,
    pub clip_bound: f64,
    pub scaling_factor: f64,
    /// Derived: `sqrt(2·ln(1.25/δ))/ε`.
    pub sigma: f64,
    pub rounds_budgeted: u32,
    /// Divide the sensitivity by the participant count instead of using the
    /// conservative `κC` bound. Off by default.
    pub sensitivity_divide_by_l: bool,
}

impl DpParams {
    pub fn new(
        epsilon: f64,
        delta: f64,
        clip_bound: f64,
        scaling_factor: f64,
        rounds_budgeted: u32,
    ) -> Result<Self, DpError> {
        if !(clip_bound.is_finite() && clip_bound > 0.0) {
            return Err(DpError::InvalidClipBound(clip_bound));
        }
        if !(scaling_factor.is_finite() && scaling_factor > 0.0) {
            return Err(DpError::InvalidScalingFactor(scaling_factor));
        }
        Ok(Self {
            epsilon,
            delta,
            clip_bound,
            scaling_factor,
            sigma: derive_sigma(epsilon, delta)?,
            rounds_budgeted,
            sensitivity_divide_by_l: false,
        })
    }

    pub fn with_sensitivity_divide_by_l(mut self, on: bool) -> Self {
        self.sensitivity_divide_by_l = on;
        self
    }

    /// Effective noise standard deviation for a round with `participants`
    /// submitting clients: `σ · sensitivity`.
    pub fn noise_std(&self, participants: usize) -> f64 {
        self.sigma * sensitivity(self, participants)
    }
}

/// Derive the Gaussian-mechanism noise scale `σ = sqrt(2·ln(1.25/δ))/ε`.
pub fn derive_sigma(epsilon: f64, delta: f64) -> Result<f64, DpError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(DpError::InvalidEpsilon(epsilon));
    }
    if !(delta.is_finite() && delta > 0.0 && delta < 1.0) {
        return Err(DpError::InvalidDelta(delta));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// L2 sensitivity of the aggregated, compressed update: `κ·C`, optionally
/// divided by the participant count when the aggressive variant is enabled.
pub fn sensitivity(params: &DpParams, participants: usize) -> f64 {
    let base = params.scaling_factor * params.clip_bound;
    if params.sensitivity_divide_by_l {
        base / participants.max(1) as f64
    } else {
        base
    }
}

/// Clip a vector onto the L2 ball of radius `clip_bound`:
/// `u · min(1, C/‖u‖₂)`. Vectors already inside the ball pass through
/// unchanged; the zero vector is a fixed point.
pub fn clip(update: &[f64], clip_bound: f64) -> Vec<f64> {
    let norm = l2_norm(update);
    if norm <= clip_bound || norm == 0.0 {
        return update.to_vec();
    }
    let scale = clip_bound / norm;
    update.iter().map(|v| v * scale).collect()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Bytes of randomness consumed per Gaussian output: two 64-bit uniforms.
pub const BYTES_PER_GAUSSIAN: usize = 16;

/// Map a 64-bit word to a uniform strictly inside (0, 1).
fn uniform_open01(word: u64) -> f64 {
    ((word >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// The Box-Muller transform: two independent uniforms in (0, 1) to one
/// standard normal draw. (The sine branch is discarded so each output
/// consumes a fixed 128 bits.)
fn box_muller(u1: f64, u2: f64) -> f64 {
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Transform raw random bits into `dim` i.i.d. standard normal draws via
/// Box-Muller. Requires 128 bits (16 bytes) of input per output element.
pub fn gaussians_from_bits(bits: &[u8], dim: usize) -> Result<Vec<f64>, DpError> {
    let needed = dim * BYTES_PER_GAUSSIAN;
    if bits.len() < needed {
        return Err(DpError::InsufficientBits {
            needed,
            got: bits.len(),
        });
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim {
        let w1 = u64::from_le_bytes(bits[16 * i..16 * i + 8].try_into().unwrap());
        let w2 = u64::from_le_bytes(bits[16 * i + 8..16 * i + 16].try_into().unwrap());
        out.push(box_muller(uniform_open01(w1), uniform_open01(w2)));
    }
    Ok(out)
}

/// Sample `dim` i.i.d. `N(0, std²)` values. The generator is counter-based
/// (ChaCha), so a fixed seed replays the identical vector; `std = 0` returns
/// zeros without consuming randomness.
pub fn sample_gaussian_vector(dim: usize, std: f64, seed: u64) -> Result<Vec<f64>, DpError> {
    if !(std.is_finite() && std >= 0.0) {
        return Err(DpError::NegativeStd(std));
    }
    if std == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut bits = vec![0u8; dim * BYTES_PER_GAUSSIAN];
    rng.fill(&mut bits[..]);
    Ok(gaussians_from_bits(&bits, dim)?
        .into_iter()
        .map(|z| z * std)
        .collect())
}

/// One released round in the privacy ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: u32,
    pub epsilon: f64,
    pub delta: f64,
}

/// Append-only record of per-round privacy spend with running totals under
/// basic composition (sums of the per-round ε and δ).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    entries: Vec<LedgerEntry>,
}

impl PrivacyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, round: u32, epsilon: f64, delta: f64) {
        self.entries.push(LedgerEntry {
            round,
            epsilon,
            delta,
        });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Running totals `(ε_total, δ_total)` under basic composition.
    pub fn total(&self) -> (f64, f64) {
        self.entries.iter().fold((0.0, 0.0), |(e, d), entry| {
            (e + entry.epsilon, d + entry.delta)
        })
    }

    /// CSV rows `round,epsilon,delta,epsilon_total,delta_total`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["round", "epsilon", "delta", "epsilon_total", "delta_total"])?;
        let mut eps_total = 0.0;
        let mut delta_total = 0.0;
        for entry in &self.entries {
            eps_total += entry.epsilon;
            delta_total += entry.delta;
            w.write_record([
                entry.round.to_string(),
                format!("{:?}", entry.epsilon),
                format!("{:?}", entry.delta),
                format!("{:?}", eps_total),
                format!("{:?}", delta_total),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
