//! The round protocol: client submission, homomorphic aggregation at the AS,
//! the masked-decryption handshake with the CSP, and the ideal 2PC that
//! releases the noised global update.
//!
//! One round, with `P` the set of submitting clients:
//!
//! 1. every client clips its local update to L2 bound `C`, weights it by its
//!    data size `n_j`, compresses it to block-Hankel sequence form (κ-scaled),
//!    encodes each value in fixed point and encrypts elementwise;
//! 2. the AS checks the aggregation threshold `L`, rejects malformed shapes,
//!    and folds the surviving payloads with homomorphic addition;
//! 3. the AS adds a fresh uniform ring mask `v` under encryption and sends
//!    the distorted ciphertexts to the CSP, which decrypts `n = ΔW + v` —
//!    a uniformly distributed value that reveals nothing about `ΔW`;
//! 4. both servers feed the 2PC: the CSP inputs `n` and noise randomness, the
//!    AS inputs `−v`, noise randomness and the public participating weight;
//!    the functionality unmasks, divides by `Σ_{j∈P} n_j`, adds Gaussian
//!    noise `N(0, (σκC)²)` per element, and releases `ΔW̃` to the AS only;
//! 5. the AS decompresses `ΔW̃` and applies it: `W ← W + ΔW̃`.
//!
//! Dropped-out clients simply never submit; the round proceeds whenever at
//! least `L` clients do. Division by the *participating* weight happens
//! inside the 2PC, where the plaintext legitimately exists, so dropout does
//! not bias the average.

mod transcript;
mod twopc;

pub use transcript::{
    verify_hygiene, Direction, HygieneReferences, HygieneViolation, Party, RoundTranscript,
    ViewData, ViewEntry,
};
pub use twopc::{
    ideal_2pc_noise, AsTwoPcInput, CspTwoPcInput, NoiseMode, PartyRandomness, TwoPcContext,
    TwoPcInputs,
};

use std::collections::HashSet;

use num_bigint::{BigUint, RandBigInt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::ahe::{
    self, encode_fixed, ring_negate, AheError, Ciphertext, FixedPointParams, KeyPair, PublicKey,
};
use crate::bhm::{self, BhmError, BhmParams, BhmUpdate};
use crate::dp::{self, DpParams, BYTES_PER_GAUSSIAN};

pub type ClientId = u32;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Ahe(#[from] AheError),
    #[error(transparent)]
    Bhm(#[from] BhmError),
    #[error(transparent)]
    Dp(#[from] dp::DpError),
    #[error("payload shape {got_rows}x{got_cols} (l={got_l}) does not match model shape {want_rows}x{want_cols} (l={want_l})")]
    PayloadShapeMismatch {
        want_rows: usize,
        want_cols: usize,
        want_l: usize,
        got_rows: usize,
        got_cols: usize,
        got_l: usize,
    },
    #[error("round mask already issued for round {0}; masks must be fresh per round")]
    MaskReuse(u32),
    #[error("no mask staged for the 2PC handoff")]
    MaskMissing,
    #[error("2PC input dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("2PC randomness does not match the configured noise mode")]
    RandomnessModeMismatch,
    #[error("insufficient 2PC randomness: need {needed} bytes, CSP supplied {csp}, AS supplied {aggregation_server}")]
    InsufficientRandomness {
        needed: usize,
        csp: usize,
        aggregation_server: usize,
    },
    #[error("participating weight is zero")]
    ZeroParticipatingWeight,
    #[error("update has {got} weights, model expects {expected}")]
    UpdateLengthMismatch { expected: usize, got: usize },
    #[error("view hygiene violated: {0}")]
    Hygiene(#[from] HygieneViolation),
}

/// A round-level failure. Threshold aborts are retriable — the caller may
/// rerun the round with the next epoch's updates; anything else is a hard
/// protocol failure.
#[derive(Debug, Error)]
pub enum RoundError {
    #[error("only {survivors} clients submitted, below the aggregation threshold {threshold}")]
    BelowThreshold { survivors: usize, threshold: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// How a flat model vector is laid out as a matrix for block partitioning.
/// The vector fills the matrix row-major; the tail of the last row is zero
/// padding that decompression discards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelShape {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
}

impl ModelShape {
    /// Near-square layout for a `dim`-element model.
    pub fn for_dim(dim: usize) -> Self {
        let dim = dim.max(1);
        let rows = (dim as f64).sqrt().ceil() as usize;
        let cols = dim.div_ceil(rows);
        Self { rows, cols, dim }
    }

    pub fn to_matrix(&self, v: &[f64]) -> Result<ndarray::Array2<f64>, ProtocolError> {
        if v.len() != self.dim {
            return Err(ProtocolError::UpdateLengthMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut m = ndarray::Array2::zeros((self.rows, self.cols));
        for (idx, &x) in v.iter().enumerate() {
            m[[idx / self.cols, idx % self.cols]] = x;
        }
        Ok(m)
    }

    pub fn to_vector(&self, m: &ndarray::Array2<f64>) -> Vec<f64> {
        (0..self.dim)
            .map(|idx| m[[idx / self.cols, idx % self.cols]])
            .collect()
    }
}

/// Shared protocol parameters every party agrees on before round one.
#[derive(Debug, Clone)]
pub struct ProtocolParams {
    pub shape: ModelShape,
    pub bhm: BhmParams,
    pub fixed: FixedPointParams,
    pub dp: DpParams,
    pub noise_mode: NoiseMode,
}

impl ProtocolParams {
    /// Stored sequence-domain element count per payload.
    pub fn payload_len(&self) -> usize {
        let l = self.bhm.block_size;
        self.shape.rows.div_ceil(l) * self.shape.cols.div_ceil(l) * self.bhm.seq_len()
    }
}

/// A client's role state. Clients never hold the secret key; everything they
/// emit is a ciphertext vector plus public metadata.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: ClientId,
    /// Local data size `n_j`; doubles as the aggregation weight.
    pub data_size: u64,
    pk: PublicKey,
    /// Current global weights, refreshed by the AS broadcast each round.
    pub weights: Vec<f64>,
    pub params: ProtocolParams,
}

impl ClientState {
    pub fn new(
        client_id: ClientId,
        data_size: u64,
        pk: PublicKey,
        initial_weights: Vec<f64>,
        params: ProtocolParams,
    ) -> Self {
        Self {
            client_id,
            data_size,
            pk,
            weights: initial_weights,
            params,
        }
    }
}

/// One client's encrypted submission: ciphertexts in sequence layout plus
/// shape metadata in the clear.
#[derive(Debug, Clone)]
pub struct ClientPayload {
    pub client_id: ClientId,
    pub data_size: u64,
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    pub ciphertexts: Vec<Ciphertext>,
}

/// Clip, weight, compress, encode and encrypt a local update.
///
/// The pipeline is `clip(ΔW, C)` → `× n_j` → κ-scaled block-Hankel
/// compression → fixed-point encode → elementwise encrypt. A fixed-point
/// magnitude overflow here signals a `C`/κ/`n_j` misconfiguration.
pub fn client_prepare<R: Rng + ?Sized>(
    state: &ClientState,
    local_update: &[f64],
    rng: &mut R,
) -> Result<ClientPayload, ProtocolError> {
    let params = &state.params;
    let clipped = dp::clip(local_update, params.dp.clip_bound);
    let weighted: Vec<f64> = clipped.iter().map(|x| x * state.data_size as f64).collect();
    let matrix = params.shape.to_matrix(&weighted)?;
    let compressed = bhm::compress(&matrix.view(), &params.bhm)?;
    let ciphertexts = ahe::encrypt_vector(&state.pk, &compressed.flatten(), &params.fixed, rng)?;
    Ok(ClientPayload {
        client_id: state.client_id,
        data_size: state.data_size,
        rows: compressed.rows(),
        cols: compressed.cols(),
        block_size: compressed.block_size(),
        ciphertexts,
    })
}

struct MaskRecord {
    values: Vec<BigUint>,
}

/// The aggregation server's role state. Never holds the secret key; the
/// round mask is sampled fresh per round and destroyed once the 2PC consumed
/// its negation.
pub struct AsState {
    pk: PublicKey,
    /// Aggregation threshold `L`: minimum submissions before a round runs.
    pub threshold: usize,
    pub global_weights: Vec<f64>,
    pub params: ProtocolParams,
    round: u32,
    mask: Option<MaskRecord>,
    last_masked_round: Option<u32>,
}

impl AsState {
    pub fn new(
        pk: PublicKey,
        threshold: usize,
        initial_weights: Vec<f64>,
        params: ProtocolParams,
    ) -> Self {
        Self {
            pk,
            threshold,
            global_weights: initial_weights,
            params,
            round: 0,
            mask: None,
            last_masked_round: None,
        }
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn advance_round(&mut self) {
        self.round += 1;
    }

    /// Test hook: force the next round mask instead of sampling it.
    #[doc(hidden)]
    pub fn force_mask_for_tests(&mut self, values: Vec<BigUint>) {
        self.last_masked_round = None;
        self.mask = Some(MaskRecord { values });
    }
}

/// Outcome of homomorphic aggregation.
pub struct AggregateOutcome {
    pub ciphertexts: Vec<Ciphertext>,
    pub participants: Vec<ClientId>,
    /// `Σ n_j` over participants.
    pub participating_weight: u64,
    /// Payloads dropped for malformed shape, with the reason.
    pub rejected: Vec<(ClientId, ProtocolError)>,
}

/// Fold client payloads with homomorphic addition.
///
/// Payloads whose shape metadata disagrees with the agreed model shape are
/// rejected individually; the rest proceed. If fewer than `L` well-formed
/// payloads remain the round aborts with a retriable error.
pub fn as_aggregate(
    state: &AsState,
    payloads: &[ClientPayload],
) -> Result<AggregateOutcome, RoundError> {
    let params = &state.params;
    let want_l = params.bhm.block_size;
    let expected_len = params.payload_len();
    let mut rejected = Vec::new();
    let mut accepted: Vec<&ClientPayload> = Vec::new();
    for payload in payloads {
        if payload.rows != params.shape.rows
            || payload.cols != params.shape.cols
            || payload.block_size != want_l
            || payload.ciphertexts.len() != expected_len
        {
            rejected.push((
                payload.client_id,
                ProtocolError::PayloadShapeMismatch {
                    want_rows: params.shape.rows,
                    want_cols: params.shape.cols,
                    want_l,
                    got_rows: payload.rows,
                    got_cols: payload.cols,
                    got_l: payload.block_size,
                },
            ));
        } else {
            accepted.push(payload);
        }
    }
    if accepted.len() < state.threshold {
        return Err(RoundError::BelowThreshold {
            survivors: accepted.len(),
            threshold: state.threshold,
        });
    }
    let mut ciphertexts = accepted[0].ciphertexts.clone();
    for payload in &accepted[1..] {
        for (slot, ct) in ciphertexts.iter_mut().zip(&payload.ciphertexts) {
            *slot = state.pk.hom_add(slot, ct).map_err(ProtocolError::from)?;
        }
    }
    Ok(AggregateOutcome {
        ciphertexts,
        participants: accepted.iter().map(|p| p.client_id).collect(),
        participating_weight: accepted.iter().map(|p| p.data_size).sum(),
        rejected,
    })
}

/// Add a fresh uniform ring mask to the aggregate under encryption:
/// `Enc(v) ⊕ agg` elementwise. The mask is stored for the 2PC handoff and
/// may be issued at most once per round.
pub fn as_mask<R: Rng + ?Sized>(
    state: &mut AsState,
    aggregate: &[Ciphertext],
    rng: &mut R,
) -> Result<Vec<Ciphertext>, ProtocolError> {
    if state.mask.is_some() || state.last_masked_round == Some(state.round) {
        return Err(ProtocolError::MaskReuse(state.round));
    }
    let n = state.pk.modulus().clone();
    let mut values = Vec::with_capacity(aggregate.len());
    let mut masked = Vec::with_capacity(aggregate.len());
    for ct in aggregate {
        let v = rng.gen_biguint_below(&n);
        let enc_v = state.pk.encrypt(&v, rng)?;
        masked.push(state.pk.hom_add(&enc_v, ct)?);
        values.push(v);
    }
    state.last_masked_round = Some(state.round);
    state.mask = Some(MaskRecord { values });
    Ok(masked)
}

/// Consume the staged mask, returning its negation for the 2PC. The stored
/// mask is dropped here — it never survives the round.
fn take_neg_mask(state: &mut AsState) -> Result<(Vec<BigUint>, Vec<BigUint>), ProtocolError> {
    let record = state.mask.take().ok_or(ProtocolError::MaskMissing)?;
    let n = state.pk.modulus();
    let neg = record.values.iter().map(|v| ring_negate(v, n)).collect();
    Ok((record.values, neg))
}

/// The crypto service provider's role state: owns the key pair, only ever
/// decrypts masked values. The secret key never serializes out of here.
pub struct CspState {
    keypair: KeyPair,
    /// The masked ring vector decrypted this round, `n = ΔW + v`.
    pub last_masked_plaintext: Option<Vec<BigUint>>,
}

impl std::fmt::Debug for CspState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CspState")
            .field("keypair", &"[redacted]")
            .finish()
    }
}

impl CspState {
    pub fn new(keypair: KeyPair) -> Self {
        Self {
            keypair,
            last_masked_plaintext: None,
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public_key().clone()
    }
}

/// Decrypt the masked aggregate. The result is logged to the CSP's view
/// only; by mask uniformity it carries no information about the aggregate.
pub fn csp_decrypt_masked(
    state: &mut CspState,
    masked: &[Ciphertext],
    transcript: &mut RoundTranscript,
) -> Result<Vec<BigUint>, ProtocolError> {
    let plaintexts: Result<Vec<BigUint>, AheError> = masked
        .iter()
        .map(|ct| state.keypair.secret_key().decrypt(ct))
        .collect();
    let plaintexts = plaintexts?;
    transcript.log(
        Party::CryptoProvider,
        Direction::Internal,
        Party::CryptoProvider,
        "masked-plaintext",
        ViewData::RingVector(plaintexts.clone()),
    );
    state.last_masked_plaintext = Some(plaintexts.clone());
    Ok(plaintexts)
}

/// Apply a released distorted update (κ-scaled sequence layout) to the
/// global model: decompress, descale, depad, add.
pub fn as_apply_update(
    state: &mut AsState,
    distorted_update: &[f64],
) -> Result<Vec<f64>, ProtocolError> {
    let params = &state.params;
    let update = BhmUpdate::from_flat(
        params.shape.rows,
        params.shape.cols,
        &params.bhm,
        distorted_update,
    )?;
    let matrix = bhm::decompress(&update)?;
    let delta = params.shape.to_vector(&matrix);
    for (w, d) in state.global_weights.iter_mut().zip(&delta) {
        *w += d;
    }
    Ok(state.global_weights.clone())
}

/// Stream indices for per-round randomness derivation. All round randomness
/// flows from one seed; distinct streams keep the roles independent.
const STREAM_MASK: u64 = 1;
const STREAM_AS_NOISE: u64 = 2;
const STREAM_CSP_NOISE: u64 = 3;
const STREAM_CLIENT_BASE: u64 = 16;

fn round_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Result of a completed round.
pub struct RoundOutcome {
    pub transcript: RoundTranscript,
    pub new_weights: Vec<f64>,
    pub participants: Vec<ClientId>,
    pub participating_weight: u64,
}

/// Run one full protocol round.
///
/// `updates[i]` is client `i`'s local update; clients listed in `dropout`
/// never submit. All randomness (encryption, mask, noise bits) derives from
/// `round_seed`. The transcript is checked against the view-hygiene
/// invariants before the outcome is returned; a violation is a hard error.
pub fn run_round(
    clients: &mut [ClientState],
    updates: &[Vec<f64>],
    as_state: &mut AsState,
    csp_state: &mut CspState,
    dropout: &HashSet<ClientId>,
    round_seed: u64,
) -> Result<RoundOutcome, RoundError> {
    assert_eq!(clients.len(), updates.len(), "one update per client");
    let round = as_state.round();
    let mut transcript = RoundTranscript::new(round);
    let params = as_state.params.clone();

    // Phase 1: surviving clients encrypt and submit.
    let mut payloads = Vec::new();
    for (client, update) in clients.iter().zip(updates) {
        if dropout.contains(&client.client_id) {
            continue;
        }
        let mut rng = round_rng(round_seed, STREAM_CLIENT_BASE + client.client_id as u64);
        let payload = client_prepare(client, update, &mut rng).map_err(RoundError::Protocol)?;
        let meta = ViewData::CiphertextVector {
            len: payload.ciphertexts.len(),
            key_fingerprint: payload
                .ciphertexts
                .first()
                .map(|c| c.key_fingerprint())
                .unwrap_or_default(),
        };
        transcript.log(
            Party::Client(client.client_id),
            Direction::Sent,
            Party::AggregationServer,
            "encrypted-update",
            meta.clone(),
        );
        transcript.log(
            Party::AggregationServer,
            Direction::Received,
            Party::Client(client.client_id),
            "encrypted-update",
            meta,
        );
        transcript.log(
            Party::AggregationServer,
            Direction::Received,
            Party::Client(client.client_id),
            "payload-metadata",
            ViewData::Metadata(format!(
                "client={} n_j={} shape={}x{} l={}",
                client.client_id, payload.data_size, payload.rows, payload.cols, payload.block_size
            )),
        );
        payloads.push(payload);
    }

    // Phase 2: threshold gate and homomorphic fold.
    let aggregate = as_aggregate(as_state, &payloads)?;

    // Phase 3: mask, hand to CSP for decryption.
    let mut mask_rng = round_rng(round_seed, STREAM_MASK);
    let masked = as_mask(as_state, &aggregate.ciphertexts, &mut mask_rng)
        .map_err(RoundError::Protocol)?;
    let masked_meta = ViewData::CiphertextVector {
        len: masked.len(),
        key_fingerprint: masked
            .first()
            .map(|c| c.key_fingerprint())
            .unwrap_or_default(),
    };
    transcript.log(
        Party::AggregationServer,
        Direction::Sent,
        Party::CryptoProvider,
        "masked-aggregate",
        masked_meta.clone(),
    );
    transcript.log(
        Party::CryptoProvider,
        Direction::Received,
        Party::AggregationServer,
        "masked-aggregate",
        masked_meta,
    );
    let masked_plaintext =
        csp_decrypt_masked(csp_state, &masked, &mut transcript).map_err(RoundError::Protocol)?;

    // Phase 4: the ideal 2PC unmasks, reweights and injects noise.
    let (mask_values, neg_mask) = take_neg_mask(as_state).map_err(RoundError::Protocol)?;
    transcript.log(
        Party::AggregationServer,
        Direction::Internal,
        Party::AggregationServer,
        "round-mask",
        ViewData::RingVector(mask_values.clone()),
    );
    let dim = masked_plaintext.len();
    let (csp_randomness, as_randomness) = match params.noise_mode {
        NoiseMode::CombinedBits => {
            let mut csp_bits = vec![0u8; dim * BYTES_PER_GAUSSIAN];
            round_rng(round_seed, STREAM_CSP_NOISE).fill(&mut csp_bits[..]);
            let mut as_bits = vec![0u8; dim * BYTES_PER_GAUSSIAN];
            round_rng(round_seed, STREAM_AS_NOISE).fill(&mut as_bits[..]);
            (
                PartyRandomness::Bits(csp_bits),
                PartyRandomness::Bits(as_bits),
            )
        }
        NoiseMode::TwoPartyGaussian => {
            // Each server contributes N(0, (σκC)²/2) so the sum hits the
            // target variance.
            let share_std =
                params.dp.noise_std(aggregate.participants.len()) / 2.0f64.sqrt();
            let csp_seed = round_rng(round_seed, STREAM_CSP_NOISE).gen::<u64>();
            let as_seed = round_rng(round_seed, STREAM_AS_NOISE).gen::<u64>();
            (
                PartyRandomness::Gaussian(
                    dp::sample_gaussian_vector(dim, share_std, csp_seed)
                        .map_err(ProtocolError::from)?,
                ),
                PartyRandomness::Gaussian(
                    dp::sample_gaussian_vector(dim, share_std, as_seed)
                        .map_err(ProtocolError::from)?,
                ),
            )
        }
    };
    let inputs = TwoPcInputs {
        csp: CspTwoPcInput {
            masked_plaintext: masked_plaintext.clone(),
            randomness: csp_randomness,
        },
        aggregation_server: AsTwoPcInput {
            neg_mask,
            randomness: as_randomness,
            participating_weight: aggregate.participating_weight,
            participants: aggregate.participants.len(),
        },
    };
    let ctx = TwoPcContext {
        modulus: as_state.pk.modulus().clone(),
        fixed: params.fixed,
        noise_mode: params.noise_mode,
    };
    let distorted = ideal_2pc_noise(&inputs, &params.dp, &ctx, &mut transcript)
        .map_err(RoundError::Protocol)?;

    // Phase 5: apply and broadcast.
    let new_weights = as_apply_update(as_state, &distorted).map_err(RoundError::Protocol)?;
    for client in clients.iter_mut() {
        client.weights = new_weights.clone();
        transcript.log(
            Party::Client(client.client_id),
            Direction::Received,
            Party::AggregationServer,
            "global-weights",
            ViewData::RealVector(new_weights.clone()),
        );
    }
    transcript.log(
        Party::AggregationServer,
        Direction::Sent,
        Party::Client(u32::MAX),
        "global-weights-broadcast",
        ViewData::Metadata(format!("dim={}", new_weights.len())),
    );

    transcript.distorted_update = distorted;
    transcript.ledger_entry = (params.dp.epsilon, params.dp.delta);

    // Hard gate: verify the view invariants before releasing the outcome.
    let refs = hygiene_references(
        &params,
        as_state.pk.modulus(),
        clients,
        updates,
        dropout,
        &mask_values,
        &masked_plaintext,
    )
    .map_err(RoundError::Protocol)?;
    verify_hygiene(&transcript, &refs)
        .map_err(|v| RoundError::Protocol(ProtocolError::Hygiene(v)))?;

    as_state.advance_round();
    Ok(RoundOutcome {
        transcript,
        new_weights,
        participants: aggregate.participants,
        participating_weight: aggregate.participating_weight,
    })
}

/// Recompute the round's forbidden plaintexts from the orchestrator's own
/// knowledge (no decryption involved) for the hygiene scan.
fn hygiene_references(
    params: &ProtocolParams,
    modulus: &BigUint,
    clients: &[ClientState],
    updates: &[Vec<f64>],
    dropout: &HashSet<ClientId>,
    mask: &[BigUint],
    masked_plaintext: &[BigUint],
) -> Result<HygieneReferences, ProtocolError> {
    let mut raw = Vec::new();
    let mut clipped_all = Vec::new();
    let mut ring_aggregate: Vec<BigUint> = vec![BigUint::default(); params.payload_len()];
    for (client, update) in clients.iter().zip(updates) {
        raw.push(update.clone());
        let clipped = dp::clip(update, params.dp.clip_bound);
        clipped_all.push(clipped.clone());
        if dropout.contains(&client.client_id) {
            continue;
        }
        let weighted: Vec<f64> = clipped.iter().map(|x| x * client.data_size as f64).collect();
        let matrix = params.shape.to_matrix(&weighted)?;
        let compressed = bhm::compress(&matrix.view(), &params.bhm)?;
        for (slot, value) in ring_aggregate.iter_mut().zip(compressed.flatten()) {
            let encoded = encode_fixed(value, &params.fixed, modulus)?;
            *slot = (&*slot + encoded) % modulus;
        }
    }
    let unmasked_real: Result<Vec<f64>, AheError> = ring_aggregate
        .iter()
        .map(|m| crate::ahe::decode_fixed(m, &params.fixed, modulus))
        .collect();
    Ok(HygieneReferences {
        client_updates_raw: raw,
        client_updates_clipped: clipped_all,
        unmasked_aggregate_ring: ring_aggregate,
        unmasked_aggregate_real: unmasked_real?,
        masked_plaintext: masked_plaintext.to_vec(),
        mask: mask.to_vec(),
    })
}
