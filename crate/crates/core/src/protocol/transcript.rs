//! Per-round view logging and leakage verification.
//!
//! Every message a party sends or receives — and every plaintext value it
//! derives — is appended to that party's view in the [`RoundTranscript`].
//! Ciphertexts are logged as opaque (length + key fingerprint): their content
//! is covered by semantic security, and the leakage assertions run over the
//! plaintext-space entries only.
//!
//! Transcripts export to a line-delimited JSON log, one message per line,
//! and replay losslessly.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A protocol participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    Client(u32),
    /// The aggregation server: collects and homomorphically sums encrypted
    /// updates. Never holds the decryption key.
    AggregationServer,
    /// The crypto service provider: holds the decryption key, only ever
    /// decrypts masked values.
    CryptoProvider,
    /// The ideal two-party functionality both servers feed inputs to.
    TwoPc,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Client(id) => write!(f, "client:{id}"),
            Party::AggregationServer => write!(f, "as"),
            Party::CryptoProvider => write!(f, "csp"),
            Party::TwoPc => write!(f, "2pc"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Sent,
    Received,
    /// A value the party computed or sampled locally.
    Internal,
}

mod hex_ring {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigUint], s: S) -> Result<S::Ok, S::Error> {
        let hex: Vec<String> = v.iter().map(|x| x.to_str_radix(16)).collect();
        hex.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigUint>, D::Error> {
        let hex: Vec<String> = Vec::deserialize(d)?;
        hex.iter()
            .map(|s| {
                BigUint::parse_bytes(s.as_bytes(), 16)
                    .ok_or_else(|| serde::de::Error::custom(format!("bad hex ring value: {s}")))
            })
            .collect()
    }
}

/// The payload of one view entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum ViewData {
    /// An encrypted vector, logged opaquely.
    CiphertextVector { len: usize, key_fingerprint: u64 },
    /// A plaintext vector over the ring (hex-encoded in the JSON form).
    RingVector(#[serde(with = "hex_ring")] Vec<BigUint>),
    /// A plaintext real vector.
    RealVector(Vec<f64>),
    /// Public metadata (shapes, counts, digests).
    Metadata(String),
}

/// One logged message or internal value in a party's view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub direction: Direction,
    /// The other end of the message, or the party itself for internal values.
    pub counterpart: Party,
    pub label: String,
    pub data: ViewData,
}

/// Complete log of one protocol round: every party's view, the released
/// distorted update, and the round's privacy spend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTranscript {
    pub round: u32,
    views: BTreeMap<Party, Vec<ViewEntry>>,
    /// The DP-distorted update released to the aggregation server, in
    /// κ-scaled sequence layout.
    pub distorted_update: Vec<f64>,
    /// `(ε, δ)` consumed by this round.
    pub ledger_entry: (f64, f64),
}

/// One line of the exported log.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LineRecord {
    round: u32,
    party: Party,
    #[serde(flatten)]
    entry: ViewEntry,
}

impl RoundTranscript {
    pub fn new(round: u32) -> Self {
        Self {
            round,
            views: BTreeMap::new(),
            distorted_update: Vec::new(),
            ledger_entry: (0.0, 0.0),
        }
    }

    pub fn log(&mut self, party: Party, direction: Direction, counterpart: Party, label: &str, data: ViewData) {
        self.views.entry(party).or_default().push(ViewEntry {
            direction,
            counterpart,
            label: label.to_string(),
            data,
        });
    }

    pub fn view(&self, party: &Party) -> &[ViewEntry] {
        self.views.get(party).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn parties(&self) -> impl Iterator<Item = &Party> {
        self.views.keys()
    }

    /// Export as line-delimited JSON, one view entry per line.
    pub fn to_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (party, entries) in &self.views {
            for entry in entries {
                let record = LineRecord {
                    round: self.round,
                    party: *party,
                    entry: entry.clone(),
                };
                serde_json::to_writer(&mut w, &record)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    /// Rebuild view logs from a line-delimited JSON export. The released
    /// update and ledger entry are not part of the per-message log, so only
    /// the views replay.
    pub fn from_jsonl<R: BufRead>(reader: R) -> std::io::Result<Vec<RoundTranscript>> {
        let mut out: BTreeMap<u32, RoundTranscript> = BTreeMap::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: LineRecord = serde_json::from_str(&line)?;
            out.entry(record.round)
                .or_insert_with(|| RoundTranscript::new(record.round))
                .views
                .entry(record.party)
                .or_default()
                .push(record.entry);
        }
        Ok(out.into_values().collect())
    }
}

/// Plaintext values that must never appear where they would leak.
#[derive(Debug, Clone, Default)]
pub struct HygieneReferences {
    /// Each client's raw local update (model space).
    pub client_updates_raw: Vec<Vec<f64>>,
    /// Each client's clipped update (model space).
    pub client_updates_clipped: Vec<Vec<f64>>,
    /// The unmasked aggregate as a ring vector.
    pub unmasked_aggregate_ring: Vec<BigUint>,
    /// The unmasked aggregate decoded to reals (κ-scaled sequence layout).
    pub unmasked_aggregate_real: Vec<f64>,
    /// The masked plaintext `n = ΔW + v` the CSP decrypts.
    pub masked_plaintext: Vec<BigUint>,
    /// The aggregation server's round mask `v`.
    pub mask: Vec<BigUint>,
}

#[derive(Debug, Error, PartialEq)]
pub enum HygieneViolation {
    #[error("{party} view contains client {client}'s plaintext update ({label})")]
    ClientUpdateLeaked {
        party: String,
        client: usize,
        label: String,
    },
    #[error("CSP view contains the unmasked aggregate ({label})")]
    UnmaskedAggregateAtCsp { label: String },
    #[error("CSP view contains the round mask ({label})")]
    MaskAtCsp { label: String },
    #[error("AS view contains the masked plaintext it should only hold encrypted ({label})")]
    MaskedPlaintextAtAs { label: String },
    #[error("AS view contains the unmasked ring aggregate ({label})")]
    UnmaskedAggregateAtAs { label: String },
    #[error("CSP view contains a plaintext real vector ({label})")]
    RealVectorAtCsp { label: String },
}

fn informative_reals(v: &[f64]) -> bool {
    v.iter().any(|x| *x != 0.0)
}

fn informative_ring(v: &[BigUint]) -> bool {
    use num_traits::Zero;
    !v.is_empty() && v.iter().any(|x| !x.is_zero())
}

/// Scan a transcript for leakage:
///
/// * no party's view contains any client's raw or clipped update;
/// * the CSP's view contains neither the unmasked aggregate, the mask `v`,
///   nor any plaintext real vector at all;
/// * the AS's view contains neither the masked plaintext `n = ΔW + v` (it
///   must only ever hold it in encrypted form) nor the unmasked ring
///   aggregate.
///
/// All-zero reference vectors are skipped: equality with a zero vector does
/// not witness leakage.
pub fn verify_hygiene(
    transcript: &RoundTranscript,
    refs: &HygieneReferences,
) -> Result<(), HygieneViolation> {
    for (party, entries) in &transcript.views {
        for entry in entries {
            if let ViewData::RealVector(v) = &entry.data {
                for (idx, raw) in refs.client_updates_raw.iter().enumerate() {
                    if informative_reals(raw) && v == raw {
                        return Err(HygieneViolation::ClientUpdateLeaked {
                            party: party.to_string(),
                            client: idx,
                            label: entry.label.clone(),
                        });
                    }
                }
                for (idx, clipped) in refs.client_updates_clipped.iter().enumerate() {
                    if informative_reals(clipped) && v == clipped {
                        return Err(HygieneViolation::ClientUpdateLeaked {
                            party: party.to_string(),
                            client: idx,
                            label: entry.label.clone(),
                        });
                    }
                }
            }
        }
    }
    for entry in transcript.view(&Party::CryptoProvider) {
        match &entry.data {
            ViewData::RingVector(v) => {
                if informative_ring(&refs.mask) && v == &refs.mask {
                    return Err(HygieneViolation::MaskAtCsp {
                        label: entry.label.clone(),
                    });
                }
                if informative_ring(&refs.unmasked_aggregate_ring)
                    && v == &refs.unmasked_aggregate_ring
                {
                    return Err(HygieneViolation::UnmaskedAggregateAtCsp {
                        label: entry.label.clone(),
                    });
                }
            }
            ViewData::RealVector(_) => {
                return Err(HygieneViolation::RealVectorAtCsp {
                    label: entry.label.clone(),
                });
            }
            _ => {}
        }
    }
    for entry in transcript.view(&Party::AggregationServer) {
        if let ViewData::RingVector(v) = &entry.data {
            // The AS may log its own mask and negated mask. The masked
            // plaintext would let it unmask the aggregate itself, and the
            // unmasked aggregate must never exist outside the 2PC.
            if informative_ring(&refs.masked_plaintext) && v == &refs.masked_plaintext {
                return Err(HygieneViolation::MaskedPlaintextAtAs {
                    label: entry.label.clone(),
                });
            }
            if informative_ring(&refs.unmasked_aggregate_ring)
                && v == &refs.unmasked_aggregate_ring
            {
                return Err(HygieneViolation::UnmaskedAggregateAtAs {
                    label: entry.label.clone(),
                });
            }
        }
    }
    Ok(())
}
