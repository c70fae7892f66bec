//! The ideal two-party functionality that unmasks the aggregate and injects
//! Gaussian noise.
//!
//! The real protocol would evaluate this inside a garbled circuit; here it is
//! an ideal functionality with a strict input contract so its semantics (and
//! its leakage) stay testable:
//!
//! * the CSP contributes the decrypted masked vector `n = ΔW + v` plus its
//!   share of noise randomness;
//! * the AS contributes the negated mask `−v`, its share of noise
//!   randomness, and the (public) participating data-size sum;
//! * the functionality computes `(n + (−v)) mod ring = ΔW` in fixed point,
//!   decodes, divides by the participating weight, adds the Gaussian noise,
//!   and releases the distorted update to the AS only.
//!
//! Each party's input is logged under that party's view only; neither `ΔW`
//! nor the raw noise ever appears in any view.

use num_bigint::BigUint;
use sha2::{Digest, Sha256};

use crate::ahe::{decode_fixed, FixedPointParams};
use crate::dp::{self, DpParams, BYTES_PER_GAUSSIAN};

use super::transcript::{Direction, Party, RoundTranscript, ViewData};
use super::ProtocolError;

/// Which parties supply the DP noise and in what form.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Both servers contribute uniform random bits; the functionality XORs
    /// them and applies the Box-Muller transform inside. The XOR keeps the
    /// combined bits uniform as long as either party's bits are.
    #[default]
    CombinedBits,
    /// Each server contributes a pre-sampled Gaussian vector with variance
    /// `(σκC)²/2`; the functionality adds both so the sum reaches the target
    /// variance.
    TwoPartyGaussian,
}

/// A party's noise contribution, matching the configured [`NoiseMode`].
#[derive(Debug, Clone)]
pub enum PartyRandomness {
    Bits(Vec<u8>),
    Gaussian(Vec<f64>),
}

impl PartyRandomness {
    fn describe(&self) -> String {
        match self {
            PartyRandomness::Bits(b) => {
                let digest = Sha256::digest(b);
                format!("bits len={} sha256={:02x}{:02x}{:02x}{:02x}…", b.len(), digest[0], digest[1], digest[2], digest[3])
            }
            PartyRandomness::Gaussian(g) => format!("gaussian-share dim={}", g.len()),
        }
    }
}

/// The CSP's input to the functionality.
#[derive(Debug, Clone)]
pub struct CspTwoPcInput {
    /// Decrypted masked aggregate `n = ΔW + v` over the ring.
    pub masked_plaintext: Vec<BigUint>,
    pub randomness: PartyRandomness,
}

/// The AS's input to the functionality.
#[derive(Debug, Clone)]
pub struct AsTwoPcInput {
    /// The negated round mask `−v mod ring`.
    pub neg_mask: Vec<BigUint>,
    pub randomness: PartyRandomness,
    /// Public metadata: the sum of participating clients' data sizes.
    pub participating_weight: u64,
    /// Public metadata: the number of participating clients.
    pub participants: usize,
}

/// Both parties' inputs, bundled for the ideal functionality.
#[derive(Debug, Clone)]
pub struct TwoPcInputs {
    pub csp: CspTwoPcInput,
    pub aggregation_server: AsTwoPcInput,
}

/// Ring and codec context the functionality computes under.
#[derive(Debug, Clone)]
pub struct TwoPcContext {
    pub modulus: BigUint,
    pub fixed: FixedPointParams,
    pub noise_mode: NoiseMode,
}

/// Evaluate the ideal functionality. Returns the distorted update `ΔW̃`
/// (κ-scaled sequence layout), logging each party's input under its own view
/// and the output under the AS view only.
pub fn ideal_2pc_noise(
    inputs: &TwoPcInputs,
    dp: &DpParams,
    ctx: &TwoPcContext,
    transcript: &mut RoundTranscript,
) -> Result<Vec<f64>, ProtocolError> {
    let dim = inputs.csp.masked_plaintext.len();
    if inputs.aggregation_server.neg_mask.len() != dim {
        return Err(ProtocolError::DimensionMismatch {
            left: dim,
            right: inputs.aggregation_server.neg_mask.len(),
        });
    }
    if inputs.aggregation_server.participating_weight == 0 {
        return Err(ProtocolError::ZeroParticipatingWeight);
    }

    transcript.log(
        Party::CryptoProvider,
        Direction::Sent,
        Party::TwoPc,
        "2pc-input-masked-plaintext",
        ViewData::RingVector(inputs.csp.masked_plaintext.clone()),
    );
    transcript.log(
        Party::CryptoProvider,
        Direction::Sent,
        Party::TwoPc,
        "2pc-input-randomness",
        ViewData::Metadata(inputs.csp.randomness.describe()),
    );
    transcript.log(
        Party::AggregationServer,
        Direction::Sent,
        Party::TwoPc,
        "2pc-input-neg-mask",
        ViewData::RingVector(inputs.aggregation_server.neg_mask.clone()),
    );
    transcript.log(
        Party::AggregationServer,
        Direction::Sent,
        Party::TwoPc,
        "2pc-input-randomness",
        ViewData::Metadata(inputs.aggregation_server.randomness.describe()),
    );
    transcript.log(
        Party::AggregationServer,
        Direction::Sent,
        Party::TwoPc,
        "2pc-input-participating-weight",
        ViewData::Metadata(format!(
            "sum_n={} participants={}",
            inputs.aggregation_server.participating_weight, inputs.aggregation_server.participants
        )),
    );

    // Unmask inside the functionality: (n + (−v)) mod ring, then decode.
    let weight = inputs.aggregation_server.participating_weight as f64;
    let mut mean = Vec::with_capacity(dim);
    for (masked, neg) in inputs
        .csp
        .masked_plaintext
        .iter()
        .zip(&inputs.aggregation_server.neg_mask)
    {
        let unmasked = (masked + neg) % &ctx.modulus;
        let real = decode_fixed(&unmasked, &ctx.fixed, &ctx.modulus)?;
        mean.push(real / weight);
    }

    let std = dp.noise_std(inputs.aggregation_server.participants);
    let noise = derive_noise(inputs, ctx, std, dim)?;
    let distorted: Vec<f64> = mean.iter().zip(&noise).map(|(m, b)| m + b).collect();

    transcript.log(
        Party::AggregationServer,
        Direction::Received,
        Party::TwoPc,
        "distorted-update",
        ViewData::RealVector(distorted.clone()),
    );
    Ok(distorted)
}

fn derive_noise(
    inputs: &TwoPcInputs,
    ctx: &TwoPcContext,
    std: f64,
    dim: usize,
) -> Result<Vec<f64>, ProtocolError> {
    if std == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    match ctx.noise_mode {
        NoiseMode::CombinedBits => {
            let (PartyRandomness::Bits(csp_bits), PartyRandomness::Bits(as_bits)) =
                (&inputs.csp.randomness, &inputs.aggregation_server.randomness)
            else {
                return Err(ProtocolError::RandomnessModeMismatch);
            };
            let needed = dim * BYTES_PER_GAUSSIAN;
            if csp_bits.len() < needed || as_bits.len() < needed {
                return Err(ProtocolError::InsufficientRandomness {
                    needed,
                    csp: csp_bits.len(),
                    aggregation_server: as_bits.len(),
                });
            }
            let combined: Vec<u8> = csp_bits
                .iter()
                .zip(as_bits)
                .map(|(a, b)| a ^ b)
                .collect();
            let standard = dp::gaussians_from_bits(&combined, dim)?;
            Ok(standard.into_iter().map(|z| z * std).collect())
        }
        NoiseMode::TwoPartyGaussian => {
            let (PartyRandomness::Gaussian(csp_share), PartyRandomness::Gaussian(as_share)) =
                (&inputs.csp.randomness, &inputs.aggregation_server.randomness)
            else {
                return Err(ProtocolError::RandomnessModeMismatch);
            };
            if csp_share.len() != dim || as_share.len() != dim {
                return Err(ProtocolError::DimensionMismatch {
                    left: csp_share.len(),
                    right: as_share.len(),
                });
            }
            Ok(csp_share.iter().zip(as_share).map(|(a, b)| a + b).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ahe::encode_fixed;
    use num_traits::Zero;

    fn ctx(noise_mode: NoiseMode) -> TwoPcContext {
        TwoPcContext {
            modulus: BigUint::from(1u8) << 128,
            fixed: FixedPointParams {
                frac_bits: 32,
                max_magnitude: 64.0,
                slack_bits: 10,
            },
            noise_mode,
        }
    }

    fn dp_zero_noise() -> DpParams {
        // σ scale irrelevant at std 0; use clip/κ = 1.
        let mut p = DpParams::new(1.0, 1e-5, 1.0, 1.0, 1).unwrap();
        p.sigma = 0.0;
        p
    }

    #[test]
    fn unmasking_recovers_weighted_mean() {
        let ctx = ctx(NoiseMode::CombinedBits);
        let values = [6.0, -4.5, 0.0];
        let mask = [
            BigUint::from(123456u64),
            BigUint::from(999u64),
            BigUint::from(31u64),
        ];
        let masked: Vec<BigUint> = values
            .iter()
            .zip(&mask)
            .map(|(&x, v)| (encode_fixed(x, &ctx.fixed, &ctx.modulus).unwrap() + v) % &ctx.modulus)
            .collect();
        let neg_mask: Vec<BigUint> = mask
            .iter()
            .map(|v| crate::ahe::ring_negate(v, &ctx.modulus))
            .collect();
        let inputs = TwoPcInputs {
            csp: CspTwoPcInput {
                masked_plaintext: masked,
                randomness: PartyRandomness::Bits(vec![0u8; 48]),
            },
            aggregation_server: AsTwoPcInput {
                neg_mask,
                randomness: PartyRandomness::Bits(vec![0u8; 48]),
                participating_weight: 3,
                participants: 3,
            },
        };
        let mut transcript = RoundTranscript::new(0);
        let out = ideal_2pc_noise(&inputs, &dp_zero_noise(), &ctx, &mut transcript).unwrap();
        for (o, &x) in out.iter().zip(&values) {
            assert!((o - x / 3.0).abs() < 1e-9, "{o} vs {}", x / 3.0);
        }
        // Output lands in the AS view only.
        assert!(transcript
            .view(&Party::AggregationServer)
            .iter()
            .any(|e| e.label == "distorted-update"));
        assert!(!transcript
            .view(&Party::CryptoProvider)
            .iter()
            .any(|e| e.label == "distorted-update"));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let ctx = ctx(NoiseMode::CombinedBits);
        let inputs = TwoPcInputs {
            csp: CspTwoPcInput {
                masked_plaintext: vec![BigUint::zero(); 2],
                randomness: PartyRandomness::Bits(vec![0u8; 32]),
            },
            aggregation_server: AsTwoPcInput {
                neg_mask: vec![BigUint::zero(); 3],
                randomness: PartyRandomness::Bits(vec![0u8; 32]),
                participating_weight: 1,
                participants: 1,
            },
        };
        let mut transcript = RoundTranscript::new(0);
        assert!(matches!(
            ideal_2pc_noise(&inputs, &dp_zero_noise(), &ctx, &mut transcript),
            Err(ProtocolError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn insufficient_randomness_rejected() {
        let ctx = ctx(NoiseMode::CombinedBits);
        let dp = DpParams::new(1.0, 1e-5, 1.0, 1.0, 1).unwrap();
        let inputs = TwoPcInputs {
            csp: CspTwoPcInput {
                masked_plaintext: vec![BigUint::zero(); 2],
                randomness: PartyRandomness::Bits(vec![0u8; 8]),
            },
            aggregation_server: AsTwoPcInput {
                neg_mask: vec![BigUint::zero(); 2],
                randomness: PartyRandomness::Bits(vec![0u8; 32]),
                participating_weight: 1,
                participants: 1,
            },
        };
        let mut transcript = RoundTranscript::new(0);
        assert!(matches!(
            ideal_2pc_noise(&inputs, &dp, &ctx, &mut transcript),
            Err(ProtocolError::InsufficientRandomness { .. })
        ));
    }

    #[test]
    fn combined_bits_noise_is_deterministic_in_inputs() {
        let ctx = ctx(NoiseMode::CombinedBits);
        let dp = DpParams::new(1.0, 1e-5, 1.0, 1.0, 1).unwrap();
        let bits_a = vec![0xAB; 32];
        let bits_b = vec![0x5C; 32];
        let make = || TwoPcInputs {
            csp: CspTwoPcInput {
                masked_plaintext: vec![BigUint::zero(); 2],
                randomness: PartyRandomness::Bits(bits_a.clone()),
            },
            aggregation_server: AsTwoPcInput {
                neg_mask: vec![BigUint::zero(); 2],
                randomness: PartyRandomness::Bits(bits_b.clone()),
                participating_weight: 1,
                participants: 1,
            },
        };
        let mut t1 = RoundTranscript::new(0);
        let mut t2 = RoundTranscript::new(0);
        let out1 = ideal_2pc_noise(&make(), &dp, &ctx, &mut t1).unwrap();
        let out2 = ideal_2pc_noise(&make(), &dp, &ctx, &mut t2).unwrap();
        assert_eq!(out1, out2);
    }

    #[test]
    fn two_party_gaussian_adds_shares() {
        let ctx = ctx(NoiseMode::TwoPartyGaussian);
        let dp = DpParams::new(1.0, 1e-5, 1.0, 1.0, 1).unwrap();
        let inputs = TwoPcInputs {
            csp: CspTwoPcInput {
                masked_plaintext: vec![BigUint::zero(); 2],
                randomness: PartyRandomness::Gaussian(vec![0.25, -1.0]),
            },
            aggregation_server: AsTwoPcInput {
                neg_mask: vec![BigUint::zero(); 2],
                randomness: PartyRandomness::Gaussian(vec![0.5, 0.75]),
                participating_weight: 1,
                participants: 1,
            },
        };
        let mut transcript = RoundTranscript::new(0);
        let out = ideal_2pc_noise(&inputs, &dp, &ctx, &mut transcript).unwrap();
        assert!((out[0] - 0.75).abs() < 1e-12);
        assert!((out[1] - (-0.25)).abs() < 1e-12);
    }

    #[test]
    fn mode_mismatch_rejected() {
        let ctx = ctx(NoiseMode::CombinedBits);
        let dp = DpParams::new(1.0, 1e-5, 1.0, 1.0, 1).unwrap();
        let inputs = TwoPcInputs {
            csp: CspTwoPcInput {
                masked_plaintext: vec![BigUint::zero()],
                randomness: PartyRandomness::Gaussian(vec![0.0]),
            },
            aggregation_server: AsTwoPcInput {
                neg_mask: vec![BigUint::zero()],
                randomness: PartyRandomness::Bits(vec![0u8; 16]),
                participating_weight: 1,
                participants: 1,
            },
        };
        let mut transcript = RoundTranscript::new(0);
        assert!(matches!(
            ideal_2pc_noise(&inputs, &dp, &ctx, &mut transcript),
            Err(ProtocolError::RandomnessModeMismatch)
        ));
    }
}
