//! Fixed-point bridge between real-valued updates and the plaintext ring.
//!
//! A real `x` is stored as `round(x · 2^frac_bits)`; negative values wrap to
//! the upper half of the ring (`n − |v|`), which makes homomorphic
//! subtraction free. `slack_bits` reserves headroom so that up to
//! `2^slack_bits` encodings can be summed homomorphically without the total
//! ever crossing the `n/2` sign boundary; every decode asserts the result is
//! still inside that budget.

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AheError, Ciphertext, PublicKey, SecretKey};

/// The real↔integer encoding contract shared by all protocol parties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointParams {
    /// Bits of fractional precision; grid step is `2^(−frac_bits)`.
    pub frac_bits: u32,
    /// Largest encodable magnitude for a single value.
    pub max_magnitude: f64,
    /// Headroom bits reserved for homomorphic summation.
    pub slack_bits: u32,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        // Supports sums of ~10⁶ clipped updates without wraparound at the
        // default 2048-bit modulus.
        Self {
            frac_bits: 32,
            max_magnitude: 1024.0,
            slack_bits: 20,
        }
    }
}

impl FixedPointParams {
    pub fn new(frac_bits: u32, max_magnitude: f64, slack_bits: u32) -> Result<Self, AheError> {
        let params = Self {
            frac_bits,
            max_magnitude,
            slack_bits,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), AheError> {
        if self.frac_bits == 0 || self.frac_bits > 52 {
            return Err(AheError::InvalidFixedPointParams(format!(
                "frac_bits must be in [1, 52], got {}",
                self.frac_bits
            )));
        }
        if !(self.max_magnitude.is_finite() && self.max_magnitude > 0.0) {
            return Err(AheError::InvalidFixedPointParams(format!(
                "max_magnitude must be finite and positive, got {}",
                self.max_magnitude
            )));
        }
        if self.frac_bits + self.slack_bits + (self.max_magnitude.log2().ceil() as u32) > 120 {
            return Err(AheError::InvalidFixedPointParams(
                "frac_bits + slack_bits + log2(max_magnitude) must stay below 120".into(),
            ));
        }
        Ok(())
    }

    /// Grid step `2^(−frac_bits)`.
    pub fn resolution(&self) -> f64 {
        (self.frac_bits as f64).exp2().recip()
    }

    /// Largest encoded magnitude a single value may take.
    fn unit_bound(&self) -> u128 {
        (self.max_magnitude * (self.frac_bits as f64).exp2()).ceil() as u128
    }

    /// Largest encoded magnitude any legal homomorphic sum may take.
    fn slack_bound(&self) -> BigUint {
        BigUint::from(self.unit_bound()) << self.slack_bits
    }

    /// Check that the full slack budget fits under `n/2` for the given ring.
    pub fn ensure_fits(&self, modulus: &BigUint) -> Result<(), AheError> {
        self.validate()?;
        if (self.slack_bound() << 1u32) >= *modulus {
            return Err(AheError::FixedPointRangeTooLarge);
        }
        Ok(())
    }
}

/// Encode a real into the plaintext ring `[0, n)`.
pub fn encode_fixed(x: f64, params: &FixedPointParams, modulus: &BigUint) -> Result<BigUint, AheError> {
    if !x.is_finite() || x.abs() > params.max_magnitude {
        return Err(AheError::MagnitudeOverflow {
            value: x,
            bound: params.max_magnitude,
        });
    }
    let scaled = (x * (params.frac_bits as f64).exp2()).round() as i128;
    if scaled >= 0 {
        Ok(BigUint::from(scaled as u128))
    } else {
        Ok(modulus - BigUint::from(scaled.unsigned_abs()))
    }
}

/// Decode a ring integer back to a real, interpreting the upper half of the
/// ring as negative. Errors if the magnitude exceeds the slack budget, which
/// indicates a wrapped (overflowed) homomorphic sum.
pub fn decode_fixed(m: &BigUint, params: &FixedPointParams, modulus: &BigUint) -> Result<f64, AheError> {
    let half = modulus >> 1u32;
    let (negative, magnitude) = if *m > half {
        (true, modulus - m)
    } else {
        (false, m.clone())
    };
    if magnitude > params.slack_bound() {
        return Err(AheError::WraparoundRisk);
    }
    let magnitude = magnitude
        .to_i128()
        .ok_or(AheError::WraparoundRisk)?;
    let real = magnitude as f64 * params.resolution();
    Ok(if negative { -real } else { real })
}

/// Elementwise [`encode_fixed`].
pub fn encode_vector(
    values: &[f64],
    params: &FixedPointParams,
    modulus: &BigUint,
) -> Result<Vec<BigUint>, AheError> {
    values
        .iter()
        .map(|&x| encode_fixed(x, params, modulus))
        .collect()
}

/// Encode and encrypt a real vector elementwise.
pub fn encrypt_vector<R: Rng + ?Sized>(
    pk: &PublicKey,
    values: &[f64],
    params: &FixedPointParams,
    rng: &mut R,
) -> Result<Vec<Ciphertext>, AheError> {
    params.ensure_fits(pk.modulus())?;
    values
        .iter()
        .map(|&x| {
            let m = encode_fixed(x, params, pk.modulus())?;
            pk.encrypt(&m, rng)
        })
        .collect()
}

/// Decrypt and decode a ciphertext vector elementwise.
pub fn decrypt_vector(
    sk: &SecretKey,
    cts: &[Ciphertext],
    params: &FixedPointParams,
) -> Result<Vec<f64>, AheError> {
    let modulus = sk.public_key().modulus().clone();
    cts.iter()
        .map(|ct| {
            let m = sk.decrypt(ct)?;
            decode_fixed(&m, params, &modulus)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ahe::keygen;
    use num_bigint::BigUint;
    use num_traits::Zero;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn params() -> FixedPointParams {
        FixedPointParams::default()
    }

    fn shared_keypair() -> &'static crate::ahe::KeyPair {
        static KP: std::sync::OnceLock<crate::ahe::KeyPair> = std::sync::OnceLock::new();
        KP.get_or_init(|| keygen(256, &mut ChaCha12Rng::seed_from_u64(1000)).unwrap())
    }

    fn test_modulus() -> BigUint {
        // Any odd ring large enough for the slack budget works for codec tests.
        BigUint::from(1u8) << 200
    }

    #[test]
    fn encode_zero_is_zero() {
        let n = test_modulus();
        let m = encode_fixed(0.0, &params(), &n).unwrap();
        assert!(m.is_zero());
        assert_eq!(decode_fixed(&m, &params(), &n).unwrap(), 0.0);
    }

    #[test]
    fn additive_inverse_through_wraparound() {
        let n = test_modulus();
        let p = params();
        let a = encode_fixed(1.5, &p, &n).unwrap();
        let b = encode_fixed(-1.5, &p, &n).unwrap();
        let sum = (a + b) % &n;
        assert_eq!(decode_fixed(&sum, &p, &n).unwrap(), 0.0);
    }

    #[test]
    fn random_sum_within_tolerance() {
        let n = test_modulus();
        let p = params();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let xs: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut ring_sum = BigUint::zero();
        for &x in &xs {
            ring_sum = (ring_sum + encode_fixed(x, &p, &n).unwrap()) % &n;
        }
        // Oracle: compensated (Kahan) summation of the raw reals.
        let mut sum = 0.0f64;
        let mut c = 0.0f64;
        for &x in &xs {
            let y = x - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        let decoded = decode_fixed(&ring_sum, &p, &n).unwrap();
        assert!(
            (decoded - sum).abs() <= 100.0 * p.resolution(),
            "decoded {decoded} vs oracle {sum}"
        );
    }

    #[test]
    fn encode_is_injective_on_the_grid() {
        let n = test_modulus();
        let p = params();
        let step = p.resolution();
        let mut seen = std::collections::HashSet::new();
        for i in -500i64..=500 {
            let m = encode_fixed(i as f64 * step, &p, &n).unwrap();
            assert!(seen.insert(m), "grid point {i} collided");
        }
    }

    #[test]
    fn overflow_rejected() {
        let n = test_modulus();
        let p = params();
        assert!(matches!(
            encode_fixed(2000.0, &p, &n),
            Err(AheError::MagnitudeOverflow { .. })
        ));
    }

    #[test]
    fn wraparound_risk_detected() {
        let n = test_modulus();
        let p = params();
        // A value just above the slack budget but below n/2.
        let over = (BigUint::from((p.max_magnitude * (p.frac_bits as f64).exp2()) as u128)
            << (p.slack_bits + 2)) %
            &n;
        assert!(matches!(
            decode_fixed(&over, &p, &n),
            Err(AheError::WraparoundRisk)
        ));
    }

    #[test]
    fn params_must_fit_modulus() {
        let p = params();
        let tiny = BigUint::from(1u8) << 40;
        assert!(matches!(
            p.ensure_fits(&tiny),
            Err(AheError::FixedPointRangeTooLarge)
        ));
    }

    #[test]
    fn vector_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let kp = keygen(256, &mut rng).unwrap();
        let p = params();
        let v = vec![0.25, -1.75, 3.5, 0.0, -0.125];
        let cts = encrypt_vector(kp.public_key(), &v, &p, &mut rng).unwrap();
        let back = decrypt_vector(kp.secret_key(), &cts, &p).unwrap();
        for (orig, dec) in v.iter().zip(&back) {
            assert!((orig - dec).abs() <= p.resolution());
        }
    }

    #[test]
    fn zero_vector_roundtrips_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let kp = keygen(256, &mut rng).unwrap();
        let p = params();
        let v = vec![0.0; 4];
        let cts = encrypt_vector(kp.public_key(), &v, &p, &mut rng).unwrap();
        assert_eq!(decrypt_vector(kp.secret_key(), &cts, &p).unwrap(), v);
    }

    #[test]
    fn elementwise_hom_add_matches_vector_sum() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let kp = keygen(256, &mut rng).unwrap();
        let pk = kp.public_key();
        let p = params();
        let v1 = vec![0.5, -2.25, 1.0];
        let v2 = vec![-0.5, 4.5, 0.125];
        let c1 = encrypt_vector(pk, &v1, &p, &mut rng).unwrap();
        let c2 = encrypt_vector(pk, &v2, &p, &mut rng).unwrap();
        let summed: Vec<_> = c1
            .iter()
            .zip(&c2)
            .map(|(a, b)| pk.hom_add(a, b).unwrap())
            .collect();
        let dec = decrypt_vector(kp.secret_key(), &summed, &p).unwrap();
        for ((a, b), d) in v1.iter().zip(&v2).zip(&dec) {
            assert!((a + b - d).abs() <= 2.0 * p.resolution());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn encode_decode_roundtrip(x in -1024.0f64..1024.0) {
            let n = test_modulus();
            let p = params();
            let decoded = decode_fixed(&encode_fixed(x, &p, &n).unwrap(), &p, &n).unwrap();
            prop_assert!((decoded - x).abs() <= p.resolution());
        }

        #[test]
        fn homomorphic_sum_of_k_values(xs in proptest::collection::vec(-8.0f64..8.0, 1..12)) {
            let mut rng = ChaCha12Rng::seed_from_u64(11);
            let kp = shared_keypair();
            let pk = kp.public_key();
            let p = params();
            let cts = encrypt_vector(pk, &xs, &p, &mut rng).unwrap();
            let folded = cts[1..].iter().fold(cts[0].clone(), |acc, c| pk.hom_add(&acc, c).unwrap());
            let m = kp.secret_key().decrypt(&folded).unwrap();
            let decoded = decode_fixed(&m, &p, pk.modulus()).unwrap();
            let real: f64 = xs.iter().sum();
            prop_assert!((decoded - real).abs() <= xs.len() as f64 * p.resolution());
        }
    }
}
