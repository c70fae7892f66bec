//! Additively homomorphic encryption over big integers.
//!
//! The scheme is Paillier with the `g = n + 1` generator, so encryption never
//! needs a full exponentiation for the message part:
//!
//! * `Enc(m, r) = (1 + m·n) · r^n  mod n²`
//! * `Dec(c)    = L(c^λ mod n²) · μ  mod n`, with `L(u) = (u − 1)/n`,
//!   `λ = (p−1)(q−1)` and `μ = λ⁻¹ mod n`.
//!
//! Adding two ciphertexts multiplies them mod `n²`; scaling by a plaintext
//! integer is exponentiation mod `n²`. Every ciphertext carries a fingerprint
//! of the public key it was produced under and all operations reject
//! mismatched fingerprints.
//!
//! Real-valued payloads enter the ring through the fixed-point codec in
//! [`fixed`]; the byte-level wire formats live in [`wire`].

mod fixed;
mod wire;

pub use fixed::{
    decode_fixed, decrypt_vector, encode_fixed, encode_vector, encrypt_vector, FixedPointParams,
};
pub use wire::{ciphertexts_from_bytes, ciphertexts_to_bytes};

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Smallest modulus size accepted by [`keygen`]. Test configurations use this
/// floor; security-relevant deployments should stay at 2048 bits or above.
pub const MIN_MODULUS_BITS: u64 = 256;

/// Miller-Rabin rounds used during prime generation.
const MILLER_RABIN_ROUNDS: u32 = 30;

/// Errors from key generation, encryption and the fixed-point codec.
#[derive(Debug, Error)]
pub enum AheError {
    #[error("modulus size {0} is below the {MIN_MODULUS_BITS}-bit minimum")]
    ModulusTooSmall(u64),
    #[error("modulus size {0} must be even")]
    ModulusBitsOdd(u64),
    #[error("plaintext is outside the ring [0, n)")]
    PlaintextOutOfRange,
    #[error("scalar is outside the ring [0, n)")]
    ScalarOutOfRange,
    #[error("key fingerprint mismatch: expected {expected:#018x}, got {got:#018x}")]
    KeyMismatch { expected: u64, got: u64 },
    #[error("value {value} exceeds the encodable magnitude bound {bound}")]
    MagnitudeOverflow { value: f64, bound: f64 },
    #[error("decoded magnitude exceeds the slack budget; the ring sum may have wrapped")]
    WraparoundRisk,
    #[error("invalid fixed-point parameters: {0}")]
    InvalidFixedPointParams(String),
    #[error("fixed-point range 2^(frac_bits+slack_bits)·max_magnitude must stay below n/2")]
    FixedPointRangeTooLarge,
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("malformed serialized data: {0}")]
    Malformed(String),
}

/// Paillier public key. Safe to distribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    modulus_bits: u64,
    fingerprint: u64,
}

/// Paillier secret key. Holds the factorization-derived decryption material.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    p: BigUint,
    q: BigUint,
    lambda: BigUint,
    mu: BigUint,
    public: PublicKey,
}

// Keep factor material out of debug output.
impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecretKey")
            .field("p", &"[redacted]")
            .field("q", &"[redacted]")
            .field("fingerprint", &self.public.fingerprint)
            .finish()
    }
}

/// A full key pair as produced by [`keygen`].
#[derive(Debug, Clone)]
pub struct KeyPair {
    public: PublicKey,
    secret: SecretKey,
    modulus_bits: u64,
}

/// A Paillier ciphertext: a value in `[0, n²)` tagged with the fingerprint of
/// the public key it was encrypted under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    key_fingerprint: u64,
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_fingerprint(&self) -> u64 {
        self.key_fingerprint
    }
}

impl PublicKey {
    /// Public modulus `n`.
    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn modulus_bits(&self) -> u64 {
        self.modulus_bits
    }

    /// First eight bytes of SHA-256 over the big-endian modulus bytes.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn check_fingerprint(&self, ct: &Ciphertext) -> Result<(), AheError> {
        if ct.key_fingerprint != self.fingerprint {
            return Err(AheError::KeyMismatch {
                expected: self.fingerprint,
                got: ct.key_fingerprint,
            });
        }
        Ok(())
    }

    /// Encrypt a ring integer `0 ≤ m < n` with fresh randomness from `rng`.
    ///
    /// Encryption is probabilistic: two encryptions of the same plaintext
    /// differ (with overwhelming probability) as ciphertexts.
    pub fn encrypt<R: Rng + ?Sized>(&self, m: &BigUint, rng: &mut R) -> Result<Ciphertext, AheError> {
        if m >= &self.n {
            return Err(AheError::PlaintextOutOfRange);
        }
        let r = loop {
            let candidate = rng.gen_biguint_below(&self.n);
            if !candidate.is_zero() && candidate.gcd(&self.n).is_one() {
                break candidate;
            }
        };
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        let rn = r.modpow(&self.n, &self.n_squared);
        Ok(Ciphertext {
            value: (gm * rn) % &self.n_squared,
            key_fingerprint: self.fingerprint,
        })
    }

    /// Homomorphic addition: `Dec(hom_add(c1, c2)) = (m1 + m2) mod n`.
    pub fn hom_add(&self, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext, AheError> {
        self.check_fingerprint(c1)?;
        self.check_fingerprint(c2)?;
        Ok(Ciphertext {
            value: (&c1.value * &c2.value) % &self.n_squared,
            key_fingerprint: self.fingerprint,
        })
    }

    /// Homomorphic scalar multiply: `Dec(hom_scale(c, k)) = (k·m) mod n` for
    /// a plaintext integer `0 ≤ k < n`.
    pub fn hom_scale(&self, c: &Ciphertext, k: &BigUint) -> Result<Ciphertext, AheError> {
        self.check_fingerprint(c)?;
        if k >= &self.n {
            return Err(AheError::ScalarOutOfRange);
        }
        Ok(Ciphertext {
            value: c.value.modpow(k, &self.n_squared),
            key_fingerprint: self.fingerprint,
        })
    }
}

impl SecretKey {
    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    /// Decrypt a ciphertext produced under the matching public key.
    pub fn decrypt(&self, ct: &Ciphertext) -> Result<BigUint, AheError> {
        self.public.check_fingerprint(ct)?;
        let u = ct.value.modpow(&self.lambda, &self.public.n_squared);
        let l = (u - BigUint::one()) / &self.public.n;
        Ok((l * &self.mu) % &self.public.n)
    }
}

impl KeyPair {
    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    pub fn secret_key(&self) -> &SecretKey {
        &self.secret
    }

    pub fn modulus_bits(&self) -> u64 {
        self.modulus_bits
    }
}

/// Generate a Paillier key pair with an `modulus_bits`-bit modulus.
///
/// `modulus_bits` must be even and at least [`MIN_MODULUS_BITS`]. Randomness
/// comes from the caller-supplied source so test runs stay deterministic
/// under per-thread seeds.
pub fn keygen<R: Rng + ?Sized>(modulus_bits: u64, rng: &mut R) -> Result<KeyPair, AheError> {
    if modulus_bits < MIN_MODULUS_BITS {
        return Err(AheError::ModulusTooSmall(modulus_bits));
    }
    if !modulus_bits.is_multiple_of(2) {
        return Err(AheError::ModulusBitsOdd(modulus_bits));
    }
    let prime_bits = modulus_bits / 2;
    loop {
        let p = generate_prime(prime_bits, rng);
        let q = generate_prime(prime_bits, rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        if n.bits() != modulus_bits {
            continue;
        }
        let lambda = (&p - BigUint::one()) * (&q - BigUint::one());
        // gcd(λ, n) = 1 fails only if p | q−1 or q | p−1; requiring it keeps
        // μ = λ⁻¹ mod n well defined.
        let Some(mu) = mod_inverse(&lambda, &n) else {
            continue;
        };
        let n_squared = &n * &n;
        let fingerprint = fingerprint_of(&n);
        let public = PublicKey {
            n,
            n_squared,
            modulus_bits,
            fingerprint,
        };
        return Ok(KeyPair {
            secret: SecretKey {
                p,
                q,
                lambda,
                mu,
                public: public.clone(),
            },
            public,
            modulus_bits,
        });
    }
}

fn fingerprint_of(n: &BigUint) -> u64 {
    let digest = Sha256::digest(n.to_bytes_be());
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

const SMALL_PRIMES: [u64; 30] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113,
];

fn generate_prime<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> BigUint {
    loop {
        let mut candidate = rng.gen_biguint(bits);
        // Force the top two bits so p·q has exactly `2·bits` bits, and make odd.
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(bits - 2, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, rng) {
            return candidate;
        }
    }
}

fn is_probable_prime<R: Rng + ?Sized>(n: &BigUint, rng: &mut R) -> bool {
    for &p in SMALL_PRIMES.iter() {
        let sp = BigUint::from(p);
        if n == &sp {
            return true;
        }
        if (n % sp).is_zero() {
            return false;
        }
    }
    // Miller-Rabin with random bases.
    let one = BigUint::one();
    let two = BigUint::from(2u32);
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue 'witness;
        }
        for _ in 0..s.saturating_sub(1) {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Modular inverse via extended Euclid, `None` if gcd(a, m) ≠ 1.
fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    use num_bigint::BigInt;
    use num_bigint::Sign;
    let a = BigInt::from_biguint(Sign::Plus, a.clone());
    let m_int = BigInt::from_biguint(Sign::Plus, m.clone());
    let egcd = a.extended_gcd(&m_int);
    if !egcd.gcd.is_one() {
        return None;
    }
    let x = ((egcd.x % &m_int) + &m_int) % &m_int;
    x.to_biguint()
}

/// Additive inverse in the plaintext ring: `(n − v) mod n`.
pub fn ring_negate(v: &BigUint, modulus: &BigUint) -> BigUint {
    if v.is_zero() {
        BigUint::zero()
    } else {
        modulus - v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn test_keypair(seed: u64) -> KeyPair {
        keygen(256, &mut rng(seed)).unwrap()
    }

    #[test]
    fn keygen_roundtrip_512() {
        let mut r = rng(1);
        let kp = keygen(512, &mut r).unwrap();
        assert_eq!(kp.public_key().modulus().bits(), 512);
        let m = BigUint::from(42u32);
        let ct = kp.public_key().encrypt(&m, &mut r).unwrap();
        assert_eq!(kp.secret_key().decrypt(&ct).unwrap(), m);
    }

    #[test]
    fn keygen_distinct_moduli() {
        let mut r = rng(2);
        let a = keygen(512, &mut r).unwrap();
        let b = keygen(512, &mut r).unwrap();
        assert_ne!(a.public_key().modulus(), b.public_key().modulus());
    }

    #[test]
    fn keygen_rejects_small_and_odd_sizes() {
        assert!(matches!(
            keygen(200, &mut rng(3)),
            Err(AheError::ModulusTooSmall(200))
        ));
        assert!(matches!(
            keygen(257, &mut rng(3)),
            Err(AheError::ModulusBitsOdd(257))
        ));
    }

    #[test]
    fn encrypt_zero_roundtrips() {
        let kp = test_keypair(4);
        let mut r = rng(5);
        let ct = kp.public_key().encrypt(&BigUint::zero(), &mut r).unwrap();
        assert!(kp.secret_key().decrypt(&ct).unwrap().is_zero());
    }

    #[test]
    fn encryption_is_probabilistic() {
        let kp = test_keypair(6);
        let mut r = rng(7);
        let m = BigUint::from(123u32);
        let c1 = kp.public_key().encrypt(&m, &mut r).unwrap();
        let c2 = kp.public_key().encrypt(&m, &mut r).unwrap();
        assert_ne!(c1.value(), c2.value());
        assert_eq!(kp.secret_key().decrypt(&c1).unwrap(), m);
        assert_eq!(kp.secret_key().decrypt(&c2).unwrap(), m);
    }

    #[test]
    fn encrypt_rejects_out_of_range() {
        let kp = test_keypair(8);
        let mut r = rng(9);
        let n = kp.public_key().modulus().clone();
        assert!(matches!(
            kp.public_key().encrypt(&n, &mut r),
            Err(AheError::PlaintextOutOfRange)
        ));
    }

    #[test]
    fn decrypt_rejects_foreign_key() {
        let kp = test_keypair(10);
        let other = test_keypair(11);
        let mut r = rng(12);
        let ct = kp
            .public_key()
            .encrypt(&BigUint::from(7u32), &mut r)
            .unwrap();
        assert!(matches!(
            other.secret_key().decrypt(&ct),
            Err(AheError::KeyMismatch { .. })
        ));
    }

    #[test]
    fn hom_add_simple() {
        let kp = test_keypair(13);
        let mut r = rng(14);
        let pk = kp.public_key();
        let c3 = pk.encrypt(&BigUint::from(3u32), &mut r).unwrap();
        let c4 = pk.encrypt(&BigUint::from(4u32), &mut r).unwrap();
        let sum = pk.hom_add(&c3, &c4).unwrap();
        assert_eq!(kp.secret_key().decrypt(&sum).unwrap(), BigUint::from(7u32));
    }

    #[test]
    fn hom_add_identity() {
        let kp = test_keypair(15);
        let mut r = rng(16);
        let pk = kp.public_key();
        let x = BigUint::from(99u32);
        let c0 = pk.encrypt(&BigUint::zero(), &mut r).unwrap();
        let cx = pk.encrypt(&x, &mut r).unwrap();
        let sum = pk.hom_add(&c0, &cx).unwrap();
        assert_eq!(kp.secret_key().decrypt(&sum).unwrap(), x);
    }

    #[test]
    fn hom_add_fold_matches_bigint_sum() {
        let kp = test_keypair(17);
        let mut r = rng(18);
        let pk = kp.public_key();
        let n = pk.modulus().clone();
        let values: Vec<BigUint> = (0..10).map(|_| r.gen_biguint_below(&n)).collect();
        // Independent oracle: plain big-integer sum reduced mod n.
        let expected = values.iter().fold(BigUint::zero(), |acc, v| acc + v) % &n;
        let cts: Vec<Ciphertext> = values
            .iter()
            .map(|v| pk.encrypt(v, &mut r).unwrap())
            .collect();
        let folded = cts[1..]
            .iter()
            .fold(cts[0].clone(), |acc, c| pk.hom_add(&acc, c).unwrap());
        assert_eq!(kp.secret_key().decrypt(&folded).unwrap(), expected);
    }

    #[test]
    fn hom_add_rejects_cross_key() {
        let kp = test_keypair(19);
        let other = test_keypair(20);
        let mut r = rng(21);
        let c1 = kp
            .public_key()
            .encrypt(&BigUint::from(1u32), &mut r)
            .unwrap();
        let c2 = other
            .public_key()
            .encrypt(&BigUint::from(2u32), &mut r)
            .unwrap();
        assert!(matches!(
            kp.public_key().hom_add(&c1, &c2),
            Err(AheError::KeyMismatch { .. })
        ));
    }

    #[test]
    fn hom_scale_identity_annihilator_and_product() {
        let kp = test_keypair(22);
        let mut r = rng(23);
        let pk = kp.public_key();
        let sk = kp.secret_key();
        let m = BigUint::from(5u32);
        let c = pk.encrypt(&m, &mut r).unwrap();
        let one = pk.hom_scale(&c, &BigUint::one()).unwrap();
        assert_eq!(sk.decrypt(&one).unwrap(), m);
        let zero = pk.hom_scale(&c, &BigUint::zero()).unwrap();
        assert!(sk.decrypt(&zero).unwrap().is_zero());
        let tripled = pk.hom_scale(&c, &BigUint::from(3u32)).unwrap();
        // Oracle: plain multiplication.
        assert_eq!(sk.decrypt(&tripled).unwrap(), BigUint::from(15u32));
    }

    #[test]
    fn hom_scale_rejects_out_of_range_scalar() {
        let kp = test_keypair(24);
        let mut r = rng(25);
        let pk = kp.public_key();
        let c = pk.encrypt(&BigUint::from(5u32), &mut r).unwrap();
        let n = pk.modulus().clone();
        assert!(matches!(
            pk.hom_scale(&c, &n),
            Err(AheError::ScalarOutOfRange)
        ));
    }

    #[test]
    fn semantic_randomization_over_many_trials() {
        let kp = test_keypair(26);
        let mut r = rng(27);
        let pk = kp.public_key();
        let m = BigUint::from(77u32);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..1000 {
            let ct = pk.encrypt(&m, &mut r).unwrap();
            assert!(seen.insert(ct.value().clone()), "ciphertext collision");
        }
    }

    #[test]
    fn ring_negate_cancels() {
        let kp = test_keypair(28);
        let n = kp.public_key().modulus();
        let v = BigUint::from(12345u32);
        assert_eq!((&v + ring_negate(&v, n)) % n, BigUint::zero());
        assert!(ring_negate(&BigUint::zero(), n).is_zero());
    }
}
