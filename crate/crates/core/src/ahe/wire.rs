//! Byte-level serialization for keys and ciphertexts.
//!
//! Big integers are length-prefixed big-endian: a `u32` big-endian byte count
//! followed by the magnitude bytes with no leading zeros (zero serializes as
//! a bare zero-length prefix). Layouts, all fields big-endian:
//!
//! * Public key:  `[version u8 = 1][modulus_bits u64][bigint n]`
//! * Key pair:    `[version u8 = 1][modulus_bits u64][bigint p][bigint q]`
//! * Ciphertext:  `[key_fingerprint u64][bigint value]`
//! * Ciphertext vector: `[count u32]` followed by `count` ciphertexts
//!
//! Stability is promised only within one crate version.

use num_bigint::BigUint;
use num_traits::One;

use super::{fingerprint_of, mod_inverse, AheError, Ciphertext, KeyPair, PublicKey, SecretKey};

const WIRE_VERSION: u8 = 1;

fn put_biguint(out: &mut Vec<u8>, v: &BigUint) {
    let bytes = v.to_bytes_be();
    let bytes = if v.bits() == 0 { &[][..] } else { &bytes[..] };
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

fn take<'a>(buf: &mut &'a [u8], len: usize, what: &str) -> Result<&'a [u8], AheError> {
    if buf.len() < len {
        return Err(AheError::Malformed(format!(
            "truncated {what}: need {len} bytes, have {}",
            buf.len()
        )));
    }
    let (head, tail) = buf.split_at(len);
    *buf = tail;
    Ok(head)
}

fn get_biguint(buf: &mut &[u8], what: &str) -> Result<BigUint, AheError> {
    let len_bytes = take(buf, 4, what)?;
    let len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
    let bytes = take(buf, len, what)?;
    if len > 0 && bytes[0] == 0 {
        return Err(AheError::Malformed(format!(
            "{what} has a non-canonical leading zero byte"
        )));
    }
    Ok(BigUint::from_bytes_be(bytes))
}

fn get_u64(buf: &mut &[u8], what: &str) -> Result<u64, AheError> {
    Ok(u64::from_be_bytes(take(buf, 8, what)?.try_into().unwrap()))
}

fn check_version(buf: &mut &[u8]) -> Result<(), AheError> {
    let v = take(buf, 1, "version byte")?[0];
    if v != WIRE_VERSION {
        return Err(AheError::Malformed(format!(
            "unsupported wire version {v}, expected {WIRE_VERSION}"
        )));
    }
    Ok(())
}

fn check_empty(buf: &[u8], what: &str) -> Result<(), AheError> {
    if !buf.is_empty() {
        return Err(AheError::Malformed(format!(
            "{} trailing bytes after {what}",
            buf.len()
        )));
    }
    Ok(())
}

impl PublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![WIRE_VERSION];
        out.extend_from_slice(&self.modulus_bits.to_be_bytes());
        put_biguint(&mut out, &self.n);
        out
    }

    pub fn from_bytes(mut buf: &[u8]) -> Result<Self, AheError> {
        let buf = &mut buf;
        check_version(buf)?;
        let modulus_bits = get_u64(buf, "modulus_bits")?;
        let n = get_biguint(buf, "public modulus")?;
        check_empty(buf, "public key")?;
        if n.bits() != modulus_bits {
            return Err(AheError::Malformed(format!(
                "declared {modulus_bits} modulus bits but n has {}",
                n.bits()
            )));
        }
        let n_squared = &n * &n;
        let fingerprint = fingerprint_of(&n);
        Ok(PublicKey {
            n,
            n_squared,
            modulus_bits,
            fingerprint,
        })
    }
}

impl KeyPair {
    /// Serialize the full key pair (including secret material).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![WIRE_VERSION];
        out.extend_from_slice(&self.modulus_bits.to_be_bytes());
        put_biguint(&mut out, &self.secret.p);
        put_biguint(&mut out, &self.secret.q);
        out
    }

    pub fn from_bytes(mut buf: &[u8]) -> Result<Self, AheError> {
        let buf = &mut buf;
        check_version(buf)?;
        let modulus_bits = get_u64(buf, "modulus_bits")?;
        let p = get_biguint(buf, "prime p")?;
        let q = get_biguint(buf, "prime q")?;
        check_empty(buf, "key pair")?;
        let n = &p * &q;
        if n.bits() != modulus_bits {
            return Err(AheError::Malformed(format!(
                "declared {modulus_bits} modulus bits but p·q has {}",
                n.bits()
            )));
        }
        let lambda = (&p - BigUint::one()) * (&q - BigUint::one());
        let mu = mod_inverse(&lambda, &n)
            .ok_or_else(|| AheError::Malformed("λ is not invertible mod n".into()))?;
        let n_squared = &n * &n;
        let fingerprint = fingerprint_of(&n);
        let public = PublicKey {
            n,
            n_squared,
            modulus_bits,
            fingerprint,
        };
        Ok(KeyPair {
            secret: SecretKey {
                p,
                q,
                lambda,
                mu,
                public: public.clone(),
            },
            public,
            modulus_bits,
        })
    }
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.key_fingerprint.to_be_bytes());
        put_biguint(&mut out, &self.value);
        out
    }

    pub fn from_bytes(mut buf: &[u8]) -> Result<Self, AheError> {
        let buf = &mut buf;
        let ct = Self::read(buf)?;
        check_empty(buf, "ciphertext")?;
        Ok(ct)
    }

    fn read(buf: &mut &[u8]) -> Result<Self, AheError> {
        let key_fingerprint = get_u64(buf, "key fingerprint")?;
        let value = get_biguint(buf, "ciphertext value")?;
        Ok(Ciphertext {
            value,
            key_fingerprint,
        })
    }
}

/// Serialize a ciphertext vector: `[count u32 BE]` then each ciphertext.
pub fn ciphertexts_to_bytes(cts: &[Ciphertext]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(cts.len() as u32).to_be_bytes());
    for ct in cts {
        out.extend_from_slice(&ct.to_bytes());
    }
    out
}

pub fn ciphertexts_from_bytes(mut buf: &[u8]) -> Result<Vec<Ciphertext>, AheError> {
    let buf = &mut buf;
    let count = u32::from_be_bytes(take(buf, 4, "ciphertext count")?.try_into().unwrap());
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        out.push(Ciphertext::read(buf)?);
    }
    check_empty(buf, "ciphertext vector")?;
    Ok(out)
}
