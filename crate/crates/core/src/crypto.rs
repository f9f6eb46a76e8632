//! Hashing, signatures and the bit-level helpers used by leader election and
//! committee sortition.
//!
//! Digests are SHA-256 (256 bits). Signatures are Ed25519 with keys derived
//! deterministically from a seed, so every simulated run is reproducible.
//! Digest-to-integer conversion is big-endian over the full 32 bytes and
//! [`truncate_bits`] keeps the least-significant bits.

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use num_bigint::BigUint;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Digest length in bits.
pub const DIGEST_BITS: u32 = 256;
/// Digest length in bytes.
pub const DIGEST_BYTES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("key seed must not be empty")]
    EmptySeed,
    #[error("bit count {0} outside 1..=256")]
    BitCountOutOfRange(u32),
    #[error("invalid hex encoding: {0}")]
    BadHex(String),
}

macro_rules! hex_newtype {
    ($name:ident, $len:expr) => {
        impl $name {
            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
                let raw = hex::decode(s).map_err(|e| CryptoError::BadHex(e.to_string()))?;
                let bytes: [u8; $len] = raw
                    .try_into()
                    .map_err(|_| CryptoError::BadHex(format!("expected {} bytes", $len)))?;
                Ok(Self(bytes))
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let h = self.to_hex();
                write!(f, "{}({}..)", stringify!($name), &h[..12])
            }
        }

        impl FromStr for $name {
            type Err = CryptoError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::from_hex(s)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

/// A 256-bit hash value.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; DIGEST_BYTES]);
hex_newtype!(Digest, DIGEST_BYTES);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_BYTES]);

    /// The full digest read as a big-endian unsigned integer.
    pub fn to_biguint(&self) -> BigUint {
        BigUint::from_bytes_be(&self.0)
    }

    /// Bytewise XOR, used for order-independent set accumulators.
    pub fn xor(&self, other: &Digest) -> Digest {
        let mut out = [0u8; DIGEST_BYTES];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(other.0.iter())) {
            *o = a ^ b;
        }
        Digest(out)
    }
}

/// Verification key; doubles as the stable identity of a user.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; 32]);
hex_newtype!(PublicKey, 32);

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);
hex_newtype!(Signature, 64);

/// Signing key plus its public identity.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.signing.sign(msg).to_bytes())
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of the plain concatenation of `parts`.
pub fn hash_concat(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Derives a key pair from `seed`. The same seed always yields the same pair.
pub fn keygen(seed: &[u8]) -> Result<KeyPair, CryptoError> {
    if seed.is_empty() {
        return Err(CryptoError::EmptySeed);
    }
    let secret = hash_concat(&[b"pocvcf/keygen", seed]);
    let signing = SigningKey::from_bytes(&secret.0);
    let public = PublicKey(signing.verifying_key().to_bytes());
    Ok(KeyPair { signing, public })
}

pub fn sign(keys: &KeyPair, msg: &[u8]) -> Signature {
    keys.sign(msg)
}

/// Returns `false` for any malformed key or signature rather than erroring.
pub fn verify(pk: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&pk.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    vk.verify(msg, &sig).is_ok()
}

/// The integer formed by the `bits` least-significant bits of `d`.
pub fn truncate_bits(d: &Digest, bits: u32) -> Result<BigUint, CryptoError> {
    if bits == 0 || bits > DIGEST_BITS {
        return Err(CryptoError::BitCountOutOfRange(bits));
    }
    if bits <= 128 {
        return Ok(BigUint::from(truncate_bits_u128(d, bits)));
    }
    let mask = (BigUint::from(1u8) << bits) - 1u8;
    Ok(d.to_biguint() & mask)
}

/// Fast path of [`truncate_bits`] for `bits <= 128`.
pub(crate) fn truncate_bits_u128(d: &Digest, bits: u32) -> u128 {
    debug_assert!((1..=128).contains(&bits));
    let mut low = [0u8; 16];
    low.copy_from_slice(&d.0[16..]);
    let v = u128::from_be_bytes(low);
    if bits == 128 {
        v
    } else {
        v & ((1u128 << bits) - 1)
    }
}

/// Simulated VRF output: the low 64 bits of `hash(randomness || pk)`.
pub fn sortition_score(randomness: &Digest, pk: &PublicKey) -> u64 {
    score64(randomness, &pk.0)
}

/// The sortition construction applied to an arbitrary suffix.
pub(crate) fn score64(randomness: &Digest, suffix: &[u8]) -> u64 {
    truncate_bits_u128(&hash_concat(&[&randomness.0, suffix]), 64) as u64
}

/// Length-prefixed field encoder: every field is written as an 8-byte
/// big-endian length followed by its bytes; integers are 8-byte big-endian.
#[derive(Debug, Default, Clone)]
pub struct Canonical {
    buf: Vec<u8>,
}

impl Canonical {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(mut self, b: &[u8]) -> Self {
        self.buf.extend_from_slice(&(b.len() as u64).to_be_bytes());
        self.buf.extend_from_slice(b);
        self
    }

    pub fn u64(self, v: u64) -> Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn digest(self, d: &Digest) -> Self {
        self.bytes(&d.0)
    }

    pub fn pk(self, pk: &PublicKey) -> Self {
        self.bytes(&pk.0)
    }

    /// Absent optional fields encode as a zero-length field.
    pub fn opt_bytes(self, b: Option<&[u8]>) -> Self {
        self.bytes(b.unwrap_or(&[]))
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn hash(self) -> Digest {
        hash(&self.buf)
    }
}
