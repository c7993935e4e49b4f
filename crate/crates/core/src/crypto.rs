//! ECDSA P-256 signatures, SHA-256 hashing and randomness.
//!
//! Signing uses deterministic nonces (RFC 6979), so a given key and message
//! always produce the same signature.

use std::fmt;

use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature as EcdsaSignature, SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::credential::CaId;
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

/// Length of an uncompressed SEC1 P-256 point.
pub const PUBLIC_KEY_LEN: usize = 65;
/// Length of a fixed-width `r || s` signature.
pub const SIGNATURE_LEN: usize = 64;

/// Raw uncompressed point encoding. Not validated on construction; a malformed
/// key simply never verifies.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(Vec<u8>);

impl PublicKey {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    fn verifying_key(&self) -> Option<VerifyingKey> {
        VerifyingKey::from_sec1_bytes(&self.0).ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", short_hex(&self.0))
    }
}

impl Canonical for PublicKey {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put_bytes(&self.0);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.bytes()?.to_vec()))
    }
}

/// A P-256 scalar. Deliberately has no canonical encoding: private keys never
/// enter a message. Key files go through [`PrivateKey::to_secret_bytes`].
#[derive(Clone)]
pub struct PrivateKey(SigningKey);

impl PrivateKey {
    pub fn public_key(&self) -> PublicKey {
        let point = self.0.verifying_key().to_encoded_point(false);
        PublicKey(point.as_bytes().to_vec())
    }

    pub fn to_secret_bytes(&self) -> [u8; 32] {
        self.0.to_bytes().into()
    }

    pub fn from_secret_bytes(bytes: &[u8; 32]) -> Option<Self> {
        SigningKey::from_bytes(bytes.into()).ok().map(Self)
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let private = PrivateKey(SigningKey::random(rng));
        Self {
            public: private.public_key(),
            private,
        }
    }

    pub fn from_private(private: PrivateKey) -> Self {
        Self {
            public: private.public_key(),
            private,
        }
    }
}

/// Generates a key pair from the OS generator, or deterministically from `seed`.
///
/// Seeded generation is for tests and reproducible simulations only. It is
/// unsafe for production keys: anyone holding the seed holds the key.
pub fn generate_keypair(seed: Option<[u8; 32]>) -> KeyPair {
    match seed {
        Some(seed) => KeyPair::generate(&mut ChaCha20Rng::from_seed(seed)),
        None => KeyPair::generate(&mut OsRng),
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature(Vec<u8>);

impl Signature {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", short_hex(&self.0))
    }
}

impl Canonical for Signature {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put_bytes(&self.0);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.bytes()?.to_vec()))
    }
}

pub fn sign(private: &PrivateKey, msg: &[u8]) -> Signature {
    let sig: EcdsaSignature = private.0.sign(msg);
    Signature(sig.to_bytes().to_vec())
}

/// Never panics; any malformed key or signature is simply `false`.
pub fn verify(public: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    if sig.0.len() != SIGNATURE_LEN {
        return false;
    }
    let Some(key) = public.verifying_key() else {
        return false;
    };
    let Ok(sig) = EcdsaSignature::from_slice(&sig.0) else {
        return false;
    };
    key.verify(msg, &sig).is_ok()
}

macro_rules! bytes32 {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; 32]);

        impl $name {
            pub fn as_bytes(&self) -> &[u8; 32] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), short_hex(&self.0))
            }
        }

        impl Canonical for $name {
            fn encode_to(&self, enc: &mut Encoder) {
                enc.put_bytes(&self.0);
            }
            fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
                let raw = dec.bytes()?;
                let arr: [u8; 32] = raw
                    .try_into()
                    .map_err(|_| DecodeError::InvalidValue($what))?;
                Ok(Self(arr))
            }
        }
    };
}

bytes32!(
    /// SHA-256 output.
    Digest256,
    "digest must be 32 bytes"
);
bytes32!(
    /// 256 bits of fresh randomness, drawn once per ticket request.
    Rnd256,
    "random value must be 32 bytes"
);

impl Rnd256 {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut out = [0u8; 32];
        rng.fill_bytes(&mut out);
        Self(out)
    }
}

pub fn sha256(bytes: &[u8]) -> Digest256 {
    Digest256(Sha256::digest(bytes).into())
}

/// `SHA-256(canonical(ca_id) || rnd)`: commits a ticket to its target
/// authority without revealing it to the ticket issuer.
pub fn hash_bind(ca_id: &CaId, rnd: &Rnd256) -> Digest256 {
    let mut hasher = Sha256::new();
    hasher.update(ca_id.to_canonical_bytes());
    hasher.update(rnd.0);
    Digest256(hasher.finalize().into())
}

fn short_hex(bytes: &[u8]) -> String {
    let mut s: String = bytes.iter().take(6).map(|b| format!("{b:02x}")).collect();
    if bytes.len() > 6 {
        s.push_str("..");
    }
    s
}
