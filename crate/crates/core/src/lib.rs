//! Core building blocks of a ticket-mediated vehicular PKI: canonical
//! encoding, ECDSA P-256 signatures, credential types, the wire frame and
//! the request/response bodies exchanged with the authorities.

pub mod credential;
pub mod crypto;
pub mod encoding;
pub mod files;
pub mod messages;
pub mod policy;
pub mod rpc;
pub mod snapshot;
pub mod time;
pub mod wire;

pub use credential::{
    make_csr, validate_chain, verify_pop, AuthorityCertificate, CaId, Csr, Interval,
    LongTermCertificate, Pseudonym, RevocationList, Role, SerialNumber, SignedCredential, Ticket,
    TrustStore, ValidationResult,
};
pub use crypto::{generate_keypair, hash_bind, Digest256, KeyPair, PrivateKey, PublicKey, Rnd256, Signature};
pub use encoding::{Canonical, DecodeError};
pub use policy::{align_lifetimes, DomainPolicy};
pub use time::{Clock, TimePoint};
