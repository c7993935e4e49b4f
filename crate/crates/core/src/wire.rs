//! Message envelopes, framing and freshness.
//!
//! Frame layout (all integers big-endian):
//!
//! ```text
//! "VPKI" | 0x01 | msg_type:u16 | nonce:u64 | timestamp:u64 | payload_len:u32 | payload
//! ```

use std::collections::{HashMap, VecDeque};

use parking_lot::Mutex;
use thiserror::Error;

use crate::crypto::{self, PrivateKey, PublicKey, Signature};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::time::TimePoint;

pub const MAGIC: [u8; 4] = *b"VPKI";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 4 + 1 + 2 + 8 + 8 + 4;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

/// Message type registry.
pub mod msg {
    pub const TICKET_REQ: u16 = 0x0001;
    pub const TICKET_RES: u16 = 0x0002;
    pub const PSNYM_REQ: u16 = 0x0003;
    pub const PSNYM_RES: u16 = 0x0004;
    pub const FTKT_REQ: u16 = 0x0005;
    pub const FTKT_RES: u16 = 0x0006;
    pub const NTKT_REQ: u16 = 0x0007;
    pub const NTKT_RES: u16 = 0x0008;
    pub const CRL_REQ: u16 = 0x0010;
    pub const CRL_RES: u16 = 0x0011;
    pub const OCSP_REQ: u16 = 0x0012;
    pub const OCSP_RES: u16 = 0x0013;
    /// Operator to RA: resolve a pseudonym.
    pub const RESOLVE_REQ: u16 = 0x0020;
    pub const RESOLVE_RES: u16 = 0x0021;
    /// RA to PCA: map a pseudonym to its ticket, optionally revoking.
    pub const RESOLVE_MAP_REQ: u16 = 0x0022;
    pub const RESOLVE_MAP_RES: u16 = 0x0023;
    /// RA to LTCA: map a ticket to an identity, optionally revoking the LTC.
    pub const RESOLVE_TICKET_REQ: u16 = 0x0024;
    pub const RESOLVE_TICKET_RES: u16 = 0x0025;
    pub const DIR_REQ: u16 = 0x0030;
    pub const DIR_RES: u16 = 0x0031;
    pub const REG_REQ: u16 = 0x0040;
    pub const REG_RES: u16 = 0x0041;
    pub const REG_UPDATE_REQ: u16 = 0x0042;
    pub const REG_UPDATE_RES: u16 = 0x0043;
    pub const ERR: u16 = 0x00FF;

    /// Response type paired with a request type.
    pub fn response_for(request: u16) -> Option<u16> {
        match request {
            TICKET_REQ | PSNYM_REQ | FTKT_REQ | NTKT_REQ | CRL_REQ | OCSP_REQ | RESOLVE_REQ
            | RESOLVE_MAP_REQ | RESOLVE_TICKET_REQ | DIR_REQ | REG_REQ | REG_UPDATE_REQ => {
                Some(request + 1)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub msg_type: u16,
    pub nonce: u64,
    pub timestamp: TimePoint,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame shorter than header")]
    Truncated,
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("payload of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("declared payload length {declared} but {actual} bytes present")]
    LengthMismatch { declared: usize, actual: usize },
}

pub fn frame(env: &Envelope) -> Vec<u8> {
    assert!(env.payload.len() <= MAX_PAYLOAD, "payload exceeds 16 MiB");
    let mut out = Vec::with_capacity(HEADER_LEN + env.payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&env.msg_type.to_be_bytes());
    out.extend_from_slice(&env.nonce.to_be_bytes());
    out.extend_from_slice(&env.timestamp.to_be_bytes());
    out.extend_from_slice(&(env.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&env.payload);
    out
}

/// Validates a header and returns the payload length it declares.
pub fn payload_len(header: &[u8]) -> Result<usize, FrameError> {
    if header.len() < HEADER_LEN {
        return Err(FrameError::Truncated);
    }
    if header[..4] != MAGIC {
        return Err(FrameError::BadMagic);
    }
    if header[4] != VERSION {
        return Err(FrameError::BadVersion(header[4]));
    }
    let len = u32::from_be_bytes(header[23..27].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::TooLarge(len));
    }
    Ok(len)
}

pub fn deframe(bytes: &[u8]) -> Result<Envelope, FrameError> {
    let len = payload_len(bytes)?;
    let actual = bytes.len() - HEADER_LEN;
    if actual != len {
        return Err(FrameError::LengthMismatch {
            declared: len,
            actual,
        });
    }
    Ok(Envelope {
        msg_type: u16::from_be_bytes(bytes[5..7].try_into().unwrap()),
        nonce: u64::from_be_bytes(bytes[7..15].try_into().unwrap()),
        timestamp: u64::from_be_bytes(bytes[15..23].try_into().unwrap()),
        payload: bytes[HEADER_LEN..].to_vec(),
    })
}

/// Builds the response envelope: nonce `N + 1` (mod 2^64), fresh timestamp.
pub fn respond(request: &Envelope, msg_type: u16, body: Vec<u8>, now: TimePoint) -> Envelope {
    Envelope {
        msg_type,
        nonce: request.nonce.wrapping_add(1),
        timestamp: now,
        payload: body,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreshnessPolicy {
    pub skew_seconds: u64,
    pub retention_seconds: u64,
}

impl Default for FreshnessPolicy {
    fn default() -> Self {
        Self {
            skew_seconds: 300,
            retention_seconds: 600,
        }
    }
}

impl FreshnessPolicy {
    pub fn with_skew(skew_seconds: u64) -> Self {
        Self {
            skew_seconds,
            retention_seconds: 2 * skew_seconds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FreshnessError {
    #[error("timestamp outside the clock-skew window")]
    StaleTimestamp,
    #[error("nonce already seen")]
    ReplayedNonce,
}

#[derive(Debug, Default)]
struct NonceWindow {
    seen: HashMap<u64, TimePoint>,
    order: VecDeque<(TimePoint, u64)>,
}

/// Recently accepted nonces. Check-and-insert is atomic.
#[derive(Debug)]
pub struct NonceCache {
    policy: FreshnessPolicy,
    inner: Mutex<NonceWindow>,
}

impl NonceCache {
    pub fn new(policy: FreshnessPolicy) -> Self {
        Self {
            policy,
            inner: Mutex::new(NonceWindow::default()),
        }
    }

    pub fn policy(&self) -> FreshnessPolicy {
        self.policy
    }

    /// Records `nonce` unless already present; `false` on replay.
    pub fn insert(&self, nonce: u64, now: TimePoint) -> bool {
        let mut w = self.inner.lock();
        while let Some(&(at, n)) = w.order.front() {
            if at.saturating_add(self.policy.retention_seconds) >= now {
                break;
            }
            w.order.pop_front();
            if w.seen.get(&n) == Some(&at) {
                w.seen.remove(&n);
            }
        }
        if w.seen.contains_key(&nonce) {
            return false;
        }
        w.seen.insert(nonce, now);
        w.order.push_back((now, nonce));
        true
    }

    pub fn len(&self) -> usize {
        self.inner.lock().seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Accepts iff the timestamp is within the skew window and the nonce is
/// unseen within the retention window; an accepted nonce is recorded.
pub fn check_freshness(
    env: &Envelope,
    now: TimePoint,
    seen_nonces: &NonceCache,
) -> Result<(), FreshnessError> {
    if env.timestamp.abs_diff(now) > seen_nonces.policy.skew_seconds {
        return Err(FreshnessError::StaleTimestamp);
    }
    if !seen_nonces.insert(env.nonce, now) {
        return Err(FreshnessError::ReplayedNonce);
    }
    Ok(())
}

/// Whether an endpoint authenticates the client as well as the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelAuthMode {
    Mutual,
    ServerOnly,
}

impl ChannelAuthMode {
    pub fn for_request(msg_type: u16) -> ChannelAuthMode {
        match msg_type {
            msg::TICKET_REQ
            | msg::FTKT_REQ
            | msg::REG_UPDATE_REQ
            | msg::RESOLVE_REQ
            | msg::RESOLVE_MAP_REQ
            | msg::RESOLVE_TICKET_REQ => ChannelAuthMode::Mutual,
            _ => ChannelAuthMode::ServerOnly,
        }
    }
}

/// Envelope payload: the canonical message body plus an optional
/// authenticator binding it to the envelope header.
///
/// This is the in-process stand-in for channel authentication: the server
/// signs every response, and a mutually authenticated request carries the
/// client's signature under its credential key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sealed {
    pub body: Vec<u8>,
    pub auth: Option<Signature>,
}

impl Canonical for Sealed {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put_bytes(&self.body);
        enc.put(&self.auth);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            body: dec.bytes()?.to_vec(),
            auth: dec.get()?,
        })
    }
}

/// Bytes covered by an authenticator: the frame the body would travel in.
pub fn auth_input(msg_type: u16, nonce: u64, timestamp: TimePoint, body: &[u8]) -> Vec<u8> {
    frame(&Envelope {
        msg_type,
        nonce,
        timestamp,
        payload: body.to_vec(),
    })
}

pub fn seal(
    msg_type: u16,
    nonce: u64,
    timestamp: TimePoint,
    body: Vec<u8>,
    signer: Option<&PrivateKey>,
) -> Envelope {
    let auth = signer.map(|k| crypto::sign(k, &auth_input(msg_type, nonce, timestamp, &body)));
    Envelope {
        msg_type,
        nonce,
        timestamp,
        payload: Sealed { body, auth }.to_canonical_bytes(),
    }
}

pub fn open(env: &Envelope) -> Result<Sealed, DecodeError> {
    Sealed::from_canonical_bytes(&env.payload)
}

/// Verifies a sealed payload's authenticator under `key`.
pub fn verify_sealed(env: &Envelope, sealed: &Sealed, key: &PublicKey) -> bool {
    match &sealed.auth {
        Some(sig) => crypto::verify(
            key,
            &auth_input(env.msg_type, env.nonce, env.timestamp, &sealed.body),
            sig,
        ),
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("endpoint overloaded")]
    Overloaded,
    #[error("connection closed before a response arrived")]
    Closed,
    #[error("i/o error: {0}")]
    Io(String),
}

/// Carries one request frame to an endpoint and returns its response frame.
pub trait Transport: Send + Sync {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError>;
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        (**self).exchange(request)
    }
}
