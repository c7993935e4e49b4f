//! Request and response bodies carried inside sealed envelopes.

use std::fmt;

use crate::credential::{
    AuthorityCertificate, CaId, Csr, Interval, LongTermCertificate, Pseudonym, Role, SerialNumber,
    Ticket,
};
use crate::crypto::{self, Digest256, PrivateKey, PublicKey, Rnd256, Signature};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::time::TimePoint;

/// Error codes returned in `ERR` envelopes and per-item rejections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u16)]
pub enum ErrorCode {
    BadRequest = 1,
    StaleTimestamp = 2,
    ReplayedNonce = 3,
    BadSignature = 4,
    UnknownIssuer = 5,
    Expired = 6,
    RevokedCredential = 7,
    OverlappingTicket = 8,
    DuplicateSubject = 9,
    BadProofOfPossession = 10,
    UnknownSubject = 11,
    TicketBindingMismatch = 12,
    TicketReused = 13,
    IntervalViolation = 14,
    TicketInvalid = 15,
    MaliciousRequester = 16,
    UnknownTicket = 17,
    UnknownPseudonym = 18,
    Unauthorized = 19,
    NotFound = 20,
    NoSlot = 21,
    Unsupported = 22,
    Internal = 23,
}

impl ErrorCode {
    const ALL: [ErrorCode; 23] = [
        ErrorCode::BadRequest,
        ErrorCode::StaleTimestamp,
        ErrorCode::ReplayedNonce,
        ErrorCode::BadSignature,
        ErrorCode::UnknownIssuer,
        ErrorCode::Expired,
        ErrorCode::RevokedCredential,
        ErrorCode::OverlappingTicket,
        ErrorCode::DuplicateSubject,
        ErrorCode::BadProofOfPossession,
        ErrorCode::UnknownSubject,
        ErrorCode::TicketBindingMismatch,
        ErrorCode::TicketReused,
        ErrorCode::IntervalViolation,
        ErrorCode::TicketInvalid,
        ErrorCode::MaliciousRequester,
        ErrorCode::UnknownTicket,
        ErrorCode::UnknownPseudonym,
        ErrorCode::Unauthorized,
        ErrorCode::NotFound,
        ErrorCode::NoSlot,
        ErrorCode::Unsupported,
        ErrorCode::Internal,
    ];

    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(code: u16) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.code() == code)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Canonical for ErrorCode {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put_u16(self.code());
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Self::from_code(dec.u16()?).ok_or(DecodeError::InvalidValue("error code"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub detail: String,
}

impl Canonical for ErrorBody {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&self.code);
        enc.put_str(&self.detail);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            code: dec.get()?,
            detail: dec.string()?,
        })
    }
}

macro_rules! canonical_struct {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl Canonical for $ty {
            fn encode_to(&self, enc: &mut Encoder) {
                $(enc.put(&self.$field);)*
            }
            fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
                Ok(Self { $($field: dec.get()?,)* })
            }
        }
    };
}

/// Vehicle to LTCA, native or foreign ticket. Authenticated under the LTC key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TicketRequest {
    pub digest: Digest256,
    pub requested: Interval,
    pub ltc: LongTermCertificate,
}
canonical_struct!(TicketRequest { digest, requested, ltc });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TicketResponse {
    pub ticket: Ticket,
}
canonical_struct!(TicketResponse { ticket });

/// Roaming vehicle to foreign LTCA: open the foreign ticket with `rnd` and
/// receive a native ticket bound to `digest_pca`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForeignExchangeRequest {
    pub f_ticket: Ticket,
    pub rnd: Rnd256,
    pub digest_pca: Digest256,
    pub requested: Interval,
}
canonical_struct!(ForeignExchangeRequest {
    f_ticket,
    rnd,
    digest_pca,
    requested
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudonymRequest {
    pub rnd: Rnd256,
    pub requested: Interval,
    pub ticket: Ticket,
    pub csrs: Vec<Csr>,
}
canonical_struct!(PseudonymRequest {
    rnd,
    requested,
    ticket,
    csrs
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PseudonymItem {
    Issued(Pseudonym),
    Rejected(ErrorCode),
}

impl Canonical for PseudonymItem {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            PseudonymItem::Issued(p) => {
                enc.put_u8(0);
                enc.put(p);
            }
            PseudonymItem::Rejected(code) => {
                enc.put_u8(1);
                enc.put(code);
            }
        }
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(PseudonymItem::Issued(dec.get()?)),
            1 => Ok(PseudonymItem::Rejected(dec.get()?)),
            tag => Err(DecodeError::UnknownTag {
                what: "pseudonym item",
                tag,
            }),
        }
    }
}

/// One item per CSR, in request order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudonymResponse {
    pub items: Vec<PseudonymItem>,
}
canonical_struct!(PseudonymResponse { items });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrlRequest {
    pub since_sequence: Option<u64>,
}
canonical_struct!(CrlRequest { since_sequence });

/// Authenticated under the requester pseudonym's key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcspRequest {
    pub serial: SerialNumber,
    pub requester: Pseudonym,
}
canonical_struct!(OcspRequest { serial, requester });

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcspStatus {
    Good,
    Revoked,
    Unknown,
}

impl Canonical for OcspStatus {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put_u8(match self {
            OcspStatus::Good => 0,
            OcspStatus::Revoked => 1,
            OcspStatus::Unknown => 2,
        });
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(OcspStatus::Good),
            1 => Ok(OcspStatus::Revoked),
            2 => Ok(OcspStatus::Unknown),
            tag => Err(DecodeError::UnknownTag {
                what: "ocsp status",
                tag,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcspResponse {
    pub serial: SerialNumber,
    pub status: OcspStatus,
    pub produced_at: TimePoint,
}
canonical_struct!(OcspResponse {
    serial,
    status,
    produced_at
});

/// Operator to RA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolveRequest {
    pub pseudonym_issuer: CaId,
    pub pseudonym_serial: SerialNumber,
    pub justification: String,
    pub revoke_pseudonyms: bool,
    pub revoke_ltc: bool,
}
canonical_struct!(ResolveRequest {
    pseudonym_issuer,
    pseudonym_serial,
    justification,
    revoke_pseudonyms,
    revoke_ltc
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolveResponse {
    Resolved { subject_id: String, home: CaId },
    /// The home LTCA could not be reached; the pointer is all that is known.
    Partial { home: CaId, f_ticket_serial: SerialNumber },
}

impl Canonical for ResolveResponse {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            ResolveResponse::Resolved { subject_id, home } => {
                enc.put_u8(0);
                enc.put_str(subject_id);
                enc.put(home);
            }
            ResolveResponse::Partial {
                home,
                f_ticket_serial,
            } => {
                enc.put_u8(1);
                enc.put(home);
                enc.put(f_ticket_serial);
            }
        }
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(ResolveResponse::Resolved {
                subject_id: dec.string()?,
                home: dec.get()?,
            }),
            1 => Ok(ResolveResponse::Partial {
                home: dec.get()?,
                f_ticket_serial: dec.get()?,
            }),
            tag => Err(DecodeError::UnknownTag {
                what: "resolve response",
                tag,
            }),
        }
    }
}

/// RA to PCA. Authenticated under the RA key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapPseudonymRequest {
    pub ra: CaId,
    pub serial: SerialNumber,
    pub revoke: bool,
}
canonical_struct!(MapPseudonymRequest { ra, serial, revoke });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapPseudonymResponse {
    pub ticket_issuer: CaId,
    pub ticket_serial: SerialNumber,
    pub revoked: u64,
}
canonical_struct!(MapPseudonymResponse {
    ticket_issuer,
    ticket_serial,
    revoked
});

/// RA to LTCA. Authenticated under the RA key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolveTicketRequest {
    pub ra: CaId,
    pub ticket_serial: SerialNumber,
    pub revoke_ltc: bool,
}
canonical_struct!(ResolveTicketRequest {
    ra,
    ticket_serial,
    revoke_ltc
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TicketOwner {
    Subject(String),
    /// The ticket was exchanged for a foreign ticket issued by `home`.
    Foreign { home: CaId, f_ticket_serial: SerialNumber },
}

impl Canonical for TicketOwner {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            TicketOwner::Subject(s) => {
                enc.put_u8(0);
                enc.put_str(s);
            }
            TicketOwner::Foreign {
                home,
                f_ticket_serial,
            } => {
                enc.put_u8(1);
                enc.put(home);
                enc.put(f_ticket_serial);
            }
        }
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(TicketOwner::Subject(dec.string()?)),
            1 => Ok(TicketOwner::Foreign {
                home: dec.get()?,
                f_ticket_serial: dec.get()?,
            }),
            tag => Err(DecodeError::UnknownTag {
                what: "ticket owner",
                tag,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolveTicketResponse {
    pub owner: TicketOwner,
    pub ltc_revoked: bool,
}
canonical_struct!(ResolveTicketResponse { owner, ltc_revoked });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterRequest {
    pub csr: Csr,
    pub subject_id: String,
    pub validity: Interval,
}
canonical_struct!(RegisterRequest {
    csr,
    subject_id,
    validity
});

/// Authenticated under the old LTC key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateLtcRequest {
    pub old_ltc: LongTermCertificate,
    pub csr: Csr,
}
canonical_struct!(UpdateLtcRequest { old_ltc, csr });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LtcResponse {
    pub ltc: LongTermCertificate,
}
canonical_struct!(LtcResponse { ltc });

/// An authority as published by the directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectoryEntry {
    pub ca_id: CaId,
    pub role: Role,
    /// Canonical encoding of the authority's [`AuthorityCertificate`].
    pub certificate: Vec<u8>,
    pub domain: String,
    /// Authorities this one holds a security association with.
    pub associations: Vec<CaId>,
}

impl DirectoryEntry {
    pub fn from_certificate(cert: &AuthorityCertificate, associations: Vec<CaId>) -> Self {
        Self {
            ca_id: cert.ca_id.clone(),
            role: cert.role,
            certificate: cert.to_canonical_bytes(),
            domain: cert.domain.clone(),
            associations,
        }
    }

    pub fn certificate(&self) -> Result<AuthorityCertificate, DecodeError> {
        AuthorityCertificate::from_canonical_bytes(&self.certificate)
    }
}

impl Canonical for DirectoryEntry {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&self.ca_id);
        enc.put(&self.role);
        enc.put_bytes(&self.certificate);
        enc.put_str(&self.domain);
        enc.put_seq(&self.associations);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            ca_id: dec.get()?,
            role: dec.get()?,
            certificate: dec.bytes()?.to_vec(),
            domain: dec.string()?,
            associations: dec.seq()?,
        })
    }
}

/// A directory entry signed by the directory key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedDirectoryEntry {
    pub entry: DirectoryEntry,
    pub signature: Signature,
}
canonical_struct!(SignedDirectoryEntry { entry, signature });

impl SignedDirectoryEntry {
    pub fn sign(entry: DirectoryEntry, key: &PrivateKey) -> Self {
        let signature = crypto::sign(key, &entry.to_canonical_bytes());
        Self { entry, signature }
    }

    pub fn verify(&self, directory_key: &PublicKey) -> bool {
        crypto::verify(directory_key, &self.entry.to_canonical_bytes(), &self.signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DirectoryRequest {
    Lookup(CaId),
    ListByDomain { domain: String, role: Option<Role> },
}

impl Canonical for DirectoryRequest {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            DirectoryRequest::Lookup(id) => {
                enc.put_u8(0);
                enc.put(id);
            }
            DirectoryRequest::ListByDomain { domain, role } => {
                enc.put_u8(1);
                enc.put_str(domain);
                enc.put(role);
            }
        }
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(DirectoryRequest::Lookup(dec.get()?)),
            1 => Ok(DirectoryRequest::ListByDomain {
                domain: dec.string()?,
                role: dec.get()?,
            }),
            tag => Err(DecodeError::UnknownTag {
                what: "directory request",
                tag,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectoryResponse {
    pub entries: Vec<SignedDirectoryEntry>,
}
canonical_struct!(DirectoryResponse { entries });
