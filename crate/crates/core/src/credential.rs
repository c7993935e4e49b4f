//! Credential types, their validity semantics and chain validation.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::crypto::{self, Digest256, KeyPair, PrivateKey, PublicKey, Signature};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::time::TimePoint;

pub const MAX_CA_ID_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CredentialError {
    #[error("authority identifier must be 1..=64 bytes of utf-8")]
    BadCaId,
    #[error("interval start {start} is not before end {end}")]
    EmptyInterval { start: TimePoint, end: TimePoint },
}

/// Unique identifier of an authority within a deployment.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CaId(String);

impl CaId {
    pub fn new(id: impl Into<String>) -> Result<Self, CredentialError> {
        let id = id.into();
        if id.is_empty() || id.len() > MAX_CA_ID_LEN {
            return Err(CredentialError::BadCaId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for CaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CaId({})", self.0)
    }
}

impl fmt::Display for CaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for CaId {
    type Err = CredentialError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl Canonical for CaId {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put_str(&self.0);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Self::new(dec.string()?).map_err(|_| DecodeError::InvalidValue("authority identifier"))
    }
}

/// Per-issuer monotonically increasing serial number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SerialNumber(pub u64);

impl fmt::Display for SerialNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Canonical for SerialNumber {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put_u64(self.0);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.u64()?))
    }
}

/// A time span with `start < end`. Credential validity is read half-open,
/// `[start, end)`, so consecutive grid slots never share an instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interval {
    start: TimePoint,
    end: TimePoint,
}

impl Interval {
    pub fn new(start: TimePoint, end: TimePoint) -> Result<Self, CredentialError> {
        if start >= end {
            return Err(CredentialError::EmptyInterval { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> TimePoint {
        self.start
    }

    pub fn end(&self) -> TimePoint {
        self.end
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn contains_instant(&self, t: TimePoint) -> bool {
        self.start <= t && t < self.end
    }

    /// `other ⊆ self`.
    pub fn contains(&self, other: &Interval) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Widens the interval to the enclosing grid cells of width `step`
    /// anchored at `epoch`. `None` if the interval starts before the epoch.
    pub fn snap_outward(&self, step: u64, epoch: TimePoint) -> Option<Interval> {
        assert!(step > 0, "grid step must be positive");
        if self.start < epoch {
            return None;
        }
        let lo = (self.start - epoch) / step;
        let hi = (self.end - epoch).div_ceil(step);
        Some(Interval {
            start: epoch + lo * step,
            end: epoch + hi * step,
        })
    }

    pub fn is_aligned(&self, step: u64, epoch: TimePoint) -> bool {
        self.start >= epoch && (self.start - epoch) % step == 0 && (self.end - epoch) % step == 0
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

impl Canonical for Interval {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put_u64(self.start);
        enc.put_u64(self.end);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let start = dec.u64()?;
        let end = dec.u64()?;
        Interval::new(start, end).map_err(|_| DecodeError::InvalidValue("interval start >= end"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Rca,
    Ltca,
    Pca,
    Ra,
    Directory,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Rca => "RCA",
            Role::Ltca => "LTCA",
            Role::Pca => "PCA",
            Role::Ra => "RA",
            Role::Directory => "DIRECTORY",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RCA" => Ok(Role::Rca),
            "LTCA" => Ok(Role::Ltca),
            "PCA" => Ok(Role::Pca),
            "RA" => Ok(Role::Ra),
            "DIRECTORY" => Ok(Role::Directory),
            other => Err(format!("unknown role {other}")),
        }
    }
}

impl Canonical for Role {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put_u8(match self {
            Role::Rca => 0,
            Role::Ltca => 1,
            Role::Pca => 2,
            Role::Ra => 3,
            Role::Directory => 4,
        });
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(Role::Rca),
            1 => Ok(Role::Ltca),
            2 => Ok(Role::Pca),
            3 => Ok(Role::Ra),
            4 => Ok(Role::Directory),
            tag => Err(DecodeError::UnknownTag { what: "role", tag }),
        }
    }
}

/// Outcome of validating a signed credential against a trust store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationResult {
    Valid,
    Expired,
    NotYetValid,
    UnknownIssuer,
    BadSignature,
}

impl ValidationResult {
    pub fn is_valid(self) -> bool {
        self == ValidationResult::Valid
    }
}

/// A credential signed by an authority over its canonical to-be-signed bytes.
pub trait SignedCredential {
    /// Role the issuer must hold in the trust store.
    const ISSUER_ROLE: Role;

    fn encode_tbs(&self, enc: &mut Encoder);
    fn issuer(&self) -> &CaId;
    fn signature(&self) -> &Signature;
    fn time_status(&self, now: TimePoint) -> ValidationResult;

    fn tbs_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_tbs(&mut enc);
        enc.finish()
    }
}

/// Valid iff the issuer resolves in `trust` with the expected role, the
/// signature verifies, and `now` falls within the credential's validity.
pub fn validate_chain<C: SignedCredential>(
    cred: &C,
    trust: &TrustStore,
    now: TimePoint,
) -> ValidationResult {
    let Some(key) = trust.key_for(cred.issuer(), C::ISSUER_ROLE) else {
        return ValidationResult::UnknownIssuer;
    };
    if !crypto::verify(key, &cred.tbs_bytes(), cred.signature()) {
        return ValidationResult::BadSignature;
    }
    cred.time_status(now)
}

fn interval_status(validity: &Interval, now: TimePoint) -> ValidationResult {
    if now < validity.start() {
        ValidationResult::NotYetValid
    } else if now >= validity.end() {
        ValidationResult::Expired
    } else {
        ValidationResult::Valid
    }
}

macro_rules! signed_canonical {
    ($ty:ident { $($field:ident),* }) => {
        impl Canonical for $ty {
            fn encode_to(&self, enc: &mut Encoder) {
                self.encode_tbs(enc);
                enc.put(&self.signature);
            }
            fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
                Ok(Self {
                    $($field: dec.get()?,)*
                    signature: dec.get()?,
                })
            }
        }
    };
}

/// A vehicle's accountable identity credential.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LongTermCertificate {
    pub serial: SerialNumber,
    pub subject_id: String,
    pub public_key: PublicKey,
    pub validity: Interval,
    pub issuer: CaId,
    pub signature: Signature,
}

impl LongTermCertificate {
    pub fn issue(
        serial: SerialNumber,
        subject_id: String,
        public_key: PublicKey,
        validity: Interval,
        issuer: CaId,
        key: &PrivateKey,
    ) -> Self {
        let mut ltc = Self {
            serial,
            subject_id,
            public_key,
            validity,
            issuer,
            signature: Signature::from_bytes(Vec::new()),
        };
        ltc.signature = crypto::sign(key, &ltc.tbs_bytes());
        ltc
    }
}

impl SignedCredential for LongTermCertificate {
    const ISSUER_ROLE: Role = Role::Ltca;

    fn encode_tbs(&self, enc: &mut Encoder) {
        enc.put(&self.serial);
        enc.put_str(&self.subject_id);
        enc.put(&self.public_key);
        enc.put(&self.validity);
        enc.put(&self.issuer);
    }
    fn issuer(&self) -> &CaId {
        &self.issuer
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn time_status(&self, now: TimePoint) -> ValidationResult {
        interval_status(&self.validity, now)
    }
}

signed_canonical!(LongTermCertificate {
    serial,
    subject_id,
    public_key,
    validity,
    issuer
});

/// Anonymized authorization to obtain pseudonyms from one hidden authority.
///
/// Native and foreign tickets share this structure; only the issuer differs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ticket {
    pub serial: SerialNumber,
    pub target_digest: Digest256,
    pub interval: Interval,
    /// Latest instant at which the ticket may be presented.
    pub tkt_expiry: TimePoint,
    pub issuer: CaId,
    pub signature: Signature,
}

impl Ticket {
    pub fn issue(
        serial: SerialNumber,
        target_digest: Digest256,
        interval: Interval,
        tkt_expiry: TimePoint,
        issuer: CaId,
        key: &PrivateKey,
    ) -> Self {
        let mut tkt = Self {
            serial,
            target_digest,
            interval,
            tkt_expiry,
            issuer,
            signature: Signature::from_bytes(Vec::new()),
        };
        tkt.signature = crypto::sign(key, &tkt.tbs_bytes());
        tkt
    }
}

impl SignedCredential for Ticket {
    const ISSUER_ROLE: Role = Role::Ltca;

    fn encode_tbs(&self, enc: &mut Encoder) {
        enc.put(&self.serial);
        enc.put(&self.target_digest);
        enc.put(&self.interval);
        enc.put_u64(self.tkt_expiry);
        enc.put(&self.issuer);
    }
    fn issuer(&self) -> &CaId {
        &self.issuer
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    // A ticket may be presented ahead of the period it covers, so only the
    // presentation deadline applies.
    fn time_status(&self, now: TimePoint) -> ValidationResult {
        if now > self.tkt_expiry {
            ValidationResult::Expired
        } else {
            ValidationResult::Valid
        }
    }
}

impl Canonical for Ticket {
    fn encode_to(&self, enc: &mut Encoder) {
        self.encode_tbs(enc);
        enc.put(&self.signature);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let tkt = Self {
            serial: dec.get()?,
            target_digest: dec.get()?,
            interval: dec.get()?,
            tkt_expiry: dec.u64()?,
            issuer: dec.get()?,
            signature: dec.get()?,
        };
        if tkt.tkt_expiry < tkt.interval.end() {
            return Err(DecodeError::InvalidValue("ticket expires before its interval ends"));
        }
        Ok(tkt)
    }
}

/// Short-lived, identity-free certificate over a vehicle-generated key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pseudonym {
    pub serial: SerialNumber,
    pub public_key: PublicKey,
    pub interval: Interval,
    pub issuer: CaId,
    pub signature: Signature,
}

impl Pseudonym {
    pub fn issue(
        serial: SerialNumber,
        public_key: PublicKey,
        interval: Interval,
        issuer: CaId,
        key: &PrivateKey,
    ) -> Self {
        let mut p = Self {
            serial,
            public_key,
            interval,
            issuer,
            signature: Signature::from_bytes(Vec::new()),
        };
        p.signature = crypto::sign(key, &p.tbs_bytes());
        p
    }
}

impl SignedCredential for Pseudonym {
    const ISSUER_ROLE: Role = Role::Pca;

    fn encode_tbs(&self, enc: &mut Encoder) {
        enc.put(&self.serial);
        enc.put(&self.public_key);
        enc.put(&self.interval);
        enc.put(&self.issuer);
    }
    fn issuer(&self) -> &CaId {
        &self.issuer
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn time_status(&self, now: TimePoint) -> ValidationResult {
        interval_status(&self.interval, now)
    }
}

signed_canonical!(Pseudonym {
    serial,
    public_key,
    interval,
    issuer
});

/// Certificate signing request; the self-signature is the proof of possession.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    pub public_key: PublicKey,
    pub pop_signature: Signature,
}

impl Canonical for Csr {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&self.public_key);
        enc.put(&self.pop_signature);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            public_key: dec.get()?,
            pop_signature: dec.get()?,
        })
    }
}

pub fn make_csr(kp: &KeyPair) -> Csr {
    Csr {
        public_key: kp.public.clone(),
        pop_signature: crypto::sign(&kp.private, &kp.public.to_canonical_bytes()),
    }
}

pub fn verify_pop(csr: &Csr) -> bool {
    crypto::verify(
        &csr.public_key,
        &csr.public_key.to_canonical_bytes(),
        &csr.pop_signature,
    )
}

/// A signed list of revoked serials. When `delta_since` is set, `entries`
/// holds only serials revoked after that sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevocationList {
    pub issuer: CaId,
    pub sequence: u64,
    pub issued_at: TimePoint,
    pub delta_since: Option<u64>,
    pub entries: Vec<SerialNumber>,
    pub signature: Signature,
}

impl RevocationList {
    pub fn issue(
        issuer: CaId,
        sequence: u64,
        issued_at: TimePoint,
        delta_since: Option<u64>,
        mut entries: Vec<SerialNumber>,
        key: &PrivateKey,
    ) -> Self {
        entries.sort_unstable();
        entries.dedup();
        let mut crl = Self {
            issuer,
            sequence,
            issued_at,
            delta_since,
            entries,
            signature: Signature::from_bytes(Vec::new()),
        };
        crl.signature = crypto::sign(key, &crl.tbs_bytes());
        crl
    }

    pub fn verify(&self, issuer_key: &PublicKey) -> bool {
        crypto::verify(issuer_key, &self.tbs_bytes(), &self.signature)
    }

    pub fn is_delta(&self) -> bool {
        self.delta_since.is_some()
    }
}

impl SignedCredential for RevocationList {
    const ISSUER_ROLE: Role = Role::Pca;

    fn encode_tbs(&self, enc: &mut Encoder) {
        enc.put(&self.issuer);
        enc.put_u64(self.sequence);
        enc.put_u64(self.issued_at);
        enc.put(&self.delta_since);
        enc.put_seq(&self.entries);
    }
    fn issuer(&self) -> &CaId {
        &self.issuer
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn time_status(&self, _now: TimePoint) -> ValidationResult {
        ValidationResult::Valid
    }
}

impl Canonical for RevocationList {
    fn encode_to(&self, enc: &mut Encoder) {
        self.encode_tbs(enc);
        enc.put(&self.signature);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let crl = Self {
            issuer: dec.get()?,
            sequence: dec.u64()?,
            issued_at: dec.u64()?,
            delta_since: dec.get()?,
            entries: dec.seq()?,
            signature: dec.get()?,
        };
        if crl.entries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DecodeError::InvalidValue("revocation entries not strictly ascending"));
        }
        Ok(crl)
    }
}

/// Certificate of an authority, issued by its parent (roots sign themselves).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorityCertificate {
    pub ca_id: CaId,
    pub role: Role,
    pub domain: String,
    pub public_key: PublicKey,
    pub parent: CaId,
    pub validity: Interval,
    pub signature: Signature,
}

impl AuthorityCertificate {
    #[allow(clippy::too_many_arguments)]
    pub fn issue(
        ca_id: CaId,
        role: Role,
        domain: String,
        public_key: PublicKey,
        parent: CaId,
        validity: Interval,
        parent_key: &PrivateKey,
    ) -> Self {
        let mut cert = Self {
            ca_id,
            role,
            domain,
            public_key,
            parent,
            validity,
            signature: Signature::from_bytes(Vec::new()),
        };
        cert.signature = crypto::sign(parent_key, &cert.tbs_bytes());
        cert
    }

    pub fn is_root(&self) -> bool {
        self.role == Role::Rca && self.parent == self.ca_id
    }

    pub fn tbs_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_tbs(&mut enc);
        enc.finish()
    }

    fn encode_tbs(&self, enc: &mut Encoder) {
        enc.put(&self.ca_id);
        enc.put(&self.role);
        enc.put_str(&self.domain);
        enc.put(&self.public_key);
        enc.put(&self.parent);
        enc.put(&self.validity);
    }
}

signed_canonical!(AuthorityCertificate {
    ca_id,
    role,
    domain,
    public_key,
    parent,
    validity
});

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrustError {
    #[error("duplicate authority {0}")]
    Duplicate(CaId),
    #[error("parent {parent} of {child} is not in the trust store")]
    MissingParent { child: CaId, parent: CaId },
    #[error("certificate of {0} does not verify under its parent key")]
    BadSignature(CaId),
    #[error("chain of {0} does not terminate at a root authority")]
    NoRoot(CaId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustAnchor {
    pub public_key: PublicKey,
    pub role: Role,
    pub parent: Option<CaId>,
    pub domain: String,
}

/// Known authorities and their keys, each chained to a root.
///
/// Immutable; updates produce a new store.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustStore {
    anchors: BTreeMap<CaId, TrustAnchor>,
    certificates: Vec<AuthorityCertificate>,
}

impl TrustStore {
    pub fn from_certificates(certs: Vec<AuthorityCertificate>) -> Result<Self, TrustError> {
        let mut by_id: BTreeMap<CaId, &AuthorityCertificate> = BTreeMap::new();
        for cert in &certs {
            if by_id.insert(cert.ca_id.clone(), cert).is_some() {
                return Err(TrustError::Duplicate(cert.ca_id.clone()));
            }
        }
        for cert in &certs {
            let parent = by_id.get(&cert.parent).ok_or_else(|| TrustError::MissingParent {
                child: cert.ca_id.clone(),
                parent: cert.parent.clone(),
            })?;
            if !crypto::verify(&parent.public_key, &cert.tbs_bytes(), &cert.signature) {
                return Err(TrustError::BadSignature(cert.ca_id.clone()));
            }
            // Walk to a root; a chain longer than the store is a cycle.
            let mut cursor: &AuthorityCertificate = cert;
            let mut hops = 0;
            while !cursor.is_root() {
                cursor = by_id[&cursor.parent];
                hops += 1;
                if hops > certs.len() {
                    return Err(TrustError::NoRoot(cert.ca_id.clone()));
                }
            }
        }
        let anchors = certs
            .iter()
            .map(|c| {
                let anchor = TrustAnchor {
                    public_key: c.public_key.clone(),
                    role: c.role,
                    parent: (!c.is_root()).then(|| c.parent.clone()),
                    domain: c.domain.clone(),
                };
                (c.ca_id.clone(), anchor)
            })
            .collect();
        Ok(Self {
            anchors,
            certificates: certs,
        })
    }

    /// Returns a new store with `cert` added.
    pub fn with_certificate(&self, cert: AuthorityCertificate) -> Result<Self, TrustError> {
        let mut certs = self.certificates.clone();
        certs.push(cert);
        Self::from_certificates(certs)
    }

    pub fn get(&self, id: &CaId) -> Option<&TrustAnchor> {
        self.anchors.get(id)
    }

    /// Key of `id` if it is known and holds `role`.
    pub fn key_for(&self, id: &CaId, role: Role) -> Option<&PublicKey> {
        self.anchors
            .get(id)
            .filter(|a| a.role == role)
            .map(|a| &a.public_key)
    }

    pub fn certificates(&self) -> &[AuthorityCertificate] {
        &self.certificates
    }

    pub fn certificate(&self, id: &CaId) -> Option<&AuthorityCertificate> {
        self.certificates.iter().find(|c| &c.ca_id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CaId, &TrustAnchor)> {
        self.anchors.iter()
    }

    pub fn by_role(&self, role: Role) -> impl Iterator<Item = &CaId> {
        self.anchors
            .iter()
            .filter(move |(_, a)| a.role == role)
            .map(|(id, _)| id)
    }
}

impl Canonical for TrustStore {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put_seq(&self.certificates);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let certs: Vec<AuthorityCertificate> = dec.seq()?;
        Self::from_certificates(certs).map_err(|_| DecodeError::InvalidValue("trust store chain"))
    }
}
