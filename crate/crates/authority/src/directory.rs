//! Read-only directory of authority certificates and associations, loaded
//! from a manifest signed by the directory key.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;
use vpki_core::encoding::{Decoder, Encoder};
use vpki_core::messages::{DirectoryEntry, DirectoryRequest, DirectoryResponse, ErrorCode, SignedDirectoryEntry};
use vpki_core::rpc::{Reject, Responder, Service};
use vpki_core::wire::{msg, FreshnessPolicy, NonceCache};
use vpki_core::{CaId, Canonical, Clock, DecodeError, KeyPair, PrivateKey, PublicKey, Role, TrustStore};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<SignedDirectoryEntry>,
}

impl Canonical for Manifest {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put_seq(&self.entries);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { entries: dec.seq()? })
    }
}

impl Manifest {
    /// One signed entry per certificate in `trust`.
    pub fn build(trust: &TrustStore, associations: &BTreeMap<CaId, Vec<CaId>>, key: &PrivateKey) -> Self {
        let entries = trust
            .certificates()
            .iter()
            .map(|cert| {
                let assoc = associations.get(&cert.ca_id).cloned().unwrap_or_default();
                SignedDirectoryEntry::sign(DirectoryEntry::from_certificate(cert, assoc), key)
            })
            .collect();
        Self { entries }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("entry for {0} is not signed by the directory key")]
    BadSignature(CaId),
    #[error("duplicate entry for {0}")]
    Duplicate(CaId),
    #[error("{entry} lists unknown association {missing}")]
    DanglingAssociation { entry: CaId, missing: CaId },
}

pub struct Directory {
    responder: Responder,
    clock: Arc<dyn Clock>,
    entries: BTreeMap<CaId, SignedDirectoryEntry>,
}

impl Directory {
    /// Verifies every manifest entry under the directory key before serving.
    pub fn load(manifest: Manifest, key: KeyPair, clock: Arc<dyn Clock>, skew: u64) -> Result<Self, ManifestError> {
        let mut entries = BTreeMap::new();
        for e in manifest.entries {
            if !e.verify(&key.public) {
                return Err(ManifestError::BadSignature(e.entry.ca_id));
            }
            let id = e.entry.ca_id.clone();
            if entries.insert(id.clone(), e).is_some() {
                return Err(ManifestError::Duplicate(id));
            }
        }
        for e in entries.values() {
            if let Some(missing) = e.entry.associations.iter().find(|a| !entries.contains_key(*a)) {
                return Err(ManifestError::DanglingAssociation {
                    entry: e.entry.ca_id.clone(),
                    missing: missing.clone(),
                });
            }
        }
        Ok(Self {
            responder: Responder::new(key.private, NonceCache::new(FreshnessPolicy::with_skew(skew))),
            clock,
            entries,
        })
    }

    pub fn public_key(&self) -> PublicKey {
        self.responder.public_key()
    }

    pub fn lookup(&self, id: &CaId) -> Result<SignedDirectoryEntry, Reject> {
        self.entries
            .get(id)
            .cloned()
            .ok_or_else(|| Reject::new(ErrorCode::NotFound, id.to_string()))
    }

    pub fn list_by_domain(&self, domain: &str, role: Option<Role>) -> Vec<SignedDirectoryEntry> {
        self.entries
            .values()
            .filter(|e| e.entry.domain == domain && role.is_none_or(|r| e.entry.role == r))
            .cloned()
            .collect()
    }
}

impl Service for Directory {
    fn handle(&self, request: &[u8]) -> Vec<u8> {
        let now = self.clock.now();
        let incoming = match self.responder.accept(request, now) {
            Ok(i) => i,
            Err(frame) => return frame,
        };
        let result = match incoming.env.msg_type {
            msg::DIR_REQ => incoming.body::<DirectoryRequest>().and_then(|req| {
                let entries = match req {
                    DirectoryRequest::Lookup(id) => vec![self.lookup(&id)?],
                    DirectoryRequest::ListByDomain { domain, role } => self.list_by_domain(&domain, role),
                };
                Ok(DirectoryResponse { entries }.to_canonical_bytes())
            }),
            other => Err(Reject::new(ErrorCode::Unsupported, format!("message type {other:#06x}"))),
        };
        self.responder.finish(&incoming, result, now)
    }
}
