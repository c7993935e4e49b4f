//! Pseudonym certification authority.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use vpki_core::encoding::{Decoder, Encoder};
use vpki_core::files::{FileError, Journal};
use vpki_core::messages::{
    CrlRequest, ErrorCode, MapPseudonymRequest, MapPseudonymResponse, OcspRequest, OcspResponse,
    OcspStatus, PseudonymItem, PseudonymRequest, PseudonymResponse,
};
use vpki_core::policy::LifetimeError;
use vpki_core::rpc::{Reject, Responder, Service};
use vpki_core::snapshot::{PcaSnapshot, PseudonymRow, TicketUsageRow};
use vpki_core::wire::{msg, FreshnessPolicy, NonceCache};
use vpki_core::{
    hash_bind, validate_chain, verify_pop, CaId, Canonical, Clock, Csr, DecodeError, DomainPolicy,
    Interval, KeyPair, Pseudonym, PublicKey, RevocationList, Rnd256, SerialNumber, Ticket,
    TimePoint, TrustStore, ValidationResult,
};

use crate::authz::require_ra;

const USAGE_SHARDS: usize = 64;
/// Serial numbers are `replica << REPLICA_SHIFT | counter`, so replicas
/// sharing an identity never collide.
pub const REPLICA_SHIFT: u32 = 48;

#[derive(Debug, Clone)]
pub struct PcaConfig {
    pub id: CaId,
    pub domain: String,
    pub policy: DomainPolicy,
    /// LTCAs whose tickets this PCA honours.
    pub associated_ltcas: Vec<CaId>,
    pub replica: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TicketUsage {
    pub interval: Interval,
    pub used_at: TimePoint,
    pub pseudonyms: Vec<SerialNumber>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub ticket_issuer: CaId,
    pub ticket_serial: SerialNumber,
    pub interval: Interval,
    pub public_key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Record {
    TicketUsed {
        issuer: CaId,
        serial: SerialNumber,
        interval: Interval,
        used_at: TimePoint,
    },
    Issued {
        serial: SerialNumber,
        entry: IndexEntry,
    },
    Revoked {
        issued_at: TimePoint,
        serials: Vec<SerialNumber>,
    },
}

impl Canonical for Record {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            Record::TicketUsed {
                issuer,
                serial,
                interval,
                used_at,
            } => {
                enc.put_u8(0);
                enc.put(issuer);
                enc.put(serial);
                enc.put(interval);
                enc.put_u64(*used_at);
            }
            Record::Issued { serial, entry } => {
                enc.put_u8(1);
                enc.put(serial);
                enc.put(&entry.ticket_issuer);
                enc.put(&entry.ticket_serial);
                enc.put(&entry.interval);
                enc.put(&entry.public_key);
            }
            Record::Revoked { issued_at, serials } => {
                enc.put_u8(2);
                enc.put_u64(*issued_at);
                enc.put_seq(serials);
            }
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => Record::TicketUsed {
                issuer: dec.get()?,
                serial: dec.get()?,
                interval: dec.get()?,
                used_at: dec.u64()?,
            },
            1 => Record::Issued {
                serial: dec.get()?,
                entry: IndexEntry {
                    ticket_issuer: dec.get()?,
                    ticket_serial: dec.get()?,
                    interval: dec.get()?,
                    public_key: dec.get()?,
                },
            },
            2 => Record::Revoked {
                issued_at: dec.u64()?,
                serials: dec.seq()?,
            },
            tag => return Err(DecodeError::UnknownTag { what: "pca record", tag }),
        })
    }
}

struct Revocation {
    revoked: BTreeSet<SerialNumber>,
    /// Serials added by each published sequence, indexed by sequence - 1.
    additions: Vec<Vec<SerialNumber>>,
    current: Arc<RevocationList>,
}

impl Revocation {
    fn sequence(&self) -> u64 {
        self.additions.len() as u64
    }
}

type UsageKey = (CaId, SerialNumber);

pub struct Pca {
    config: PcaConfig,
    key: KeyPair,
    trust: Arc<TrustStore>,
    clock: Arc<dyn Clock>,
    responder: Responder,
    usage: Vec<Mutex<HashMap<UsageKey, TicketUsage>>>,
    index: RwLock<HashMap<SerialNumber, IndexEntry>>,
    revocation: Mutex<Revocation>,
    next_serial: AtomicU64,
    journal: Option<Journal<Record>>,
}

impl Pca {
    pub fn new(config: PcaConfig, key: KeyPair, trust: Arc<TrustStore>, clock: Arc<dyn Clock>) -> Self {
        let nonces = NonceCache::new(FreshnessPolicy::with_skew(config.policy.clock_skew_seconds));
        let empty = RevocationList::issue(config.id.clone(), 0, clock.now(), None, Vec::new(), &key.private);
        Self {
            responder: Responder::new(key.private.clone(), nonces),
            next_serial: AtomicU64::new(((config.replica as u64) << REPLICA_SHIFT) | 1),
            config,
            key,
            trust,
            clock,
            usage: (0..USAGE_SHARDS).map(|_| Mutex::new(HashMap::new())).collect(),
            index: RwLock::new(HashMap::new()),
            revocation: Mutex::new(Revocation {
                revoked: BTreeSet::new(),
                additions: Vec::new(),
                current: Arc::new(empty),
            }),
            journal: None,
        }
    }

    pub fn open(
        config: PcaConfig,
        key: KeyPair,
        trust: Arc<TrustStore>,
        clock: Arc<dyn Clock>,
        state: &Path,
    ) -> Result<Self, FileError> {
        let (journal, records) = Journal::open(state)?;
        let mut pca = Self::new(config, key, trust, clock);
        for r in records {
            pca.apply(r);
        }
        pca.journal = Some(journal);
        Ok(pca)
    }

    fn apply(&self, record: Record) {
        match record {
            Record::TicketUsed {
                issuer,
                serial,
                interval,
                used_at,
            } => {
                self.shard(&issuer, serial).lock().insert(
                    (issuer, serial),
                    TicketUsage {
                        interval,
                        used_at,
                        pseudonyms: Vec::new(),
                    },
                );
            }
            Record::Issued { serial, entry } => {
                self.next_serial.fetch_max(serial.0 + 1, Ordering::SeqCst);
                if let Some(u) = self
                    .shard(&entry.ticket_issuer, entry.ticket_serial)
                    .lock()
                    .get_mut(&(entry.ticket_issuer.clone(), entry.ticket_serial))
                {
                    u.pseudonyms.push(serial);
                }
                self.index.write().insert(serial, entry);
            }
            Record::Revoked { issued_at, serials } => {
                let mut rev = self.revocation.lock();
                self.publish(&mut rev, serials, issued_at);
            }
        }
    }

    fn persist(&self, record: &Record) -> Result<(), Reject> {
        match &self.journal {
            Some(j) => j
                .append(record)
                .map_err(|e| Reject::new(ErrorCode::Internal, e.to_string())),
            None => Ok(()),
        }
    }

    fn shard(&self, issuer: &CaId, serial: SerialNumber) -> &Mutex<HashMap<UsageKey, TicketUsage>> {
        let mut h = DefaultHasher::new();
        issuer.hash(&mut h);
        serial.hash(&mut h);
        &self.usage[(h.finish() as usize) % USAGE_SHARDS]
    }

    pub fn id(&self) -> &CaId {
        &self.config.id
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.key.public
    }

    pub fn policy(&self) -> &DomainPolicy {
        &self.config.policy
    }

    /// Validates the ticket, burns it, checks every CSR's proof of
    /// possession and issues one grid-aligned pseudonym per valid CSR.
    pub fn issue_pseudonyms(
        &self,
        rnd: &Rnd256,
        requested: Interval,
        tkt: &Ticket,
        csrs: &[Csr],
    ) -> Result<Vec<PseudonymItem>, Reject> {
        let now = self.clock.now();
        let policy = &self.config.policy;
        if csrs.is_empty() || csrs.len() > policy.max_batch as usize {
            return Err(Reject::new(
                ErrorCode::BadRequest,
                format!("batch of {} outside 1..={}", csrs.len(), policy.max_batch),
            ));
        }
        if !self.config.associated_ltcas.contains(&tkt.issuer) {
            return Err(Reject::new(ErrorCode::TicketInvalid, format!("no association with {}", tkt.issuer)));
        }
        match validate_chain(tkt, &self.trust, now) {
            ValidationResult::Valid => {}
            other => return Err(Reject::new(ErrorCode::TicketInvalid, format!("ticket: {other:?}"))),
        }
        if hash_bind(&self.config.id, rnd) != tkt.target_digest {
            return Err(Reject::new(ErrorCode::TicketBindingMismatch, "ticket bound to another authority"));
        }
        if !tkt.interval.contains(&requested) {
            return Err(Reject::new(ErrorCode::IntervalViolation, "requested period outside ticket"));
        }
        let slots = policy.pseudonym_slots(&requested).map_err(|e| match e {
            LifetimeError::BeforeEpoch | LifetimeError::EmptyRequest => {
                Reject::new(ErrorCode::IntervalViolation, e.to_string())
            }
        })?;

        let key = (tkt.issuer.clone(), tkt.serial);
        {
            let mut shard = self.shard(&tkt.issuer, tkt.serial).lock();
            if shard.contains_key(&key) {
                return Err(Reject::new(ErrorCode::TicketReused, format!("ticket {} already used", tkt.serial.0)));
            }
            self.persist(&Record::TicketUsed {
                issuer: tkt.issuer.clone(),
                serial: tkt.serial,
                interval: tkt.interval,
                used_at: now,
            })?;
            shard.insert(
                key.clone(),
                TicketUsage {
                    interval: tkt.interval,
                    used_at: now,
                    pseudonyms: Vec::new(),
                },
            );
        }

        // The ticket stays burned whatever happens from here on.
        let pop_ok: Vec<bool> = csrs.iter().map(verify_pop).collect();
        let invalid = pop_ok.iter().filter(|ok| !**ok).count();
        if invalid >= policy.pop_failure_threshold as usize {
            return Err(Reject::new(
                ErrorCode::MaliciousRequester,
                format!("{invalid} invalid proofs of possession"),
            ));
        }

        let mut free = slots.into_iter();
        let mut items = Vec::with_capacity(csrs.len());
        let mut issued = Vec::new();
        for (csr, ok) in csrs.iter().zip(pop_ok) {
            if !ok {
                items.push(PseudonymItem::Rejected(ErrorCode::BadProofOfPossession));
                continue;
            }
            let Some(slot) = free.next() else {
                items.push(PseudonymItem::Rejected(ErrorCode::NoSlot));
                continue;
            };
            let serial = SerialNumber(self.next_serial.fetch_add(1, Ordering::SeqCst));
            let p = Pseudonym::issue(serial, csr.public_key.clone(), slot, self.config.id.clone(), &self.key.private);
            let entry = IndexEntry {
                ticket_issuer: tkt.issuer.clone(),
                ticket_serial: tkt.serial,
                interval: slot,
                public_key: csr.public_key.clone(),
            };
            self.persist(&Record::Issued { serial, entry: entry.clone() })?;
            issued.push((serial, entry));
            items.push(PseudonymItem::Issued(p));
        }

        if let Some(u) = self.shard(&tkt.issuer, tkt.serial).lock().get_mut(&key) {
            u.pseudonyms.extend(issued.iter().map(|(s, _)| *s));
        }
        self.index.write().extend(issued);
        Ok(items)
    }

    /// Revokes every pseudonym of the ticket still valid after `now`.
    /// Returns how many were newly revoked.
    pub fn revoke_for_ticket(&self, ticket_issuer: &CaId, ticket_serial: SerialNumber, now: TimePoint) -> Result<u64, Reject> {
        let serials = self
            .shard(ticket_issuer, ticket_serial)
            .lock()
            .get(&(ticket_issuer.clone(), ticket_serial))
            .map(|u| u.pseudonyms.clone())
            .ok_or_else(|| Reject::new(ErrorCode::UnknownTicket, format!("ticket {}", ticket_serial.0)))?;
        let live: Vec<SerialNumber> = {
            let index = self.index.read();
            serials
                .into_iter()
                .filter(|s| index.get(s).is_some_and(|e| e.interval.end() > now))
                .collect()
        };
        let mut rev = self.revocation.lock();
        let fresh: Vec<SerialNumber> = live.into_iter().filter(|s| !rev.revoked.contains(s)).collect();
        if fresh.is_empty() {
            return Ok(0);
        }
        self.persist(&Record::Revoked {
            issued_at: now,
            serials: fresh.clone(),
        })?;
        let n = fresh.len() as u64;
        self.publish(&mut rev, fresh, now);
        Ok(n)
    }

    fn publish(&self, rev: &mut Revocation, added: Vec<SerialNumber>, issued_at: TimePoint) {
        rev.revoked.extend(added.iter().copied());
        rev.additions.push(added);
        let crl = RevocationList::issue(
            self.config.id.clone(),
            rev.sequence(),
            issued_at,
            None,
            rev.revoked.iter().copied().collect(),
            &self.key.private,
        );
        rev.current = Arc::new(crl);
    }

    /// The full current CRL, or only what was added after `since_sequence`.
    /// An unknown sequence gets the full list.
    pub fn get_crl(&self, since_sequence: Option<u64>) -> RevocationList {
        let rev = self.revocation.lock();
        match since_sequence {
            Some(since) if since <= rev.sequence() => {
                let entries = rev.additions[since as usize..].iter().flatten().copied().collect();
                RevocationList::issue(
                    self.config.id.clone(),
                    rev.sequence(),
                    rev.current.issued_at,
                    Some(since),
                    entries,
                    &self.key.private,
                )
            }
            _ => (*rev.current).clone(),
        }
    }

    pub fn ocsp_status(&self, serial: SerialNumber) -> OcspStatus {
        if self.revocation.lock().revoked.contains(&serial) {
            OcspStatus::Revoked
        } else if self.index.read().contains_key(&serial) {
            OcspStatus::Good
        } else {
            OcspStatus::Unknown
        }
    }

    /// OCSP with the requester check: the querying pseudonym must be valid
    /// now, unrevoked, and have signed the request.
    pub fn ocsp_check(&self, serial: SerialNumber, requester: &Pseudonym, proof_ok: bool) -> Result<OcspResponse, Reject> {
        let now = self.clock.now();
        if validate_chain(requester, &self.trust, now) != ValidationResult::Valid {
            return Err(Reject::new(ErrorCode::Unauthorized, "requester pseudonym not currently valid"));
        }
        if requester.issuer == self.config.id && self.revocation.lock().revoked.contains(&requester.serial) {
            return Err(Reject::new(ErrorCode::Unauthorized, "requester pseudonym revoked"));
        }
        if !proof_ok {
            return Err(Reject::new(ErrorCode::Unauthorized, "request not signed by requester pseudonym"));
        }
        Ok(OcspResponse {
            serial,
            status: self.ocsp_status(serial),
            produced_at: now,
        })
    }

    pub fn map_pseudonym(&self, serial: SerialNumber) -> Result<IndexEntry, Reject> {
        self.index
            .read()
            .get(&serial)
            .cloned()
            .ok_or_else(|| Reject::new(ErrorCode::UnknownPseudonym, format!("serial {}", serial.0)))
    }

    pub fn ticket_usage(&self, issuer: &CaId, serial: SerialNumber) -> Option<TicketUsage> {
        self.shard(issuer, serial).lock().get(&(issuer.clone(), serial)).cloned()
    }

    pub fn pseudonym_count(&self) -> usize {
        self.index.read().len()
    }

    pub fn revoked(&self) -> BTreeSet<SerialNumber> {
        self.revocation.lock().revoked.clone()
    }

    pub fn snapshot(&self) -> PcaSnapshot {
        let mut tickets: Vec<TicketUsageRow> = self
            .usage
            .iter()
            .flat_map(|s| {
                s.lock()
                    .iter()
                    .map(|((issuer, serial), u)| TicketUsageRow {
                        ticket_issuer: issuer.to_string(),
                        ticket_serial: serial.0,
                        interval: u.interval.into(),
                        used_at: u.used_at,
                        pseudonyms: u.pseudonyms.iter().map(|s| s.0).collect(),
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        tickets.sort_by(|a, b| (&a.ticket_issuer, a.ticket_serial).cmp(&(&b.ticket_issuer, b.ticket_serial)));
        let mut pseudonyms: Vec<PseudonymRow> = self
            .index
            .read()
            .iter()
            .map(|(serial, e)| PseudonymRow {
                serial: serial.0,
                interval: e.interval.into(),
                ticket_issuer: e.ticket_issuer.to_string(),
                ticket_serial: e.ticket_serial.0,
            })
            .collect();
        pseudonyms.sort_by_key(|p| p.serial);
        let rev = self.revocation.lock();
        PcaSnapshot {
            ca_id: self.config.id.to_string(),
            domain: self.config.domain.clone(),
            tickets,
            pseudonyms,
            revoked: rev.revoked.iter().map(|s| s.0).collect(),
            crl_sequence: rev.sequence(),
        }
    }
}

impl Service for Pca {
    fn handle(&self, request: &[u8]) -> Vec<u8> {
        let now = self.clock.now();
        let incoming = match self.responder.accept(request, now) {
            Ok(i) => i,
            Err(frame) => return frame,
        };
        let result = match incoming.env.msg_type {
            msg::PSNYM_REQ => incoming.body::<PseudonymRequest>().and_then(|req| {
                let items = self.issue_pseudonyms(&req.rnd, req.requested, &req.ticket, &req.csrs)?;
                Ok(PseudonymResponse { items }.to_canonical_bytes())
            }),
            msg::CRL_REQ => incoming
                .body::<CrlRequest>()
                .map(|req| self.get_crl(req.since_sequence).to_canonical_bytes()),
            msg::OCSP_REQ => incoming.body::<OcspRequest>().and_then(|req| {
                let proof_ok = incoming.authenticated_by(&req.requester.public_key);
                Ok(self.ocsp_check(req.serial, &req.requester, proof_ok)?.to_canonical_bytes())
            }),
            msg::RESOLVE_MAP_REQ => incoming.body::<MapPseudonymRequest>().and_then(|req| {
                require_ra(&incoming, &self.trust, &req.ra)?;
                let entry = self.map_pseudonym(req.serial)?;
                let revoked = if req.revoke {
                    self.revoke_for_ticket(&entry.ticket_issuer, entry.ticket_serial, now)?
                } else {
                    0
                };
                Ok(MapPseudonymResponse {
                    ticket_issuer: entry.ticket_issuer,
                    ticket_serial: entry.ticket_serial,
                    revoked,
                }
                .to_canonical_bytes())
            }),
            other => Err(Reject::new(ErrorCode::Unsupported, format!("message type {other:#06x}"))),
        };
        self.responder.finish(&incoming, result, now)
    }
}
