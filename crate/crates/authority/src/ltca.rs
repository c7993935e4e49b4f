//! Long-term certificate authority: vehicle registry, LTC issuance and the
//! ticket ledger that keeps any vehicle from holding two tickets for the
//! same instant.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use vpki_core::encoding::{Decoder, Encoder};
use vpki_core::files::{FileError, Journal};
use vpki_core::messages::{
    ErrorCode, ForeignExchangeRequest, LtcResponse, RegisterRequest, ResolveTicketRequest,
    ResolveTicketResponse, TicketOwner, TicketRequest, TicketResponse, UpdateLtcRequest,
};
use vpki_core::rpc::{Reject, Responder, Service};
use vpki_core::snapshot::{ExchangeRow, LtcaSnapshot, TicketRow, VehicleRow};
use vpki_core::wire::{msg, FreshnessPolicy, NonceCache};
use vpki_core::{
    hash_bind, validate_chain, verify_pop, CaId, Canonical, Clock, Csr, DecodeError, Digest256,
    DomainPolicy, Interval, KeyPair, LongTermCertificate, PublicKey, SerialNumber, Ticket,
    TimePoint, TrustStore, ValidationResult,
};

use crate::authz::{reject_validation, require_ra};

const LEDGER_SHARDS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VehicleRecord {
    pub subject_id: String,
    pub current_ltc: LongTermCertificate,
    pub revoked: bool,
    pub ltc_history: Vec<LongTermCertificate>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TicketLedgerEntry {
    pub ticket_serial: SerialNumber,
    pub subject_id: String,
    pub interval: Interval,
    pub target_digest: Digest256,
    pub issued_at: TimePoint,
}

impl TicketLedgerEntry {
    /// Tickets may be presented until their interval ends.
    fn unexpired(&self, now: TimePoint) -> bool {
        now <= self.interval.end()
    }
}

/// A native ticket issued against a foreign one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangeRecord {
    pub ticket_serial: SerialNumber,
    pub interval: Interval,
    pub target_digest: Digest256,
    pub foreign_issuer: CaId,
    pub foreign_serial: SerialNumber,
    pub issued_at: TimePoint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Record {
    Registered(LongTermCertificate),
    Updated(LongTermCertificate),
    Revoked(String),
    Ticket(TicketLedgerEntry),
    Exchange(ExchangeRecord),
}

impl Canonical for Record {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            Record::Registered(ltc) => {
                enc.put_u8(0);
                enc.put(ltc);
            }
            Record::Updated(ltc) => {
                enc.put_u8(1);
                enc.put(ltc);
            }
            Record::Revoked(subject) => {
                enc.put_u8(2);
                enc.put_str(subject);
            }
            Record::Ticket(e) => {
                enc.put_u8(3);
                enc.put(&e.ticket_serial);
                enc.put_str(&e.subject_id);
                enc.put(&e.interval);
                enc.put(&e.target_digest);
                enc.put_u64(e.issued_at);
            }
            Record::Exchange(x) => {
                enc.put_u8(4);
                enc.put(&x.ticket_serial);
                enc.put(&x.interval);
                enc.put(&x.target_digest);
                enc.put(&x.foreign_issuer);
                enc.put(&x.foreign_serial);
                enc.put_u64(x.issued_at);
            }
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => Record::Registered(dec.get()?),
            1 => Record::Updated(dec.get()?),
            2 => Record::Revoked(dec.string()?),
            3 => Record::Ticket(TicketLedgerEntry {
                ticket_serial: dec.get()?,
                subject_id: dec.string()?,
                interval: dec.get()?,
                target_digest: dec.get()?,
                issued_at: dec.u64()?,
            }),
            4 => Record::Exchange(ExchangeRecord {
                ticket_serial: dec.get()?,
                interval: dec.get()?,
                target_digest: dec.get()?,
                foreign_issuer: dec.get()?,
                foreign_serial: dec.get()?,
                issued_at: dec.u64()?,
            }),
            tag => return Err(DecodeError::UnknownTag { what: "ltca record", tag }),
        })
    }
}

#[derive(Debug, Clone)]
pub struct LtcaConfig {
    pub id: CaId,
    pub domain: String,
    pub policy: DomainPolicy,
    /// When set, registration requests must be signed by this key.
    pub registrar: Option<PublicKey>,
}

#[derive(Default)]
struct Registry {
    vehicles: HashMap<String, VehicleRecord>,
}

enum Owner {
    Subject(String),
    Exchange(ExchangeRecord),
}

pub struct Ltca {
    config: LtcaConfig,
    key: KeyPair,
    trust: Arc<TrustStore>,
    clock: Arc<dyn Clock>,
    responder: Responder,
    registry: RwLock<Registry>,
    ledger: Vec<Mutex<HashMap<String, Vec<TicketLedgerEntry>>>>,
    owners: RwLock<HashMap<SerialNumber, Owner>>,
    exchanged: Mutex<HashSet<(CaId, SerialNumber)>>,
    next_ticket: AtomicU64,
    next_ltc: AtomicU64,
    journal: Option<Journal<Record>>,
}

impl Ltca {
    pub fn new(config: LtcaConfig, key: KeyPair, trust: Arc<TrustStore>, clock: Arc<dyn Clock>) -> Self {
        let nonces = NonceCache::new(FreshnessPolicy::with_skew(config.policy.clock_skew_seconds));
        Self {
            responder: Responder::new(key.private.clone(), nonces),
            config,
            key,
            trust,
            clock,
            registry: RwLock::new(Registry::default()),
            ledger: (0..LEDGER_SHARDS).map(|_| Mutex::new(HashMap::new())).collect(),
            owners: RwLock::new(HashMap::new()),
            exchanged: Mutex::new(HashSet::new()),
            next_ticket: AtomicU64::new(1),
            next_ltc: AtomicU64::new(1),
            journal: None,
        }
    }

    /// Like [`Ltca::new`], with state persisted to and restored from `state`.
    pub fn open(
        config: LtcaConfig,
        key: KeyPair,
        trust: Arc<TrustStore>,
        clock: Arc<dyn Clock>,
        state: &Path,
    ) -> Result<Self, FileError> {
        let (journal, records) = Journal::open(state)?;
        let mut ltca = Self::new(config, key, trust, clock);
        for r in records {
            ltca.apply(r);
        }
        ltca.journal = Some(journal);
        Ok(ltca)
    }

    fn apply(&self, record: Record) {
        match record {
            Record::Registered(ltc) => {
                self.bump_ltc(ltc.serial);
                self.registry.write().vehicles.insert(
                    ltc.subject_id.clone(),
                    VehicleRecord {
                        subject_id: ltc.subject_id.clone(),
                        current_ltc: ltc,
                        revoked: false,
                        ltc_history: Vec::new(),
                    },
                );
            }
            Record::Updated(ltc) => {
                self.bump_ltc(ltc.serial);
                if let Some(v) = self.registry.write().vehicles.get_mut(&ltc.subject_id) {
                    let old = std::mem::replace(&mut v.current_ltc, ltc);
                    v.ltc_history.push(old);
                }
            }
            Record::Revoked(subject) => {
                if let Some(v) = self.registry.write().vehicles.get_mut(&subject) {
                    v.revoked = true;
                }
            }
            Record::Ticket(entry) => {
                self.bump_ticket(entry.ticket_serial);
                self.owners
                    .write()
                    .insert(entry.ticket_serial, Owner::Subject(entry.subject_id.clone()));
                self.shard(&entry.subject_id)
                    .lock()
                    .entry(entry.subject_id.clone())
                    .or_default()
                    .push(entry);
            }
            Record::Exchange(x) => {
                self.bump_ticket(x.ticket_serial);
                self.exchanged
                    .lock()
                    .insert((x.foreign_issuer.clone(), x.foreign_serial));
                self.owners.write().insert(x.ticket_serial, Owner::Exchange(x));
            }
        }
    }

    fn bump_ltc(&self, serial: SerialNumber) {
        self.next_ltc.fetch_max(serial.0 + 1, Ordering::SeqCst);
    }

    fn bump_ticket(&self, serial: SerialNumber) {
        self.next_ticket.fetch_max(serial.0 + 1, Ordering::SeqCst);
    }

    fn persist(&self, record: &Record) -> Result<(), Reject> {
        match &self.journal {
            Some(j) => j
                .append(record)
                .map_err(|e| Reject::new(ErrorCode::Internal, e.to_string())),
            None => Ok(()),
        }
    }

    fn shard(&self, subject: &str) -> &Mutex<HashMap<String, Vec<TicketLedgerEntry>>> {
        let mut h = DefaultHasher::new();
        subject.hash(&mut h);
        &self.ledger[(h.finish() as usize) % LEDGER_SHARDS]
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

    pub fn register_vehicle(
        &self,
        csr: &Csr,
        subject_id: &str,
        validity: Interval,
    ) -> Result<LongTermCertificate, Reject> {
        if !verify_pop(csr) {
            return Err(Reject::new(ErrorCode::BadProofOfPossession, "csr self-signature"));
        }
        if subject_id.is_empty() {
            return Err(Reject::new(ErrorCode::BadRequest, "empty subject id"));
        }
        let mut reg = self.registry.write();
        if reg.vehicles.contains_key(subject_id) {
            return Err(Reject::new(ErrorCode::DuplicateSubject, subject_id));
        }
        let ltc = LongTermCertificate::issue(
            SerialNumber(self.next_ltc.fetch_add(1, Ordering::SeqCst)),
            subject_id.to_string(),
            csr.public_key.clone(),
            validity,
            self.config.id.clone(),
            &self.key.private,
        );
        self.persist(&Record::Registered(ltc.clone()))?;
        reg.vehicles.insert(
            subject_id.to_string(),
            VehicleRecord {
                subject_id: subject_id.to_string(),
                current_ltc: ltc.clone(),
                revoked: false,
                ltc_history: Vec::new(),
            },
        );
        Ok(ltc)
    }

    /// Issues a fresh LTC; the old one stays resolvable but can no longer
    /// obtain tickets.
    pub fn update_ltc(&self, old_ltc: &LongTermCertificate, csr: &Csr) -> Result<LongTermCertificate, Reject> {
        let now = self.clock.now();
        let mut reg = self.registry.write();
        let record = reg
            .vehicles
            .get_mut(&old_ltc.subject_id)
            .ok_or_else(|| Reject::new(ErrorCode::UnknownSubject, old_ltc.subject_id.clone()))?;
        if record.revoked || record.current_ltc != *old_ltc {
            return Err(Reject::new(ErrorCode::RevokedCredential, "ltc revoked or superseded"));
        }
        self.check_ltc(old_ltc, now)?;
        if !verify_pop(csr) {
            return Err(Reject::new(ErrorCode::BadProofOfPossession, "csr self-signature"));
        }
        let lifetime = old_ltc.validity.len();
        let validity = Interval::new(now, now.saturating_add(lifetime))
            .map_err(|_| Reject::new(ErrorCode::Internal, "ltc validity"))?;
        let ltc = LongTermCertificate::issue(
            SerialNumber(self.next_ltc.fetch_add(1, Ordering::SeqCst)),
            old_ltc.subject_id.clone(),
            csr.public_key.clone(),
            validity,
            self.config.id.clone(),
            &self.key.private,
        );
        self.persist(&Record::Updated(ltc.clone()))?;
        let old = std::mem::replace(&mut record.current_ltc, ltc.clone());
        record.ltc_history.push(old);
        Ok(ltc)
    }

    fn check_ltc(&self, ltc: &LongTermCertificate, now: TimePoint) -> Result<(), Reject> {
        if ltc.issuer != self.config.id {
            return Err(Reject::new(ErrorCode::UnknownIssuer, "ltc issued elsewhere"));
        }
        match validate_chain(ltc, &self.trust, now) {
            ValidationResult::Valid => Ok(()),
            other => Err(reject_validation(other, "ltc")),
        }
    }

    /// Issues a ticket for `requested` snapped outward to the Γ-grid, unless
    /// the holder of `ltc` already has an unexpired ticket overlapping it.
    ///
    /// Callers must have authenticated the requester under `ltc`'s key.
    pub fn issue_ticket(
        &self,
        digest: Digest256,
        requested: Interval,
        ltc: &LongTermCertificate,
    ) -> Result<Ticket, Reject> {
        let now = self.clock.now();
        self.check_ltc(ltc, now)?;
        {
            let reg = self.registry.read();
            let record = reg
                .vehicles
                .get(&ltc.subject_id)
                .ok_or_else(|| Reject::new(ErrorCode::UnknownSubject, ltc.subject_id.clone()))?;
            if record.revoked {
                return Err(Reject::new(ErrorCode::RevokedCredential, "ltc revoked"));
            }
            if record.current_ltc != *ltc {
                return Err(Reject::new(ErrorCode::RevokedCredential, "ltc superseded"));
            }
        }
        let interval = self
            .config
            .policy
            .ticket_interval(&requested)
            .ok_or_else(|| Reject::new(ErrorCode::IntervalViolation, "interval before grid epoch"))?;
        // Such a ticket would be expired on arrival.
        if interval.end() < now {
            return Err(Reject::new(ErrorCode::IntervalViolation, "period already over"));
        }

        let subject = &ltc.subject_id;
        let mut shard = self.shard(subject).lock();
        let entries = shard.entry(subject.clone()).or_default();
        if let Some(clash) = entries
            .iter()
            .find(|e| e.unexpired(now) && e.interval.overlaps(&interval))
        {
            return Err(Reject::new(
                ErrorCode::OverlappingTicket,
                format!("overlaps ticket {}", clash.ticket_serial.0),
            ));
        }
        let serial = SerialNumber(self.next_ticket.fetch_add(1, Ordering::SeqCst));
        let ticket = Ticket::issue(serial, digest, interval, interval.end(), self.config.id.clone(), &self.key.private);
        let entry = TicketLedgerEntry {
            ticket_serial: serial,
            subject_id: subject.clone(),
            interval,
            target_digest: digest,
            issued_at: now,
        };
        self.persist(&Record::Ticket(entry.clone()))?;
        entries.push(entry);
        self.owners.write().insert(serial, Owner::Subject(subject.clone()));
        Ok(ticket)
    }

    /// Opens a foreign ticket bound to this LTCA and issues a native ticket
    /// bound to `digest_pca` in its place.
    pub fn exchange_foreign_ticket(
        &self,
        f_tkt: &Ticket,
        rnd: &vpki_core::Rnd256,
        digest_pca: Digest256,
        requested: Interval,
    ) -> Result<Ticket, Reject> {
        let now = self.clock.now();
        if f_tkt.issuer == self.config.id {
            return Err(Reject::new(ErrorCode::UnknownIssuer, "not a foreign ticket"));
        }
        match validate_chain(f_tkt, &self.trust, now) {
            ValidationResult::Valid => {}
            other => return Err(reject_validation(other, "foreign ticket")),
        }
        if hash_bind(&self.config.id, rnd) != f_tkt.target_digest {
            return Err(Reject::new(ErrorCode::TicketBindingMismatch, "rnd does not open ticket digest"));
        }
        let interval = self
            .config
            .policy
            .ticket_interval(&requested)
            .filter(|iv| f_tkt.interval.contains(iv))
            .ok_or_else(|| Reject::new(ErrorCode::IntervalViolation, "outside foreign ticket interval"))?;
        if !self
            .exchanged
            .lock()
            .insert((f_tkt.issuer.clone(), f_tkt.serial))
        {
            return Err(Reject::new(ErrorCode::TicketReused, "foreign ticket already exchanged"));
        }
        let serial = SerialNumber(self.next_ticket.fetch_add(1, Ordering::SeqCst));
        let ticket = Ticket::issue(serial, digest_pca, interval, interval.end(), self.config.id.clone(), &self.key.private);
        let record = ExchangeRecord {
            ticket_serial: serial,
            interval,
            target_digest: digest_pca,
            foreign_issuer: f_tkt.issuer.clone(),
            foreign_serial: f_tkt.serial,
            issued_at: now,
        };
        self.persist(&Record::Exchange(record.clone()))?;
        self.owners.write().insert(serial, Owner::Exchange(record));
        Ok(ticket)
    }

    /// Who a ticket was issued to; for exchanged tickets, where to ask next.
    pub fn resolve_ticket(&self, serial: SerialNumber, revoke_ltc: bool) -> Result<ResolveTicketResponse, Reject> {
        let owner = match self.owners.read().get(&serial) {
            Some(Owner::Subject(s)) => TicketOwner::Subject(s.clone()),
            Some(Owner::Exchange(x)) => TicketOwner::Foreign {
                home: x.foreign_issuer.clone(),
                f_ticket_serial: x.foreign_serial,
            },
            None => return Err(Reject::new(ErrorCode::UnknownTicket, format!("serial {}", serial.0))),
        };
        let ltc_revoked = match (&owner, revoke_ltc) {
            (TicketOwner::Subject(s), true) => {
                self.revoke_ltc(s)?;
                true
            }
            _ => false,
        };
        Ok(ResolveTicketResponse { owner, ltc_revoked })
    }

    /// Marks a vehicle revoked. Idempotent.
    pub fn revoke_ltc(&self, subject_id: &str) -> Result<(), Reject> {
        let mut reg = self.registry.write();
        let record = reg
            .vehicles
            .get_mut(subject_id)
            .ok_or_else(|| Reject::new(ErrorCode::UnknownSubject, subject_id))?;
        if !record.revoked {
            self.persist(&Record::Revoked(subject_id.to_string()))?;
            record.revoked = true;
        }
        Ok(())
    }

    pub fn vehicle(&self, subject_id: &str) -> Option<VehicleRecord> {
        self.registry.read().vehicles.get(subject_id).cloned()
    }

    /// Every ledger entry, in serial order.
    pub fn ledger_entries(&self) -> Vec<TicketLedgerEntry> {
        let mut all: Vec<TicketLedgerEntry> = self
            .ledger
            .iter()
            .flat_map(|s| s.lock().values().flatten().cloned().collect::<Vec<_>>())
            .collect();
        all.sort_by_key(|e| e.ticket_serial);
        all
    }

    pub fn exchanges(&self) -> Vec<ExchangeRecord> {
        let mut all: Vec<ExchangeRecord> = self
            .owners
            .read()
            .values()
            .filter_map(|o| match o {
                Owner::Exchange(x) => Some(x.clone()),
                Owner::Subject(_) => None,
            })
            .collect();
        all.sort_by_key(|x| x.ticket_serial);
        all
    }

    pub fn snapshot(&self) -> LtcaSnapshot {
        let mut vehicles: Vec<VehicleRow> = self
            .registry
            .read()
            .vehicles
            .values()
            .map(|v| VehicleRow {
                subject_id: v.subject_id.clone(),
                ltc_serials: v
                    .ltc_history
                    .iter()
                    .chain(std::iter::once(&v.current_ltc))
                    .map(|l| l.serial.0)
                    .collect(),
                revoked: v.revoked,
            })
            .collect();
        vehicles.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        LtcaSnapshot {
            ca_id: self.config.id.to_string(),
            domain: self.config.domain.clone(),
            vehicles,
            tickets: self
                .ledger_entries()
                .into_iter()
                .map(|e| TicketRow {
                    serial: e.ticket_serial.0,
                    subject_id: e.subject_id,
                    interval: e.interval.into(),
                    target_digest: e.target_digest.to_hex(),
                    issued_at: e.issued_at,
                })
                .collect(),
            exchanges: self
                .exchanges()
                .into_iter()
                .map(|x| ExchangeRow {
                    serial: x.ticket_serial.0,
                    interval: x.interval.into(),
                    target_digest: x.target_digest.to_hex(),
                    foreign_issuer: x.foreign_issuer.to_string(),
                    foreign_serial: x.foreign_serial.0,
                    issued_at: x.issued_at,
                })
                .collect(),
        }
    }
}

impl Service for Ltca {
    fn handle(&self, request: &[u8]) -> Vec<u8> {
        let now = self.clock.now();
        let incoming = match self.responder.accept(request, now) {
            Ok(i) => i,
            Err(frame) => return frame,
        };
        let result = match incoming.env.msg_type {
            // Native and foreign-bound tickets share one code path; the
            // digest gives no hint which kind was asked for.
            msg::TICKET_REQ | msg::FTKT_REQ => incoming.body::<TicketRequest>().and_then(|req| {
                if !incoming.authenticated_by(&req.ltc.public_key) {
                    return Err(Reject::new(ErrorCode::BadSignature, "request not signed by ltc key"));
                }
                let ticket = self.issue_ticket(req.digest, req.requested, &req.ltc)?;
                Ok(TicketResponse { ticket }.to_canonical_bytes())
            }),
            msg::NTKT_REQ => incoming.body::<ForeignExchangeRequest>().and_then(|req| {
                let ticket = self.exchange_foreign_ticket(&req.f_ticket, &req.rnd, req.digest_pca, req.requested)?;
                Ok(TicketResponse { ticket }.to_canonical_bytes())
            }),
            msg::REG_REQ => incoming.body::<RegisterRequest>().and_then(|req| {
                if let Some(registrar) = &self.config.registrar {
                    if !incoming.authenticated_by(registrar) {
                        return Err(Reject::new(ErrorCode::Unauthorized, "registration requires the registrar key"));
                    }
                }
                let ltc = self.register_vehicle(&req.csr, &req.subject_id, req.validity)?;
                Ok(LtcResponse { ltc }.to_canonical_bytes())
            }),
            msg::REG_UPDATE_REQ => incoming.body::<UpdateLtcRequest>().and_then(|req| {
                if !incoming.authenticated_by(&req.old_ltc.public_key) {
                    return Err(Reject::new(ErrorCode::BadSignature, "request not signed by ltc key"));
                }
                let ltc = self.update_ltc(&req.old_ltc, &req.csr)?;
                Ok(LtcResponse { ltc }.to_canonical_bytes())
            }),
            msg::RESOLVE_TICKET_REQ => incoming.body::<ResolveTicketRequest>().and_then(|req| {
                require_ra(&incoming, &self.trust, &req.ra)?;
                Ok(self.resolve_ticket(req.ticket_serial, req.revoke_ltc)?.to_canonical_bytes())
            }),
            other => Err(Reject::new(ErrorCode::Unsupported, format!("message type {other:#06x}"))),
        };
        self.responder.finish(&incoming, result, now)
    }
}
