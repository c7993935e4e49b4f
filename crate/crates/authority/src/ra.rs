//! Resolution authority: walks pseudonym → ticket → identity across the
//! PCA and LTCA(s) involved, optionally revoking on the way.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use vpki_core::encoding::{Decoder, Encoder};
use vpki_core::files::{FileError, Journal};
use vpki_core::messages::{
    ErrorCode, MapPseudonymRequest, MapPseudonymResponse, ResolveRequest, ResolveResponse,
    ResolveTicketRequest, ResolveTicketResponse, TicketOwner,
};
use vpki_core::rpc::{self, CallError, Reject, Responder, Service};
use vpki_core::wire::{msg, FreshnessPolicy, NonceCache, Transport};
use vpki_core::{CaId, Canonical, Clock, DecodeError, KeyPair, PublicKey, Role, SerialNumber, TimePoint, TrustStore};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditLogEntry {
    pub timestamp: TimePoint,
    pub request: ResolveRequest,
    pub steps: Vec<String>,
    pub outcome: String,
}

impl Canonical for AuditLogEntry {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put_u64(self.timestamp);
        enc.put(&self.request);
        enc.put_seq(&self.steps);
        enc.put_str(&self.outcome);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            timestamp: dec.u64()?,
            request: dec.get()?,
            steps: dec.seq()?,
            outcome: dec.string()?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RaConfig {
    pub id: CaId,
    pub clock_skew_seconds: u64,
    /// When set, resolution requests over the wire must be signed by it.
    pub operator: Option<PublicKey>,
}

pub struct Ra {
    config: RaConfig,
    key: KeyPair,
    trust: Arc<TrustStore>,
    clock: Arc<dyn Clock>,
    responder: Responder,
    /// One transport per replica of each authority.
    routes: RwLock<HashMap<CaId, Vec<Arc<dyn Transport>>>>,
    audit: Mutex<Vec<AuditLogEntry>>,
    journal: Option<Journal<AuditLogEntry>>,
}

enum Hop<T> {
    Done(T),
    Unreachable,
}

impl Ra {
    pub fn new(config: RaConfig, key: KeyPair, trust: Arc<TrustStore>, clock: Arc<dyn Clock>) -> Self {
        let nonces = NonceCache::new(FreshnessPolicy::with_skew(config.clock_skew_seconds));
        Self {
            responder: Responder::new(key.private.clone(), nonces),
            config,
            key,
            trust,
            clock,
            routes: RwLock::new(HashMap::new()),
            audit: Mutex::new(Vec::new()),
            journal: None,
        }
    }

    pub fn open(
        config: RaConfig,
        key: KeyPair,
        trust: Arc<TrustStore>,
        clock: Arc<dyn Clock>,
        state: &Path,
    ) -> Result<Self, FileError> {
        let (journal, records) = Journal::open(state)?;
        let mut ra = Self::new(config, key, trust, clock);
        *ra.audit.get_mut() = records;
        ra.journal = Some(journal);
        Ok(ra)
    }

    pub fn id(&self) -> &CaId {
        &self.config.id
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.key.public
    }

    /// Registers how to reach `authority`; several transports mean replicas.
    pub fn add_route(&self, authority: CaId, transports: Vec<Arc<dyn Transport>>) {
        self.routes.write().insert(authority, transports);
    }

    fn call<Req: Canonical, Res: Canonical>(
        &self,
        transport: &dyn Transport,
        server_key: &PublicKey,
        msg_type: u16,
        body: &Req,
    ) -> Result<Res, CallError> {
        let resp = rpc::call(
            transport,
            server_key,
            &*self.clock,
            self.config.clock_skew_seconds,
            msg_type,
            body.to_canonical_bytes(),
            Some(&self.key.private),
            rand::random(),
        )?;
        rpc::decode_body(&resp)
    }

    /// Asks each replica of `authority` in turn until one knows the answer.
    /// `miss` names the error meaning "not here, try the next replica".
    fn ask<Req: Canonical, Res: Canonical>(
        &self,
        authority: &CaId,
        role: Role,
        msg_type: u16,
        body: &Req,
        miss: ErrorCode,
    ) -> Result<Hop<Res>, Reject> {
        let key = self
            .trust
            .key_for(authority, role)
            .ok_or_else(|| Reject::new(ErrorCode::UnknownIssuer, format!("{authority} is not a known {role}")))?
            .clone();
        let transports = self.routes.read().get(authority).cloned().unwrap_or_default();
        let mut missed: Option<Reject> = None;
        for t in transports {
            match self.call::<Req, Res>(&*t, &key, msg_type, body) {
                Ok(res) => return Ok(Hop::Done(res)),
                Err(CallError::Service { code, detail }) if code == miss => {
                    missed = Some(Reject::new(code, detail));
                }
                Err(CallError::Service { code, detail }) => return Err(Reject::new(code, detail)),
                Err(e) => log::warn!("{authority} unreachable: {e}"),
            }
        }
        match missed {
            Some(r) => Err(r),
            None => Ok(Hop::Unreachable),
        }
    }

    fn resolve_ticket(
        &self,
        ltca: &CaId,
        serial: SerialNumber,
        revoke_ltc: bool,
        steps: &mut Vec<String>,
    ) -> Result<Hop<ResolveTicketResponse>, Reject> {
        let req = ResolveTicketRequest {
            ra: self.config.id.clone(),
            ticket_serial: serial,
            revoke_ltc,
        };
        let hop = self.ask::<_, ResolveTicketResponse>(ltca, Role::Ltca, msg::RESOLVE_TICKET_REQ, &req, ErrorCode::UnknownTicket);
        match &hop {
            Ok(Hop::Done(r)) => steps.push(format!("ticket {ltca}:{} -> {:?} (ltc revoked: {})", serial.0, r.owner, r.ltc_revoked)),
            Ok(Hop::Unreachable) => steps.push(format!("ticket {ltca}:{} -> unreachable", serial.0)),
            Err(e) => steps.push(format!("ticket {ltca}:{} -> {e}", serial.0)),
        }
        hop
    }

    /// Resolves a pseudonym to the subject that obtained it. Every attempt
    /// is appended to the audit log, successful or not.
    pub fn resolve(&self, req: &ResolveRequest) -> Result<ResolveResponse, Reject> {
        let mut steps = Vec::new();
        let result = self.resolve_steps(req, &mut steps);
        let outcome = match &result {
            Ok(ResolveResponse::Resolved { subject_id, home }) => format!("RESOLVED {subject_id}@{home}"),
            Ok(ResolveResponse::Partial { home, f_ticket_serial }) => {
                format!("PARTIAL {home}:{}", f_ticket_serial.0)
            }
            Err(e) => format!("FAILED {e}"),
        };
        let entry = AuditLogEntry {
            timestamp: self.clock.now(),
            request: req.clone(),
            steps,
            outcome,
        };
        let mut audit = self.audit.lock();
        if let Some(j) = &self.journal {
            j.append(&entry)
                .map_err(|e| Reject::new(ErrorCode::Internal, e.to_string()))?;
        }
        audit.push(entry);
        result
    }

    fn resolve_steps(&self, req: &ResolveRequest, steps: &mut Vec<String>) -> Result<ResolveResponse, Reject> {
        if req.justification.trim().is_empty() {
            return Err(Reject::new(ErrorCode::BadRequest, "justification required"));
        }
        let map = MapPseudonymRequest {
            ra: self.config.id.clone(),
            serial: req.pseudonym_serial,
            revoke: req.revoke_pseudonyms,
        };
        let pca = &req.pseudonym_issuer;
        let mapped = match self.ask::<_, MapPseudonymResponse>(pca, Role::Pca, msg::RESOLVE_MAP_REQ, &map, ErrorCode::UnknownPseudonym) {
            Ok(Hop::Done(m)) => m,
            Ok(Hop::Unreachable) => {
                steps.push(format!("pseudonym {pca}:{} -> unreachable", req.pseudonym_serial.0));
                return Err(Reject::new(ErrorCode::Internal, format!("{pca} unreachable")));
            }
            Err(e) => {
                steps.push(format!("pseudonym {pca}:{} -> {e}", req.pseudonym_serial.0));
                return Err(e);
            }
        };
        steps.push(format!(
            "pseudonym {pca}:{} -> ticket {}:{} ({} revoked)",
            req.pseudonym_serial.0, mapped.ticket_issuer, mapped.ticket_serial.0, mapped.revoked
        ));

        let ltca = &mapped.ticket_issuer;
        let first = match self.resolve_ticket(ltca, mapped.ticket_serial, req.revoke_ltc, steps)? {
            Hop::Done(r) => r,
            Hop::Unreachable => return Err(Reject::new(ErrorCode::Internal, format!("{ltca} unreachable"))),
        };
        match first.owner {
            TicketOwner::Subject(subject_id) => Ok(ResolveResponse::Resolved {
                subject_id,
                home: ltca.clone(),
            }),
            TicketOwner::Foreign { home, f_ticket_serial } => {
                match self.resolve_ticket(&home, f_ticket_serial, req.revoke_ltc, steps)? {
                    Hop::Done(ResolveTicketResponse {
                        owner: TicketOwner::Subject(subject_id),
                        ..
                    }) => Ok(ResolveResponse::Resolved { subject_id, home }),
                    Hop::Done(_) => Err(Reject::new(ErrorCode::Internal, "foreign pointer chain longer than one hop")),
                    Hop::Unreachable => Ok(ResolveResponse::Partial { home, f_ticket_serial }),
                }
            }
        }
    }

    /// Audit entries at or after `since`, oldest first.
    pub fn audit_log(&self, since: TimePoint) -> Vec<AuditLogEntry> {
        self.audit
            .lock()
            .iter()
            .filter(|e| e.timestamp >= since)
            .cloned()
            .collect()
    }
}

impl Service for Ra {
    fn handle(&self, request: &[u8]) -> Vec<u8> {
        let now = self.clock.now();
        let incoming = match self.responder.accept(request, now) {
            Ok(i) => i,
            Err(frame) => return frame,
        };
        let result = match incoming.env.msg_type {
            msg::RESOLVE_REQ => incoming.body::<ResolveRequest>().and_then(|req| {
                if let Some(op) = &self.config.operator {
                    if !incoming.authenticated_by(op) {
                        return Err(Reject::new(ErrorCode::Unauthorized, "request not signed by operator"));
                    }
                }
                Ok(self.resolve(&req)?.to_canonical_bytes())
            }),
            other => Err(Reject::new(ErrorCode::Unsupported, format!("message type {other:#06x}"))),
        };
        self.responder.finish(&incoming, result, now)
    }
}
