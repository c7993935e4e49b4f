//! On-board client. Holds the long-term credential, acquires tickets and
//! pseudonyms (natively or while roaming), schedules pseudonyms over time and
//! consumes revocation data.
//!
//! A `VehicleClient` is single-threaded; run one per vehicle.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use vpki_core::encoding::Canonical;
use vpki_core::messages::{
    CrlRequest, DirectoryEntry, DirectoryRequest, DirectoryResponse, ErrorCode, ForeignExchangeRequest, LtcResponse,
    OcspRequest, OcspResponse, OcspStatus, PseudonymItem, PseudonymRequest, PseudonymResponse, RegisterRequest,
    TicketRequest, TicketResponse,
};
use vpki_core::rpc::{self, CallError};
use vpki_core::wire::{msg, Transport};
use vpki_core::{
    hash_bind, make_csr, validate_chain, CaId, Clock, DomainPolicy, Interval, KeyPair, LongTermCertificate, PrivateKey,
    PublicKey, Pseudonym, RevocationList, Rnd256, Role, SerialNumber, Ticket, TimePoint, TrustStore,
};

/// Where an authority is reached and the policy of its domain.
#[derive(Clone)]
pub struct Route {
    pub transport: Arc<dyn Transport>,
    pub policy: DomainPolicy,
}

/// The vehicle's view of reachable authorities.
#[derive(Clone, Default)]
pub struct Network {
    routes: HashMap<CaId, Route>,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, id: CaId, transport: Arc<dyn Transport>, policy: DomainPolicy) {
        self.routes.insert(id, Route { transport, policy });
    }

    pub fn route(&self, id: &CaId) -> Option<&Route> {
        self.routes.get(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoamStage {
    ForeignTicket,
    Exchange,
    Pseudonyms,
}

impl fmt::Display for RoamStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoamStage::ForeignTicket => "foreign ticket",
            RoamStage::Exchange => "ticket exchange",
            RoamStage::Pseudonyms => "pseudonyms",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error(transparent)]
    Call(#[from] CallError),
    #[error("no route to {0}")]
    NoRoute(CaId),
    #[error("{0} is not a trusted {1}")]
    UnknownAuthority(CaId, Role),
    #[error("no usable ticket for {0}")]
    NoTicket(CaId),
    #[error("requested interval is outside the held ticket")]
    OutsideTicket,
    #[error("pseudonym {index} does not carry the key of its request")]
    MismatchedResponse { index: usize },
    #[error("no current pseudonym to authenticate with")]
    Unauthorized,
    #[error("roaming failed at {stage}: {source}")]
    Roam {
        stage: RoamStage,
        source: Box<ClientError>,
    },
}

impl ClientError {
    /// The server's error code, if the failure was a server rejection.
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Call(e) => e.code(),
            ClientError::Roam { source, .. } => source.code(),
            _ => None,
        }
    }

    pub fn is_response_invalid(&self) -> bool {
        match self {
            ClientError::Call(CallError::ResponseInvalid(_)) => true,
            ClientError::Roam { source, .. } => source.is_response_invalid(),
            _ => false,
        }
    }

    fn invalid(what: &'static str) -> Self {
        ClientError::Call(CallError::ResponseInvalid(what))
    }

    fn roam(stage: RoamStage) -> impl FnOnce(ClientError) -> ClientError {
        move |e| ClientError::Roam {
            stage,
            source: Box::new(e),
        }
    }
}

/// A ticket together with the value that opens its digest.
#[derive(Debug, Clone)]
pub struct HeldTicket {
    pub ticket: Ticket,
    pub rnd: Rnd256,
    pub target: CaId,
}

#[derive(Debug, Clone, Default)]
struct CrlCache {
    sequence: u64,
    revoked: BTreeSet<SerialNumber>,
}

pub struct VehicleClient {
    key: KeyPair,
    ltc: LongTermCertificate,
    home: CaId,
    trust: TrustStore,
    network: Network,
    clock: Arc<dyn Clock>,
    rng: ChaCha20Rng,
    ticket: Option<HeldTicket>,
    f_ticket: Option<HeldTicket>,
    pool: BTreeMap<TimePoint, (KeyPair, Pseudonym)>,
    crls: HashMap<CaId, CrlCache>,
    issued: Vec<Pseudonym>,
    spare_keys: Vec<KeyPair>,
}

impl VehicleClient {
    pub fn new(
        key: KeyPair,
        ltc: LongTermCertificate,
        trust: TrustStore,
        network: Network,
        clock: Arc<dyn Clock>,
        rng: ChaCha20Rng,
    ) -> Self {
        Self {
            home: ltc.issuer.clone(),
            key,
            ltc,
            trust,
            network,
            clock,
            rng,
            ticket: None,
            f_ticket: None,
            pool: BTreeMap::new(),
            crls: HashMap::new(),
            issued: Vec::new(),
            spare_keys: Vec::new(),
        }
    }

    pub fn home(&self) -> &CaId {
        &self.home
    }

    pub fn ltc(&self) -> &LongTermCertificate {
        &self.ltc
    }

    pub fn trust(&self) -> &TrustStore {
        &self.trust
    }

    pub fn ticket(&self) -> Option<&HeldTicket> {
        self.ticket.as_ref()
    }

    pub fn foreign_ticket(&self) -> Option<&HeldTicket> {
        self.f_ticket.as_ref()
    }

    /// Generates key pairs ahead of time until `n` are in stock; later
    /// requests draw on them before generating more.
    pub fn pregenerate(&mut self, n: usize) {
        let rng = &mut self.rng;
        let missing = n.saturating_sub(self.spare_keys.len());
        self.spare_keys.extend((0..missing).map(|_| KeyPair::generate(rng)));
    }

    pub fn spare_keys(&self) -> usize {
        self.spare_keys.len()
    }

    fn take_keys(&mut self, n: usize) -> Vec<KeyPair> {
        let from_spare = n.min(self.spare_keys.len());
        let mut keys = self.spare_keys.split_off(self.spare_keys.len() - from_spare);
        keys.extend((from_spare..n).map(|_| KeyPair::generate(&mut self.rng)));
        keys
    }

    fn route(&self, id: &CaId) -> Result<&Route, ClientError> {
        self.network.route(id).ok_or_else(|| ClientError::NoRoute(id.clone()))
    }

    fn policy(&self, id: &CaId) -> Result<DomainPolicy, ClientError> {
        Ok(self.route(id)?.policy)
    }

    fn now(&self) -> TimePoint {
        self.clock.now()
    }

    fn call<T: Canonical>(
        &mut self,
        dest: &CaId,
        role: Role,
        request_type: u16,
        body: Vec<u8>,
        signer: Option<&PrivateKey>,
    ) -> Result<T, ClientError> {
        let nonce = self.rng.gen();
        let route = self.route(dest)?;
        let key = self
            .trust
            .key_for(dest, role)
            .ok_or_else(|| ClientError::UnknownAuthority(dest.clone(), role))?;
        let body = rpc::call(
            route.transport.as_ref(),
            key,
            self.clock.as_ref(),
            route.policy.clock_skew_seconds,
            request_type,
            body,
            signer,
            nonce,
        )?;
        Ok(rpc::decode_body(&body)?)
    }

    /// Grid period of `policy` covering `interval`.
    fn period(policy: &DomainPolicy, interval: &Interval) -> Result<Interval, ClientError> {
        policy.ticket_interval(interval).ok_or(ClientError::OutsideTicket)
    }

    fn check_ticket(
        &self,
        ticket: &Ticket,
        issuer: &CaId,
        digest: &vpki_core::Digest256,
        requested: &Interval,
    ) -> Result<(), ClientError> {
        if !validate_chain(ticket, &self.trust, self.now()).is_valid() {
            return Err(ClientError::invalid("ticket does not validate"));
        }
        if &ticket.issuer != issuer {
            return Err(ClientError::invalid("ticket from unexpected issuer"));
        }
        if &ticket.target_digest != digest {
            return Err(ClientError::invalid("ticket digest differs from request"));
        }
        if !ticket.interval.contains(requested) {
            return Err(ClientError::invalid("ticket does not cover requested interval"));
        }
        Ok(())
    }

    /// Asks the home LTCA for a ticket bound to `target`. Only the grid
    /// period covering `interval` is sent, never `interval` itself.
    fn request_ticket(&mut self, request_type: u16, target: &CaId, interval: Interval) -> Result<HeldTicket, ClientError> {
        let home = self.home.clone();
        let period = Self::period(&self.policy(&home)?, &interval)?;
        let rnd = Rnd256(self.rng.gen());
        let digest = hash_bind(target, &rnd);
        let body = TicketRequest {
            digest,
            requested: period,
            ltc: self.ltc.clone(),
        }
        .to_canonical_bytes();
        let signer = self.key.private.clone();
        let resp: TicketResponse = self.call(&home, Role::Ltca, request_type, body, Some(&signer))?;
        self.check_ticket(&resp.ticket, &home, &digest, &period)?;
        Ok(HeldTicket {
            ticket: resp.ticket,
            rnd,
            target: target.clone(),
        })
    }

    /// Ticket from the home LTCA for pseudonyms from `target` over
    /// `interval`. Sent at most once; a failed request is not retried.
    pub fn acquire_ticket(&mut self, target: &CaId, interval: Interval) -> Result<(Ticket, Rnd256), ClientError> {
        let held = self.request_ticket(msg::TICKET_REQ, target, interval)?;
        let out = (held.ticket.clone(), held.rnd);
        self.ticket = Some(held);
        Ok(out)
    }

    /// Redeems the held ticket at `pca` for `n` pseudonyms over
    /// `sub_interval`. Returns how many were issued and pooled.
    pub fn acquire_pseudonyms(&mut self, pca: &CaId, sub_interval: Interval, n: usize) -> Result<usize, ClientError> {
        let held = self.ticket.clone().ok_or_else(|| ClientError::NoTicket(pca.clone()))?;
        if hash_bind(pca, &held.rnd) != held.ticket.target_digest {
            return Err(ClientError::NoTicket(pca.clone()));
        }
        if !held.ticket.interval.contains(&sub_interval) {
            return Err(ClientError::OutsideTicket);
        }
        self.present_ticket(pca, sub_interval, &held, n)
    }

    /// Sends `held` to `pca` regardless of local bookkeeping. The retained
    /// ticket is dropped once the PCA has accepted or burned it.
    pub fn present_ticket(
        &mut self,
        pca: &CaId,
        sub_interval: Interval,
        held: &HeldTicket,
        n: usize,
    ) -> Result<usize, ClientError> {
        let grid = self.policy(pca)?;
        // Keys exist before the request goes out.
        let keys = self.take_keys(n);
        let body = PseudonymRequest {
            rnd: held.rnd,
            requested: sub_interval,
            ticket: held.ticket.clone(),
            csrs: keys.iter().map(make_csr).collect(),
        }
        .to_canonical_bytes();
        let resp = match self.call::<PseudonymResponse>(pca, Role::Pca, msg::PSNYM_REQ, body, None) {
            Ok(r) => r,
            Err(e) => {
                if matches!(e.code(), Some(ErrorCode::TicketReused | ErrorCode::MaliciousRequester)) {
                    self.drop_ticket(&held.ticket);
                }
                return Err(e);
            }
        };
        self.drop_ticket(&held.ticket);

        if resp.items.len() != n {
            return Err(ClientError::invalid("item count differs from request"));
        }
        let closure = sub_interval
            .snap_outward(grid.pseudonym_lifetime_seconds, grid.grid_epoch)
            .ok_or_else(|| ClientError::invalid("sub-interval off grid"))?;
        let mut fresh = Vec::new();
        for (index, (item, kp)) in resp.items.into_iter().zip(keys).enumerate() {
            let PseudonymItem::Issued(p) = item else { continue };
            if p.public_key != kp.public {
                return Err(ClientError::MismatchedResponse { index });
            }
            if &p.issuer != pca || !validate_chain(&p, &self.trust, p.interval.start()).is_valid() {
                return Err(ClientError::invalid("pseudonym does not validate"));
            }
            if !closure.contains(&p.interval) {
                return Err(ClientError::invalid("pseudonym outside requested interval"));
            }
            fresh.push((kp, p));
        }
        for (i, (_, p)) in fresh.iter().enumerate() {
            let clash = self.pool.values().any(|(_, q)| q.interval.overlaps(&p.interval))
                || fresh[..i].iter().any(|(_, q)| q.interval.overlaps(&p.interval));
            if clash {
                return Err(ClientError::invalid("pseudonym overlaps a pooled lifetime"));
            }
        }
        let count = fresh.len();
        for (kp, p) in fresh {
            self.issued.push(p.clone());
            self.pool.insert(p.interval.start(), (kp, p));
        }
        Ok(count)
    }

    fn drop_ticket(&mut self, ticket: &Ticket) {
        if self.ticket.as_ref().is_some_and(|h| &h.ticket == ticket) {
            self.ticket = None;
        }
    }

    /// Ticket for `pca` if none is held for it, then `n` pseudonyms.
    pub fn obtain_pseudonyms(&mut self, pca: &CaId, sub_interval: Interval, n: usize) -> Result<usize, ClientError> {
        let usable = self.ticket.as_ref().is_some_and(|h| {
            &h.target == pca && h.ticket.interval.contains(&sub_interval) && h.ticket.tkt_expiry >= self.now()
        });
        if !usable {
            self.acquire_ticket(pca, sub_interval)?;
        }
        self.acquire_pseudonyms(pca, sub_interval, n)
    }

    /// Stage one of roaming: a ticket from the home LTCA whose digest binds
    /// the foreign LTCA.
    pub fn roam_foreign_ticket(&mut self, foreign_ltca: &CaId, sub_interval: Interval) -> Result<(), ClientError> {
        // Cover the foreign grid period so the exchange can fit inside.
        let foreign = Self::period(&self.policy(foreign_ltca)?, &sub_interval)?;
        let held = self.request_ticket(msg::FTKT_REQ, foreign_ltca, foreign)?;
        self.f_ticket = Some(held);
        Ok(())
    }

    /// Stage two: trades the f-ticket at the foreign LTCA for a ticket bound
    /// to `foreign_pca`, which becomes the held ticket.
    pub fn roam_exchange(&mut self, foreign_pca: &CaId, sub_interval: Interval) -> Result<(), ClientError> {
        let rnd = self
            .f_ticket
            .as_ref()
            .map(|h| h.rnd)
            .ok_or_else(|| ClientError::NoTicket(foreign_pca.clone()))?;
        self.roam_exchange_opening(foreign_pca, sub_interval, rnd)
    }

    /// Stage two with an explicit opening value for the f-ticket digest.
    pub fn roam_exchange_opening(
        &mut self,
        foreign_pca: &CaId,
        sub_interval: Interval,
        opening: Rnd256,
    ) -> Result<(), ClientError> {
        let f = self.f_ticket.clone().ok_or_else(|| ClientError::NoTicket(foreign_pca.clone()))?;
        let requested = Self::period(&self.policy(&f.target)?, &sub_interval)?;
        let rnd = Rnd256(self.rng.gen());
        let digest = hash_bind(foreign_pca, &rnd);
        let body = ForeignExchangeRequest {
            f_ticket: f.ticket.clone(),
            rnd: opening,
            digest_pca: digest,
            requested,
        }
        .to_canonical_bytes();
        let resp = match self.call::<TicketResponse>(&f.target, Role::Ltca, msg::NTKT_REQ, body, None) {
            Ok(r) => r,
            Err(e) => {
                // A rejected f-ticket is burned; an undelivered one can be retried.
                if matches!(e, ClientError::Call(CallError::Service { .. })) {
                    self.f_ticket = None;
                }
                return Err(e);
            }
        };
        self.f_ticket = None;
        self.check_ticket(&resp.ticket, &f.target, &digest, &requested)?;
        self.ticket = Some(HeldTicket {
            ticket: resp.ticket,
            rnd,
            target: foreign_pca.clone(),
        });
        Ok(())
    }

    /// Pseudonyms from a foreign domain's PCA. Resumes after the last
    /// completed stage, so a failed attempt can be repeated.
    pub fn roam(
        &mut self,
        foreign_ltca: &CaId,
        foreign_pca: &CaId,
        sub_interval: Interval,
        n: usize,
    ) -> Result<usize, ClientError> {
        let has_exchanged = self
            .ticket
            .as_ref()
            .is_some_and(|h| &h.target == foreign_pca && h.ticket.interval.contains(&sub_interval));
        if !has_exchanged {
            let has_foreign = self
                .f_ticket
                .as_ref()
                .is_some_and(|h| &h.target == foreign_ltca && h.ticket.interval.contains(&sub_interval));
            if !has_foreign {
                self.roam_foreign_ticket(foreign_ltca, sub_interval)
                    .map_err(ClientError::roam(RoamStage::ForeignTicket))?;
            }
            self.roam_exchange(foreign_pca, sub_interval)
                .map_err(ClientError::roam(RoamStage::Exchange))?;
        }
        self.acquire_pseudonyms(foreign_pca, sub_interval, n)
            .map_err(ClientError::roam(RoamStage::Pseudonyms))
    }

    /// The pooled pseudonym whose lifetime contains `now`.
    pub fn current_pseudonym(&self, now: TimePoint) -> Option<(&KeyPair, &Pseudonym)> {
        self.pool
            .range(..=now)
            .next_back()
            .map(|(_, (kp, p))| (kp, p))
            .filter(|(_, p)| p.interval.contains_instant(now))
    }

    pub fn pool(&self) -> impl Iterator<Item = &Pseudonym> {
        self.pool.values().map(|(_, p)| p)
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    /// Discards pseudonyms whose lifetime has ended.
    pub fn prune(&mut self, now: TimePoint) {
        self.pool.retain(|_, (_, p)| p.interval.end() > now);
    }

    /// Pseudonyms issued since the last call, in issue order.
    pub fn take_issued(&mut self) -> Vec<Pseudonym> {
        std::mem::take(&mut self.issued)
    }

    /// Fetches `pca`'s CRL, as a delta when one is cached. Retried once if
    /// the fetch fails in transit. Returns the number of cached serials.
    pub fn refresh_crl(&mut self, pca: &CaId) -> Result<usize, ClientError> {
        let since = self.crls.get(pca).map(|c| c.sequence);
        let body = CrlRequest { since_sequence: since }.to_canonical_bytes();
        let crl = match self.call::<RevocationList>(pca, Role::Pca, msg::CRL_REQ, body.clone(), None) {
            Err(ClientError::Call(CallError::Transport(_))) => {
                self.call::<RevocationList>(pca, Role::Pca, msg::CRL_REQ, body, None)?
            }
            other => other?,
        };
        let key = self
            .trust
            .key_for(pca, Role::Pca)
            .ok_or_else(|| ClientError::UnknownAuthority(pca.clone(), Role::Pca))?;
        if &crl.issuer != pca || !crl.verify(key) {
            return Err(ClientError::invalid("crl does not verify"));
        }
        let cache = self.crls.entry(pca.clone()).or_default();
        match crl.delta_since {
            Some(base) if Some(base) != since => return Err(ClientError::invalid("delta against unknown base")),
            Some(_) => cache.revoked.extend(crl.entries.iter().copied()),
            None => cache.revoked = crl.entries.iter().copied().collect(),
        }
        cache.sequence = crl.sequence;
        Ok(cache.revoked.len())
    }

    /// Whether `serial` appears in the cached CRL of `pca`.
    pub fn is_revoked_cached(&self, pca: &CaId, serial: SerialNumber) -> bool {
        self.crls.get(pca).is_some_and(|c| c.revoked.contains(&serial))
    }

    /// Online status query, authenticated with the current pseudonym.
    pub fn check_status(&mut self, pca: &CaId, serial: SerialNumber) -> Result<OcspStatus, ClientError> {
        let now = self.now();
        let (kp, requester) = self
            .current_pseudonym(now)
            .map(|(k, p)| (k.private.clone(), p.clone()))
            .ok_or(ClientError::Unauthorized)?;
        let body = OcspRequest { serial, requester }.to_canonical_bytes();
        let resp: OcspResponse = self.call(pca, Role::Pca, msg::OCSP_REQ, body, Some(&kp))?;
        if resp.serial != serial {
            return Err(ClientError::invalid("status for another serial"));
        }
        Ok(resp.status)
    }

    /// Lists `domain`'s authorities from a directory and adds their
    /// certificates to the trust store. Entries must carry the directory's
    /// signature and chain to a trusted root.
    pub fn discover(&mut self, directory: &CaId, domain: &str) -> Result<Vec<DirectoryEntry>, ClientError> {
        let body = DirectoryRequest::ListByDomain {
            domain: domain.to_string(),
            role: None,
        }
        .to_canonical_bytes();
        let resp: DirectoryResponse = self.call(directory, Role::Directory, msg::DIR_REQ, body, None)?;
        let key = self
            .trust
            .key_for(directory, Role::Directory)
            .ok_or_else(|| ClientError::UnknownAuthority(directory.clone(), Role::Directory))?;
        let mut trust = self.trust.clone();
        let mut entries = Vec::new();
        for signed in resp.entries {
            if !signed.verify(key) {
                return Err(ClientError::invalid("directory entry signature"));
            }
            let cert = signed
                .entry
                .certificate()
                .map_err(|_| ClientError::invalid("directory entry certificate"))?;
            match trust.certificate(&cert.ca_id) {
                Some(known) if *known == cert => {}
                Some(_) => return Err(ClientError::invalid("directory certificate conflicts with trust store")),
                None => {
                    trust = trust
                        .with_certificate(cert)
                        .map_err(|_| ClientError::invalid("directory certificate does not chain"))?;
                }
            }
            entries.push(signed.entry);
        }
        self.trust = trust;
        Ok(entries)
    }
}

/// Registers `key` under `subject_id` at an LTCA and returns the issued LTC.
#[allow(clippy::too_many_arguments)]
pub fn enroll(
    transport: &dyn Transport,
    ltca_key: &PublicKey,
    clock: &dyn Clock,
    skew: u64,
    key: &KeyPair,
    subject_id: &str,
    validity: Interval,
    registrar: Option<&PrivateKey>,
) -> Result<LongTermCertificate, ClientError> {
    let body = RegisterRequest {
        csr: make_csr(key),
        subject_id: subject_id.to_string(),
        validity,
    }
    .to_canonical_bytes();
    let nonce = rand::random();
    let resp = rpc::call(transport, ltca_key, clock, skew, msg::REG_REQ, body, registrar, nonce)?;
    let ltc: LtcResponse = rpc::decode_body(&resp)?;
    if ltc.ltc.public_key != key.public || ltc.ltc.subject_id != subject_id {
        return Err(ClientError::invalid("ltc does not match registration"));
    }
    Ok(ltc.ltc)
}
