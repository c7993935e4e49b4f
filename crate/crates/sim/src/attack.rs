//! Bogus requests from external attackers: well-framed envelopes carrying
//! credentials no authority issued.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use vpki_core::encoding::Canonical;
use vpki_core::messages::{ErrorBody, ErrorCode, PseudonymRequest, TicketRequest};
use vpki_core::wire::{self, msg, Transport, TransportError};
use vpki_core::{
    make_csr, CaId, Csr, Digest256, Interval, KeyPair, LongTermCertificate, Rnd256, SerialNumber, Ticket, TimePoint,
};

use crate::scenario::{attacker_times, AttackKind};

/// One attacker's open-loop request stream: arrival times in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackStream {
    pub kind: AttackKind,
    pub times: Vec<f64>,
}

/// Poisson arrivals at `per_hour` for `duration` seconds. Rate zero gives
/// an empty stream.
pub fn attacker_workload(kind: AttackKind, per_hour: f64, duration: f64, seed: u64) -> AttackStream {
    AttackStream {
        kind,
        times: attacker_times(seed, 0, per_hour, duration),
    }
}

/// Builds attack frames against one LTCA and one PCA.
pub struct Forger {
    ltca: CaId,
    pca: CaId,
    key: KeyPair,
    /// Claims the real LTCA as issuer but carries the attacker's signature.
    forged_ltc: LongTermCertificate,
    /// Issued by an authority nobody trusts.
    alien_ltc: LongTermCertificate,
    forged_ticket: Ticket,
    csr: Csr,
}

impl Forger {
    pub fn new(ltca: CaId, pca: CaId, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let key = KeyPair::generate(&mut rng);
        let forever = Interval::new(0, 1 << 40).expect("non-empty");
        let forged_ltc = LongTermCertificate::issue(
            SerialNumber(rng.gen()),
            "attacker".into(),
            key.public.clone(),
            forever,
            ltca.clone(),
            &key.private,
        );
        let alien_ltc = LongTermCertificate::issue(
            SerialNumber(rng.gen()),
            "attacker".into(),
            key.public.clone(),
            forever,
            CaId::new("ltca-rogue").expect("valid id"),
            &key.private,
        );
        let forged_ticket = Ticket::issue(
            SerialNumber(rng.gen()),
            Digest256(rng.gen()),
            forever,
            1 << 40,
            ltca.clone(),
            &key.private,
        );
        let csr = make_csr(&KeyPair::generate(&mut rng));
        Self {
            ltca,
            pca,
            key,
            forged_ltc,
            alien_ltc,
            forged_ticket,
            csr,
        }
    }

    pub fn target(&self, kind: AttackKind) -> &CaId {
        match kind {
            AttackKind::FakeLtc => &self.ltca,
            AttackKind::FakeTicket => &self.pca,
        }
    }

    /// A fresh attack frame. Odd `variant`s of fake_ltc use the untrusted
    /// issuer, even ones the forged signature.
    pub fn frame(&self, kind: AttackKind, variant: u64, nonce: u64, now: TimePoint) -> Vec<u8> {
        let env = match kind {
            AttackKind::FakeLtc => {
                let ltc = if variant % 2 == 1 {
                    &self.alien_ltc
                } else {
                    &self.forged_ltc
                };
                let body = TicketRequest {
                    digest: Digest256([variant as u8; 32]),
                    requested: Interval::new(now, now + 1).expect("non-empty"),
                    ltc: ltc.clone(),
                };
                wire::seal(msg::TICKET_REQ, nonce, now, body.to_canonical_bytes(), Some(&self.key.private))
            }
            AttackKind::FakeTicket => {
                let body = PseudonymRequest {
                    rnd: Rnd256([variant as u8; 32]),
                    requested: Interval::new(now, now + 1).expect("non-empty"),
                    ticket: self.forged_ticket.clone(),
                    csrs: vec![self.csr.clone()],
                };
                wire::seal(msg::PSNYM_REQ, nonce, now, body.to_canonical_bytes(), None)
            }
        };
        wire::frame(&env)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackOutcome {
    /// Refused with one of the codes expected for the kind.
    Rejected,
    /// Refused with some other code.
    RejectedOther,
    /// Turned away before processing: queue full or server down.
    Refused,
    /// The server granted the request.
    Accepted,
    Garbled,
}

pub fn expected_codes(kind: AttackKind) -> &'static [ErrorCode] {
    match kind {
        AttackKind::FakeLtc => &[ErrorCode::BadSignature, ErrorCode::UnknownIssuer],
        AttackKind::FakeTicket => &[ErrorCode::TicketInvalid],
    }
}

/// Classifies a server's answer to an attack frame. Attackers do not
/// bother verifying the server's signature.
pub fn classify(kind: AttackKind, response: Result<Vec<u8>, TransportError>) -> (AttackOutcome, Option<ErrorCode>) {
    let bytes = match response {
        Ok(b) => b,
        Err(_) => return (AttackOutcome::Refused, None),
    };
    let Ok(env) = wire::deframe(&bytes) else {
        return (AttackOutcome::Garbled, None);
    };
    if env.msg_type != msg::ERR {
        return (AttackOutcome::Accepted, None);
    }
    let code = wire::open(&env)
        .ok()
        .and_then(|s| ErrorBody::from_canonical_bytes(&s.body).ok())
        .map(|e| e.code);
    match code {
        Some(c) if expected_codes(kind).contains(&c) => (AttackOutcome::Rejected, Some(c)),
        Some(c) => (AttackOutcome::RejectedOther, Some(c)),
        None => (AttackOutcome::Garbled, None),
    }
}

/// Sends one attack frame and classifies the answer.
pub fn fire(transport: &Arc<dyn Transport>, kind: AttackKind, frame: &[u8]) -> (AttackOutcome, Option<ErrorCode>) {
    classify(kind, transport.exchange(frame))
}
