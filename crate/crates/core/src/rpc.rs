//! One request, one response: client-side call checks and server-side
//! envelope handling shared by every service.

use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{PrivateKey, PublicKey};
use crate::encoding::{Canonical, DecodeError};
use crate::messages::{ErrorBody, ErrorCode};
use crate::time::{Clock, TimePoint};
use crate::wire::{
    self, check_freshness, deframe, frame, msg, Envelope, FrameError, FreshnessError, NonceCache,
    Sealed, Transport, TransportError,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("malformed response frame: {0}")]
    Frame(#[from] FrameError),
    #[error("response rejected: {0}")]
    ResponseInvalid(&'static str),
    #[error("server error {code}: {detail}")]
    Service { code: ErrorCode, detail: String },
}

impl CallError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            CallError::Service { code, .. } => Some(*code),
            _ => None,
        }
    }

    /// True when the request provably never reached a server.
    pub fn is_undelivered(&self) -> bool {
        matches!(
            self,
            CallError::Transport(TransportError::Unreachable(_) | TransportError::Overloaded)
        )
    }
}

/// A prepared request: the frame to send and what the response must match.
#[derive(Debug, Clone)]
pub struct Call {
    pub request_type: u16,
    pub nonce: u64,
    pub frame: Vec<u8>,
}

impl Call {
    pub fn new(
        request_type: u16,
        body: Vec<u8>,
        signer: Option<&PrivateKey>,
        nonce: u64,
        now: TimePoint,
    ) -> Self {
        let env = wire::seal(request_type, nonce, now, body, signer);
        Self {
            request_type,
            nonce,
            frame: frame(&env),
        }
    }

    /// Checks a response frame: expected type, nonce `N + 1`, server
    /// signature and timestamp skew. Returns the response body.
    pub fn accept_response(
        &self,
        response: &[u8],
        server_key: &PublicKey,
        now: TimePoint,
        skew: u64,
    ) -> Result<Vec<u8>, CallError> {
        let env = deframe(response)?;
        if env.nonce != self.nonce.wrapping_add(1) {
            return Err(CallError::ResponseInvalid("nonce is not request nonce + 1"));
        }
        let sealed =
            wire::open(&env).map_err(|_| CallError::ResponseInvalid("undecodable payload"))?;
        if !wire::verify_sealed(&env, &sealed, server_key) {
            return Err(CallError::ResponseInvalid("server signature does not verify"));
        }
        if env.timestamp.abs_diff(now) > skew {
            return Err(CallError::ResponseInvalid("stale response timestamp"));
        }
        if env.msg_type == msg::ERR {
            let err = ErrorBody::from_canonical_bytes(&sealed.body)
                .map_err(|_| CallError::ResponseInvalid("undecodable error body"))?;
            return Err(CallError::Service {
                code: err.code,
                detail: err.detail,
            });
        }
        if Some(env.msg_type) != msg::response_for(self.request_type) {
            return Err(CallError::ResponseInvalid("unexpected response type"));
        }
        Ok(sealed.body)
    }
}

/// Sends `body` and returns the verified response body.
#[allow(clippy::too_many_arguments)]
pub fn call(
    transport: &dyn Transport,
    server_key: &PublicKey,
    clock: &dyn Clock,
    skew: u64,
    request_type: u16,
    body: Vec<u8>,
    signer: Option<&PrivateKey>,
    nonce: u64,
) -> Result<Vec<u8>, CallError> {
    let call = Call::new(request_type, body, signer, nonce, clock.now());
    let response = transport.exchange(&call.frame)?;
    call.accept_response(&response, server_key, clock.now(), skew)
}

pub fn decode_body<T: Canonical>(body: &[u8]) -> Result<T, CallError> {
    T::from_canonical_bytes(body).map_err(|_| CallError::ResponseInvalid("undecodable body"))
}

/// A server endpoint: one request frame in, one response frame out.
pub trait Service: Send + Sync {
    fn handle(&self, request: &[u8]) -> Vec<u8>;
}

impl<S: Service + ?Sized> Service for Arc<S> {
    fn handle(&self, request: &[u8]) -> Vec<u8> {
        (**self).handle(request)
    }
}

/// Calls a service directly, without queueing or sockets.
pub struct DirectTransport<S>(pub S);

impl<S: Service> Transport for DirectTransport<S> {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        Ok(self.0.handle(request))
    }
}

/// An error a handler reports back to the client.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {detail}")]
pub struct Reject {
    pub code: ErrorCode,
    pub detail: String,
}

impl Reject {
    pub fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }
}

impl From<FreshnessError> for Reject {
    fn from(e: FreshnessError) -> Self {
        let code = match e {
            FreshnessError::StaleTimestamp => ErrorCode::StaleTimestamp,
            FreshnessError::ReplayedNonce => ErrorCode::ReplayedNonce,
        };
        Reject::new(code, e.to_string())
    }
}

impl From<DecodeError> for Reject {
    fn from(e: DecodeError) -> Self {
        Reject::new(ErrorCode::BadRequest, e.to_string())
    }
}

/// Server-side identity and freshness state common to all services.
pub struct Responder {
    key: PrivateKey,
    nonces: NonceCache,
}

/// A request that passed framing and freshness checks.
#[derive(Debug)]
pub struct Incoming {
    pub env: Envelope,
    pub sealed: Sealed,
}

impl Incoming {
    pub fn body<T: Canonical>(&self) -> Result<T, Reject> {
        Ok(T::from_canonical_bytes(&self.sealed.body)?)
    }

    /// Checks the client authenticator under `key`.
    pub fn authenticated_by(&self, key: &PublicKey) -> bool {
        wire::verify_sealed(&self.env, &self.sealed, key)
    }
}

impl Responder {
    pub fn new(key: PrivateKey, nonces: NonceCache) -> Self {
        Self { key, nonces }
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    /// Deframes, checks freshness and opens the payload. On failure returns
    /// the error frame to send back.
    pub fn accept(&self, request: &[u8], now: TimePoint) -> Result<Incoming, Vec<u8>> {
        let env = match deframe(request) {
            Ok(env) => env,
            Err(e) => {
                let placeholder = Envelope {
                    msg_type: msg::ERR,
                    nonce: 0,
                    timestamp: now,
                    payload: Vec::new(),
                };
                return Err(self.error(&placeholder, &Reject::new(ErrorCode::BadRequest, e.to_string()), now));
            }
        };
        if let Err(e) = check_freshness(&env, now, &self.nonces) {
            return Err(self.error(&env, &e.into(), now));
        }
        match wire::open(&env) {
            Ok(sealed) => Ok(Incoming { env, sealed }),
            Err(e) => Err(self.error(&env, &e.into(), now)),
        }
    }

    pub fn reply(&self, request: &Envelope, body: Vec<u8>, now: TimePoint) -> Vec<u8> {
        let msg_type = msg::response_for(request.msg_type).unwrap_or(msg::ERR);
        self.sealed(request, msg_type, body, now)
    }

    pub fn error(&self, request: &Envelope, reject: &Reject, now: TimePoint) -> Vec<u8> {
        let body = ErrorBody {
            code: reject.code,
            detail: reject.detail.clone(),
        };
        self.sealed(request, msg::ERR, body.to_canonical_bytes(), now)
    }

    pub fn finish(&self, incoming: &Incoming, result: Result<Vec<u8>, Reject>, now: TimePoint) -> Vec<u8> {
        match result {
            Ok(body) => self.reply(&incoming.env, body, now),
            Err(reject) => self.error(&incoming.env, &reject, now),
        }
    }

    fn sealed(&self, request: &Envelope, msg_type: u16, body: Vec<u8>, now: TimePoint) -> Vec<u8> {
        let env = wire::seal(msg_type, request.nonce.wrapping_add(1), now, body, Some(&self.key));
        frame(&env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_keypair;
    use crate::time::ManualClock;
    use crate::wire::FreshnessPolicy;

    struct Echo {
        responder: Responder,
        clock: ManualClock,
    }

    impl Service for Echo {
        fn handle(&self, request: &[u8]) -> Vec<u8> {
            let now = self.clock.now();
            let incoming = match self.responder.accept(request, now) {
                Ok(i) => i,
                Err(frame) => return frame,
            };
            let body = incoming.sealed.body.clone();
            if body == b"fail" {
                return self.responder.finish(&incoming, Err(Reject::new(ErrorCode::NotFound, "nope")), now);
            }
            self.responder.finish(&incoming, Ok(body), now)
        }
    }

    fn echo() -> (Echo, PublicKey) {
        let kp = generate_keypair(Some([1; 32]));
        let svc = Echo {
            responder: Responder::new(kp.private.clone(), NonceCache::new(FreshnessPolicy::default())),
            clock: ManualClock::new(1_000),
        };
        (svc, kp.public)
    }

    #[test]
    fn round_trip_and_service_error() {
        let (svc, key) = echo();
        let clock = ManualClock::new(1_000);
        let t = DirectTransport(svc);
        let body = call(&t, &key, &clock, 300, msg::DIR_REQ, b"hi".to_vec(), None, 7).unwrap();
        assert_eq!(body, b"hi");
        let err = call(&t, &key, &clock, 300, msg::DIR_REQ, b"fail".to_vec(), None, 9).unwrap_err();
        assert_eq!(err.code(), Some(ErrorCode::NotFound));
    }

    #[test]
    fn replayed_request_rejected() {
        let (svc, key) = echo();
        let c = Call::new(msg::DIR_REQ, b"x".to_vec(), None, 5, 1_000);
        assert!(c.accept_response(&svc.handle(&c.frame), &key, 1_000, 300).is_ok());
        let err = c.accept_response(&svc.handle(&c.frame), &key, 1_000, 300).unwrap_err();
        assert_eq!(err.code(), Some(ErrorCode::ReplayedNonce));
    }

    #[test]
    fn response_with_wrong_nonce_or_key_rejected() {
        let (svc, key) = echo();
        let c = Call::new(msg::DIR_REQ, b"x".to_vec(), None, 5, 1_000);
        let resp = svc.handle(&c.frame);
        let other = Call { nonce: 6, ..c.clone() };
        assert_eq!(
            other.accept_response(&resp, &key, 1_000, 300),
            Err(CallError::ResponseInvalid("nonce is not request nonce + 1"))
        );
        let wrong_key = generate_keypair(Some([2; 32])).public;
        assert_eq!(
            c.accept_response(&resp, &wrong_key, 1_000, 300),
            Err(CallError::ResponseInvalid("server signature does not verify"))
        );
    }

    #[test]
    fn garbage_request_gets_error_frame() {
        let (svc, key) = echo();
        let resp = deframe(&svc.handle(b"garbage")).unwrap();
        assert_eq!(resp.msg_type, msg::ERR);
        let sealed = wire::open(&resp).unwrap();
        assert!(wire::verify_sealed(&resp, &sealed, &key));
    }
}
