//! Checks shared by the services' request handlers.

use vpki_core::messages::ErrorCode;
use vpki_core::rpc::{Incoming, Reject};
use vpki_core::{CaId, Role, TrustStore, ValidationResult};

/// The request must be signed by `ra`, which the trust store must know as a
/// resolution authority.
pub(crate) fn require_ra(incoming: &Incoming, trust: &TrustStore, ra: &CaId) -> Result<(), Reject> {
    let key = trust
        .key_for(ra, Role::Ra)
        .ok_or_else(|| Reject::new(ErrorCode::Unauthorized, format!("{ra} is not a resolution authority")))?;
    if !incoming.authenticated_by(key) {
        return Err(Reject::new(ErrorCode::Unauthorized, "request not signed by resolution authority"));
    }
    Ok(())
}

pub(crate) fn reject_validation(result: ValidationResult, what: &str) -> Reject {
    let code = match result {
        ValidationResult::Valid => ErrorCode::Internal,
        ValidationResult::Expired => ErrorCode::Expired,
        ValidationResult::NotYetValid => ErrorCode::Expired,
        ValidationResult::UnknownIssuer => ErrorCode::UnknownIssuer,
        ValidationResult::BadSignature => ErrorCode::BadSignature,
    };
    Reject::new(code, format!("{what}: {result:?}"))
}
