//! Domain-wide issuance policy and the lifetime grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credential::Interval;
use crate::time::TimePoint;

/// Issuance policy shared by an LTCA and the PCAs of its domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainPolicy {
    /// Γ: every ticket covers exactly a whole number of these.
    pub ticket_interval_seconds: u64,
    /// τ: every pseudonym lives exactly this long.
    pub pseudonym_lifetime_seconds: u64,
    pub grid_epoch: TimePoint,
    pub pop_failure_threshold: u32,
    pub clock_skew_seconds: u64,
    pub max_batch: u32,
}

impl Default for DomainPolicy {
    fn default() -> Self {
        Self {
            ticket_interval_seconds: 3600,
            pseudonym_lifetime_seconds: 300,
            grid_epoch: 0,
            pop_failure_threshold: 3,
            clock_skew_seconds: 300,
            max_batch: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("ticket interval and pseudonym lifetime must be positive")]
    ZeroLength,
    #[error("ticket interval {gamma} is not a multiple of pseudonym lifetime {tau}")]
    NotMultiple { gamma: u64, tau: u64 },
    #[error("max batch must be positive")]
    ZeroBatch,
}

impl DomainPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let (gamma, tau) = (self.ticket_interval_seconds, self.pseudonym_lifetime_seconds);
        if gamma == 0 || tau == 0 {
            return Err(PolicyError::ZeroLength);
        }
        if gamma % tau != 0 {
            return Err(PolicyError::NotMultiple { gamma, tau });
        }
        if self.max_batch == 0 {
            return Err(PolicyError::ZeroBatch);
        }
        Ok(())
    }

    /// Ticket interval covering `requested`, snapped outward to the Γ grid.
    pub fn ticket_interval(&self, requested: &Interval) -> Option<Interval> {
        requested.snap_outward(self.ticket_interval_seconds, self.grid_epoch)
    }

    pub fn pseudonym_slots(&self, requested: &Interval) -> Result<Vec<Interval>, LifetimeError> {
        align_lifetimes(requested, self.pseudonym_lifetime_seconds, self.grid_epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LifetimeError {
    #[error("no lifetime slot intersects the requested interval")]
    EmptyRequest,
    #[error("requested interval starts before the grid epoch")]
    BeforeEpoch,
}

/// The τ-grid slots `[epoch + kτ, epoch + (k+1)τ)` that intersect
/// `requested`, in order. Every vehicle asking about the same wall-clock
/// span gets the same slots.
pub fn align_lifetimes(
    requested: &Interval,
    lifetime: u64,
    grid_epoch: TimePoint,
) -> Result<Vec<Interval>, LifetimeError> {
    assert!(lifetime > 0, "pseudonym lifetime must be positive");
    let closure = requested
        .snap_outward(lifetime, grid_epoch)
        .ok_or(LifetimeError::BeforeEpoch)?;
    let slots: Vec<Interval> = (closure.start()..closure.end())
        .step_by(lifetime as usize)
        .map(|s| Interval::new(s, s + lifetime).expect("positive lifetime"))
        .filter(|slot| slot.overlaps(requested))
        .collect();
    if slots.is_empty() {
        return Err(LifetimeError::EmptyRequest);
    }
    Ok(slots)
}
