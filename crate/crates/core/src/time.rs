//! Wall-clock abstraction. All protocol time is integer seconds.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

pub type TimePoint = u64;

pub trait Clock: Send + Sync {
    fn now(&self) -> TimePoint;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> TimePoint {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: TimePoint) -> Self {
        Self(AtomicU64::new(start))
    }

    pub fn set(&self, t: TimePoint) {
        self.0.store(t, Ordering::SeqCst);
    }

    /// Moves forward to `t`; never moves backwards.
    pub fn advance_to(&self, t: TimePoint) {
        self.0.fetch_max(t, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> TimePoint {
        self.0.load(Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for std::sync::Arc<C> {
    fn now(&self) -> TimePoint {
        (**self).now()
    }
}
