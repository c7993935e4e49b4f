//! Plain-data dumps of what each authority holds, for offline analysis.
//! Field types are deliberately primitive so the JSON form is stable.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleRow {
    pub subject_id: String,
    pub ltc_serials: Vec<u64>,
    pub revoked: bool,
}

/// A ticket the LTCA issued to one of its registered vehicles. Native and
/// foreign-bound tickets produce identical rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketRow {
    pub serial: u64,
    pub subject_id: String,
    pub interval: IntervalRow,
    pub target_digest: String,
    pub issued_at: u64,
}

/// A native ticket issued in exchange for a foreign one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeRow {
    pub serial: u64,
    pub interval: IntervalRow,
    pub target_digest: String,
    pub foreign_issuer: String,
    pub foreign_serial: u64,
    pub issued_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LtcaSnapshot {
    pub ca_id: String,
    pub domain: String,
    pub vehicles: Vec<VehicleRow>,
    pub tickets: Vec<TicketRow>,
    pub exchanges: Vec<ExchangeRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketUsageRow {
    pub ticket_issuer: String,
    pub ticket_serial: u64,
    pub interval: IntervalRow,
    pub used_at: u64,
    pub pseudonyms: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudonymRow {
    pub serial: u64,
    pub interval: IntervalRow,
    pub ticket_issuer: String,
    pub ticket_serial: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcaSnapshot {
    pub ca_id: String,
    pub domain: String,
    pub tickets: Vec<TicketUsageRow>,
    pub pseudonyms: Vec<PseudonymRow>,
    pub revoked: Vec<u64>,
    pub crl_sequence: u64,
}

/// Everything the authorities of a deployment held at the end of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentSnapshot {
    pub ltcas: Vec<LtcaSnapshot>,
    pub pcas: Vec<PcaSnapshot>,
}

impl From<crate::credential::Interval> for IntervalRow {
    fn from(iv: crate::credential::Interval) -> Self {
        Self {
            start: iv.start(),
            end: iv.end(),
        }
    }
}
