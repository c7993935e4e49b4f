//! Invariant checks over what the authorities and vehicles hold.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use vpki_core::snapshot::DeploymentSnapshot;
use vpki_core::{Interval, RevocationList, SerialNumber};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "monitor")]
pub enum Violation {
    /// Two tickets of one subject usable at the same instant.
    SybilTickets { subject: String, first: String, second: String },
    /// Two pseudonyms of one subject valid at the same instant.
    SybilPseudonyms { subject: String, first: String, second: String },
    PoolOverlap { vehicle: String, first: u64, second: u64 },
    Unresolved { pseudonym: String, detail: String },
    Misresolved { pseudonym: String, expected: String, got: String },
    CrlRegression { issuer: String, detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SybilTickets { subject, first, second } => {
                write!(f, "{subject} holds overlapping tickets {first} and {second}")
            }
            Violation::SybilPseudonyms { subject, first, second } => {
                write!(f, "{subject} holds overlapping pseudonyms {first} and {second}")
            }
            Violation::PoolOverlap { vehicle, first, second } => {
                write!(f, "{vehicle}: pool entries {first} and {second} overlap")
            }
            Violation::Unresolved { pseudonym, detail } => write!(f, "{pseudonym} unresolved: {detail}"),
            Violation::Misresolved { pseudonym, expected, got } => {
                write!(f, "{pseudonym} resolved to {got}, owner is {expected}")
            }
            Violation::CrlRegression { issuer, detail } => write!(f, "{issuer} crl: {detail}"),
        }
    }
}

/// `[from, to)` during which a credential existed and was valid.
#[derive(Debug, Clone)]
struct Window {
    from: u64,
    to: u64,
    name: String,
}

fn live(issued: u64, start: u64, end: u64, name: String) -> Option<Window> {
    let from = issued.max(start);
    (from < end).then_some(Window { from, to: end, name })
}

/// First pair of overlapping windows, if any.
fn overlap(mut windows: Vec<Window>) -> Option<(String, String)> {
    windows.sort_by_key(|w| (w.from, w.to));
    let mut reach: Option<&Window> = None;
    for w in &windows {
        if let Some(r) = reach {
            if w.from < r.to {
                return Some((r.name.clone(), w.name.clone()));
            }
        }
        if reach.is_none_or(|r| w.to > r.to) {
            reach = Some(w);
        }
    }
    None
}

/// Scans every ledger for a subject holding two tickets, or two
/// pseudonyms, usable at one instant. A credential counts from the later
/// of its issuance and its validity start. A foreign ticket stops counting
/// once exchanged, since the exchanged ticket replaces it.
pub fn sybil_scan(snap: &DeploymentSnapshot) -> Vec<Violation> {
    // (ltca, ticket serial) -> subject, following exchanges home.
    let mut owner: HashMap<(&str, u64), &str> = HashMap::new();
    let mut exchanged_at: HashMap<(&str, u64), u64> = HashMap::new();
    for l in &snap.ltcas {
        for t in &l.tickets {
            owner.insert((&l.ca_id, t.serial), &t.subject_id);
        }
        for x in &l.exchanges {
            exchanged_at.insert((&x.foreign_issuer, x.foreign_serial), x.issued_at);
        }
    }
    for l in &snap.ltcas {
        for x in &l.exchanges {
            if let Some(s) = owner.get(&(x.foreign_issuer.as_str(), x.foreign_serial)).copied() {
                owner.insert((&l.ca_id, x.serial), s);
            }
        }
    }

    let mut tickets: BTreeMap<&str, Vec<Window>> = BTreeMap::new();
    for l in &snap.ltcas {
        for t in &l.tickets {
            let end = exchanged_at
                .get(&(l.ca_id.as_str(), t.serial))
                .map_or(t.interval.end, |x| t.interval.end.min(*x));
            let name = format!("{}#{}", l.ca_id, t.serial);
            tickets
                .entry(&t.subject_id)
                .or_default()
                .extend(live(t.issued_at, t.interval.start, end, name));
        }
        for x in &l.exchanges {
            if let Some(s) = owner.get(&(l.ca_id.as_str(), x.serial)) {
                let name = format!("{}#{}", l.ca_id, x.serial);
                tickets
                    .entry(s)
                    .or_default()
                    .extend(live(x.issued_at, x.interval.start, x.interval.end, name));
            }
        }
    }

    let mut pseudonyms: BTreeMap<&str, Vec<Window>> = BTreeMap::new();
    for p in &snap.pcas {
        let used: HashMap<(&str, u64), u64> = p
            .tickets
            .iter()
            .map(|u| ((u.ticket_issuer.as_str(), u.ticket_serial), u.used_at))
            .collect();
        for row in &p.pseudonyms {
            let key = (row.ticket_issuer.as_str(), row.ticket_serial);
            let Some(s) = owner.get(&key) else { continue };
            let issued = used.get(&key).copied().unwrap_or(0);
            let name = format!("{}#{}", p.ca_id, row.serial);
            pseudonyms
                .entry(s)
                .or_default()
                .extend(live(issued, row.interval.start, row.interval.end, name));
        }
    }

    let mut out = Vec::new();
    for (subject, w) in tickets {
        if let Some((first, second)) = overlap(w) {
            out.push(Violation::SybilTickets {
                subject: subject.to_string(),
                first,
                second,
            });
        }
    }
    for (subject, w) in pseudonyms {
        if let Some((first, second)) = overlap(w) {
            out.push(Violation::SybilPseudonyms {
                subject: subject.to_string(),
                first,
                second,
            });
        }
    }
    out
}

/// Pairwise disjointness of one vehicle's pseudonym lifetimes.
pub fn pool_overlap(vehicle: &str, held: &[(SerialNumber, Interval)]) -> Option<Violation> {
    let mut sorted: Vec<_> = held.to_vec();
    sorted.sort_by_key(|(_, iv)| (iv.start(), iv.end()));
    sorted.windows(2).find(|w| w[0].1.overlaps(&w[1].1)).map(|w| Violation::PoolOverlap {
        vehicle: vehicle.to_string(),
        first: w[0].0 .0,
        second: w[1].0 .0,
    })
}

/// Successive CRLs from one issuer: the sequence never goes back and a
/// revoked serial never disappears.
#[derive(Debug, Default)]
pub struct CrlTracker {
    last: HashMap<String, (u64, BTreeSet<u64>)>,
}

impl CrlTracker {
    /// `source` names the issuer instance (replicas publish separately).
    pub fn observe(&mut self, source: &str, crl: &RevocationList) -> Option<Violation> {
        let revoked: BTreeSet<u64> = crl.entries.iter().map(|s| s.0).collect();
        let fail = |detail: String| {
            Some(Violation::CrlRegression {
                issuer: source.to_string(),
                detail,
            })
        };
        if crl.delta_since.is_some() {
            return fail("tracker expects full lists".into());
        }
        let result = match self.last.get(source) {
            Some((seq, _)) if crl.sequence < *seq => fail(format!("sequence {} after {seq}", crl.sequence)),
            Some((seq, prev)) if crl.sequence == *seq && revoked != *prev => {
                fail(format!("sequence {seq} republished with other entries"))
            }
            Some((_, prev)) if !prev.is_subset(&revoked) => fail(format!(
                "{} serials dropped",
                prev.difference(&revoked).count()
            )),
            _ => None,
        };
        self.last.insert(source.to_string(), (crl.sequence, revoked));
        result
    }
}
