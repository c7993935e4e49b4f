//! What a coalition of honest-but-curious authorities can derive by joining
//! the tables they keep.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use vpki_core::snapshot::{DeploymentSnapshot, LtcaSnapshot, PcaSnapshot};

use crate::transcript::PseudonymRef;

/// A colluding party: a domain's LTCA, all PCAs of a domain, or one
/// authority by id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Entity {
    Ltca(String),
    Pcas(String),
    Authority(String),
}

impl FromStr for Entity {
    type Err = String;
    /// `LTCA_A`, `PCA_A`, or a literal authority id such as `pca-a-0`.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.is_empty() {
            return Err("empty entity".into());
        }
        if let Some(d) = s.strip_prefix("LTCA_") {
            return Ok(Entity::Ltca(d.to_ascii_lowercase()));
        }
        if let Some(d) = s.strip_prefix("PCA_") {
            return Ok(Entity::Pcas(d.to_ascii_lowercase()));
        }
        Ok(Entity::Authority(s.to_string()))
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Ltca(d) => write!(f, "LTCA_{}", d.to_ascii_uppercase()),
            Entity::Pcas(d) => write!(f, "PCA_{}", d.to_ascii_uppercase()),
            Entity::Authority(id) => f.write_str(id),
        }
    }
}

pub fn parse_entities(list: &str) -> Result<Vec<Entity>, String> {
    list.split(',').map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClosureError {
    #[error("no snapshot held by {0}")]
    SnapshotMissing(Entity),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubjectRef {
    pub ltca: String,
    pub subject: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TicketRef {
    pub issuer: String,
    pub serial: u64,
}

impl TicketRef {
    fn new(issuer: &str, serial: u64) -> Self {
        Self {
            issuer: issuer.to_string(),
            serial,
        }
    }
}

/// Facts derivable from the union of the coalition's tables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeSet {
    pub entities: Vec<Entity>,
    /// Registered vehicle identities.
    pub ids: BTreeSet<SubjectRef>,
    /// Ticket periods and, at PCAs, the sub-intervals redeemed against them.
    pub intervals: BTreeSet<(TicketRef, u64, u64)>,
    /// Tickets whose requesting vehicle is known, directly or through
    /// exchange records.
    pub ticket_owners: BTreeMap<TicketRef, SubjectRef>,
    /// Exchanged ticket to the foreign ticket it was traded for.
    pub exchanges: BTreeMap<TicketRef, TicketRef>,
    /// Pseudonym to the ticket it was issued against.
    pub pseudonyms: BTreeMap<PseudonymRef, TicketRef>,
    /// Pseudonyms whose vehicle identity is derivable.
    pub id_links: BTreeMap<PseudonymRef, SubjectRef>,
    /// Classes of two or more pseudonyms known to share a vehicle.
    pub linked: Vec<BTreeSet<PseudonymRef>>,
}

fn select<'a>(entity: &Entity, snap: &'a DeploymentSnapshot) -> (Vec<&'a LtcaSnapshot>, Vec<&'a PcaSnapshot>) {
    match entity {
        Entity::Ltca(d) => (
            snap.ltcas.iter().filter(|l| l.domain.eq_ignore_ascii_case(d)).collect(),
            Vec::new(),
        ),
        Entity::Pcas(d) => (
            Vec::new(),
            snap.pcas.iter().filter(|p| p.domain.eq_ignore_ascii_case(d)).collect(),
        ),
        Entity::Authority(id) => (
            snap.ltcas.iter().filter(|l| &l.ca_id == id).collect(),
            // Replicas share an id; together they are one authority.
            snap.pcas.iter().filter(|p| &p.ca_id == id).collect(),
        ),
    }
}

/// Joins the coalition's tables on ticket serials and exchange records.
pub fn collusion_closure(entities: &[Entity], snap: &DeploymentSnapshot) -> Result<KnowledgeSet, ClosureError> {
    let mut k = KnowledgeSet {
        entities: entities.to_vec(),
        ..KnowledgeSet::default()
    };
    let mut ltcas: BTreeMap<&str, &LtcaSnapshot> = BTreeMap::new();
    let mut pcas: Vec<&PcaSnapshot> = Vec::new();
    for e in entities {
        let (l, p) = select(e, snap);
        if l.is_empty() && p.is_empty() {
            return Err(ClosureError::SnapshotMissing(e.clone()));
        }
        ltcas.extend(l.into_iter().map(|s| (s.ca_id.as_str(), s)));
        for s in p {
            if !pcas.iter().any(|q| std::ptr::eq(*q, s)) {
                pcas.push(s);
            }
        }
    }

    for l in ltcas.values() {
        for v in &l.vehicles {
            k.ids.insert(SubjectRef {
                ltca: l.ca_id.clone(),
                subject: v.subject_id.clone(),
            });
        }
        for t in &l.tickets {
            let r = TicketRef::new(&l.ca_id, t.serial);
            k.intervals.insert((r.clone(), t.interval.start, t.interval.end));
            k.ticket_owners.insert(
                r,
                SubjectRef {
                    ltca: l.ca_id.clone(),
                    subject: t.subject_id.clone(),
                },
            );
        }
        for x in &l.exchanges {
            let r = TicketRef::new(&l.ca_id, x.serial);
            k.intervals.insert((r.clone(), x.interval.start, x.interval.end));
            k.exchanges.insert(r, TicketRef::new(&x.foreign_issuer, x.foreign_serial));
        }
    }
    // Follow exchange records to the home ticket; the chain is one hop in
    // practice but nothing relies on that.
    let exchanged: Vec<TicketRef> = k.exchanges.keys().cloned().collect();
    for t in exchanged {
        let mut cursor = t.clone();
        let mut hops = 0;
        while let Some(next) = k.exchanges.get(&cursor) {
            cursor = next.clone();
            hops += 1;
            if hops > k.exchanges.len() {
                break;
            }
        }
        if let Some(owner) = k.ticket_owners.get(&cursor).cloned() {
            k.ticket_owners.insert(t, owner);
        }
    }

    for p in &pcas {
        for u in &p.tickets {
            k.intervals.insert((
                TicketRef::new(&u.ticket_issuer, u.ticket_serial),
                u.interval.start,
                u.interval.end,
            ));
        }
        for row in &p.pseudonyms {
            let pr = PseudonymRef::new(&p.ca_id, row.serial);
            let tr = TicketRef::new(&row.ticket_issuer, row.ticket_serial);
            if let Some(owner) = k.ticket_owners.get(&tr) {
                k.id_links.insert(pr.clone(), owner.clone());
            }
            k.pseudonyms.insert(pr, tr);
        }
    }

    k.linked = link_classes(&k);
    Ok(k)
}

/// Pseudonyms are linked when they share a ticket or a derived identity.
fn link_classes(k: &KnowledgeSet) -> Vec<BTreeSet<PseudonymRef>> {
    let names: Vec<&PseudonymRef> = k.pseudonyms.keys().collect();
    let mut parent: Vec<usize> = (0..names.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut first_by_ticket: BTreeMap<&TicketRef, usize> = BTreeMap::new();
    let mut first_by_owner: BTreeMap<&SubjectRef, usize> = BTreeMap::new();
    for (i, p) in names.iter().enumerate() {
        let mut anchors = vec![*first_by_ticket.entry(&k.pseudonyms[*p]).or_insert(i)];
        if let Some(owner) = k.id_links.get(*p) {
            anchors.push(*first_by_owner.entry(owner).or_insert(i));
        }
        for a in anchors {
            let (ra, ri) = (find(&mut parent, a), find(&mut parent, i));
            parent[ri] = ra;
        }
    }
    let mut classes: BTreeMap<usize, BTreeSet<PseudonymRef>> = BTreeMap::new();
    for i in 0..names.len() {
        let root = find(&mut parent, i);
        classes.entry(root).or_default().insert(names[i].clone());
    }
    classes.into_values().filter(|c| c.len() > 1).collect()
}

impl KnowledgeSet {
    /// True when every fact here is also known to `other`.
    pub fn is_subset_of(&self, other: &KnowledgeSet) -> bool {
        fn map_sub<K: Ord, V: PartialEq>(a: &BTreeMap<K, V>, b: &BTreeMap<K, V>) -> bool {
            a.iter().all(|(k, v)| b.get(k) == Some(v))
        }
        self.ids.is_subset(&other.ids)
            && self.intervals.is_subset(&other.intervals)
            && map_sub(&self.ticket_owners, &other.ticket_owners)
            && map_sub(&self.exchanges, &other.exchanges)
            && map_sub(&self.pseudonyms, &other.pseudonyms)
            && map_sub(&self.id_links, &other.id_links)
            && self
                .linked
                .iter()
                .all(|c| other.linked.iter().any(|d| c.is_subset(d)))
    }

    /// Whether two pseudonyms are known to belong to one vehicle.
    pub fn are_linked(&self, a: &PseudonymRef, b: &PseudonymRef) -> bool {
        a == b || self.linked.iter().any(|c| c.contains(a) && c.contains(b))
    }

    pub fn summary(&self) -> KnowledgeSummary {
        KnowledgeSummary {
            entities: self.entities.iter().map(ToString::to_string).collect(),
            ids: self.ids.len(),
            intervals: self.intervals.len(),
            ticket_owners: self.ticket_owners.len(),
            exchanges: self.exchanges.len(),
            pseudonyms: self.pseudonyms.len(),
            linked_classes: self.linked.len(),
            largest_linked_class: self.linked.iter().map(BTreeSet::len).max().unwrap_or(0),
            id_links: self
                .id_links
                .iter()
                .map(|(p, s)| IdLink {
                    pseudonym: p.clone(),
                    vehicle: s.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdLink {
    pub pseudonym: PseudonymRef,
    pub vehicle: SubjectRef,
}

/// Report form of a knowledge set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSummary {
    pub entities: Vec<String>,
    pub ids: usize,
    pub intervals: usize,
    pub ticket_owners: usize,
    pub exchanges: usize,
    pub pseudonyms: usize,
    pub linked_classes: usize,
    pub largest_linked_class: usize,
    pub id_links: Vec<IdLink>,
}
