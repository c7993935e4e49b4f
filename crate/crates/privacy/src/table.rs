//! Checks a deployment snapshot against the table of what each coalition of
//! honest-but-curious authorities knows.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use vpki_core::snapshot::DeploymentSnapshot;

use crate::collusion::{collusion_closure, ClosureError, Entity, KnowledgeSet, TicketRef};
use crate::transcript::{PseudonymRef, Transcript};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCheck {
    pub coalition: Vec<String>,
    pub claim: String,
    pub holds: bool,
    pub detail: String,
}

fn row(coalition: &[Entity], claim: &str, failures: Vec<String>) -> RowCheck {
    RowCheck {
        coalition: coalition.iter().map(ToString::to_string).collect(),
        claim: claim.to_string(),
        holds: failures.is_empty(),
        detail: if failures.is_empty() {
            "ok".into()
        } else {
            failures.join("; ")
        },
    }
}

/// Derived identity links that disagree with the ground truth.
fn wrong_links(k: &KnowledgeSet, owners: &BTreeMap<&PseudonymRef, &str>) -> Vec<String> {
    k.id_links
        .iter()
        .filter(|(p, s)| owners.get(p).is_some_and(|v| *v != s.subject))
        .map(|(p, s)| format!("{p} attributed to {}", s.subject))
        .collect()
}

fn classes_by_ticket(k: &KnowledgeSet) -> BTreeSet<BTreeSet<PseudonymRef>> {
    let mut by_ticket: BTreeMap<&TicketRef, BTreeSet<PseudonymRef>> = BTreeMap::new();
    for (p, t) in &k.pseudonyms {
        by_ticket.entry(t).or_default().insert(p.clone());
    }
    by_ticket.into_values().filter(|c| c.len() > 1).collect()
}

/// The six coalitions for domains `a` and `b`; `pca_a` names one PCA of `a`.
pub fn check_table(
    snap: &DeploymentSnapshot,
    a: &str,
    b: &str,
    pca_a: &str,
    truth: &Transcript,
) -> Result<Vec<RowCheck>, ClosureError> {
    let owners = truth.owners();
    let la = Entity::Ltca(a.into());
    let lb = Entity::Ltca(b.into());
    let pa = Entity::Pcas(a.into());
    let pb = Entity::Pcas(b.into());
    let pai = Entity::Authority(pca_a.into());
    let mut rows = Vec::new();

    let c = [la.clone()];
    let k = collusion_closure(&c, snap)?;
    let mut f = Vec::new();
    if k.ids.is_empty() || k.intervals.is_empty() {
        f.push("identities or periods missing".into());
    }
    if !k.pseudonyms.is_empty() || !k.id_links.is_empty() {
        f.push(format!("{} pseudonyms, {} identity links", k.pseudonyms.len(), k.id_links.len()));
    }
    rows.push(row(&c, "knows identities and ticket periods, no pseudonyms", f));

    let c = [pai.clone()];
    let k = collusion_closure(&c, snap)?;
    let mut f = Vec::new();
    if !k.id_links.is_empty() {
        f.push(format!("{} identity links", k.id_links.len()));
    }
    let per_request = classes_by_ticket(&k);
    let linked: BTreeSet<_> = k.linked.iter().cloned().collect();
    if linked != per_request {
        f.push("linked classes differ from per-request groups".into());
    }
    if k.pseudonyms.is_empty() {
        f.push("no pseudonyms held".into());
    }
    rows.push(row(&c, "links pseudonyms of one request only", f));

    let c = [la.clone(), pa.clone()];
    let k = collusion_closure(&c, snap)?;
    let la_k = collusion_closure(&[la.clone()], snap)?;
    let mut f = wrong_links(&k, &owners);
    let native: BTreeSet<&PseudonymRef> = k
        .pseudonyms
        .iter()
        .filter(|(_, t)| la_k.ticket_owners.contains_key(*t) && !la_k.exchanges.contains_key(*t))
        .map(|(p, _)| p)
        .collect();
    let linked: BTreeSet<&PseudonymRef> = k.id_links.keys().collect();
    if native.is_empty() {
        f.push("no native issuances in snapshot".into());
    }
    if !native.is_subset(&linked) {
        f.push(format!("{} native pseudonyms not identified", native.difference(&linked).count()));
    }
    rows.push(row(&c, "identities of native pseudonyms derivable", f));

    let c = [la.clone(), lb.clone()];
    let k = collusion_closure(&c, snap)?;
    let mut f = Vec::new();
    if !k.pseudonyms.is_empty() || !k.id_links.is_empty() || !k.linked.is_empty() {
        f.push(format!("{} identity links, {} linked classes", k.id_links.len(), k.linked.len()));
    }
    rows.push(row(&c, "no pseudonym information", f));

    let c = [pa.clone(), pb.clone()];
    let k = collusion_closure(&c, snap)?;
    let ka = collusion_closure(&[pa.clone()], snap)?;
    let kb = collusion_closure(&[pb.clone()], snap)?;
    let mut f = Vec::new();
    if !k.id_links.is_empty() {
        f.push(format!("{} identity links", k.id_links.len()));
    }
    let joint: BTreeSet<_> = k.linked.iter().cloned().collect();
    let union: BTreeSet<_> = ka.linked.iter().chain(&kb.linked).cloned().collect();
    if joint != union {
        f.push("joint linking exceeds the union of each side".into());
    }
    rows.push(row(&c, "nothing beyond each side's own request groups", f));

    let c = [la, lb, pa, pb];
    let k = collusion_closure(&c, snap)?;
    let mut f = wrong_links(&k, &owners);
    let unresolved = k.pseudonyms.keys().filter(|p| !k.id_links.contains_key(*p)).count();
    if unresolved > 0 {
        f.push(format!("{unresolved} pseudonyms not identified"));
    }
    if k.pseudonyms.is_empty() {
        f.push("no pseudonyms held".into());
    }
    rows.push(row(&c, "identities of all pseudonyms derivable, across domains", f));
    Ok(rows)
}
