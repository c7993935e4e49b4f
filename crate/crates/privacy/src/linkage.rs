//! Linking pseudonyms by their successive lifetimes, and scoring the result
//! against ground truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transcript::{PseudonymRef, Transcript};

/// The linker's output: every observed pseudonym in exactly one chain,
/// each chain in lifetime order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub chains: Vec<Vec<PseudonymRef>>,
}

impl Partition {
    /// Consecutive pairs the linker claims belong to one vehicle.
    pub fn links(&self) -> impl Iterator<Item = (&PseudonymRef, &PseudonymRef)> {
        self.chains.iter().flat_map(|c| c.windows(2).map(|w| (&w[0], &w[1])))
    }

    pub fn link_count(&self) -> usize {
        self.chains.iter().map(|c| c.len().saturating_sub(1)).sum()
    }
}

/// Greedy chaining: a pseudonym ending at `t` is linked to the one starting
/// at `t` when it is the only pseudonym starting then and the only one
/// ending then. Any ambiguity ends the chain.
pub fn link_by_lifetime(transcript: &Transcript) -> Partition {
    let obs = transcript.observations();
    let mut starting: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut ending: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, o) in obs.iter().enumerate() {
        starting.entry(o.start).or_default().push(i);
        *ending.entry(o.end).or_default() += 1;
    }
    let mut next = vec![None; obs.len()];
    let mut has_prev = vec![false; obs.len()];
    for (i, o) in obs.iter().enumerate() {
        if let Some([j]) = starting.get(&o.end).map(Vec::as_slice) {
            if ending[&o.end] == 1 {
                next[i] = Some(*j);
                has_prev[*j] = true;
            }
        }
    }
    // Observations are sorted by start, so heads come out in time order.
    let chains = (0..obs.len())
        .filter(|&i| !has_prev[i])
        .map(|head| {
            let mut chain = vec![obs[head].pseudonym.clone()];
            let mut at = head;
            while let Some(n) = next[at] {
                chain.push(obs[n].pseudonym.clone());
                at = n;
            }
            chain
        })
        .collect();
    Partition { chains }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("no ground truth for {0}")]
    MissingGroundTruth(PseudonymRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageScore {
    pub proposed_links: usize,
    pub correct_links: usize,
    /// Pairs where one pseudonym of a vehicle ends exactly when its next begins.
    pub true_links: usize,
    /// 1.0 when nothing was proposed.
    pub precision: f64,
    /// 1.0 when there was nothing to find.
    pub recall: f64,
    /// Pseudonyms starting at each distinct start instant, averaged.
    pub mean_anonymity_set: f64,
    pub min_anonymity_set: usize,
    pub switch_instants: usize,
}

/// Every vehicle's back-to-back pseudonym pairs.
pub fn true_links(transcript: &Transcript) -> Result<BTreeSet<(PseudonymRef, PseudonymRef)>, ScoreError> {
    let owners = transcript.owners();
    let mut by_vehicle: BTreeMap<&str, Vec<(u64, u64, &PseudonymRef)>> = BTreeMap::new();
    for o in transcript.observations() {
        let v = owners
            .get(&o.pseudonym)
            .ok_or_else(|| ScoreError::MissingGroundTruth(o.pseudonym.clone()))?;
        by_vehicle.entry(v).or_default().push((o.start, o.end, &o.pseudonym));
    }
    let mut links = BTreeSet::new();
    for seq in by_vehicle.values_mut() {
        seq.sort();
        for w in seq.windows(2) {
            if w[0].1 == w[1].0 {
                links.insert((w[0].2.clone(), w[1].2.clone()));
            }
        }
    }
    Ok(links)
}

pub fn anonymity_sets(transcript: &Transcript) -> BTreeMap<u64, usize> {
    let mut sets = BTreeMap::new();
    for o in transcript.observations() {
        *sets.entry(o.start).or_insert(0) += 1;
    }
    sets
}

pub fn score_linkage(partition: &Partition, transcript: &Transcript) -> Result<LinkageScore, ScoreError> {
    let truth = true_links(transcript)?;
    let proposed = partition.link_count();
    let correct = partition
        .links()
        .filter(|(a, b)| truth.contains(&((*a).clone(), (*b).clone())))
        .count();
    let sets = anonymity_sets(transcript);
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(LinkageScore {
        proposed_links: proposed,
        correct_links: correct,
        true_links: truth.len(),
        precision: ratio(correct, proposed),
        recall: ratio(correct, truth.len()),
        mean_anonymity_set: if sets.is_empty() {
            0.0
        } else {
            sets.values().sum::<usize>() as f64 / sets.len() as f64
        },
        min_anonymity_set: sets.values().copied().min().unwrap_or(0),
        switch_instants: sets.len(),
    })
}
