//! What an eavesdropper sees: pseudonym serials and lifetimes, nothing else.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Globally unique pseudonym name: serials are only unique per issuer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PseudonymRef {
    pub issuer: String,
    pub serial: u64,
}

impl PseudonymRef {
    pub fn new(issuer: impl Into<String>, serial: u64) -> Self {
        Self {
            issuer: issuer.into(),
            serial,
        }
    }
}

impl fmt::Display for PseudonymRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.issuer, self.serial)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub pseudonym: PseudonymRef,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Owner {
    pub pseudonym: PseudonymRef,
    pub vehicle: String,
}

/// Observations sorted by lifetime start, plus the held-out true owners
/// used only for scoring.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    observations: Vec<Observation>,
    #[serde(default)]
    ground_truth: Vec<Owner>,
}

fn order(o: &Observation) -> (u64, u64, &PseudonymRef) {
    (o.start, o.end, &o.pseudonym)
}

impl Transcript {
    pub fn new(mut observations: Vec<Observation>, ground_truth: Vec<Owner>) -> Self {
        observations.sort_by(|a, b| order(a).cmp(&order(b)));
        Self {
            observations,
            ground_truth,
        }
    }

    pub fn observe(&mut self, pseudonym: PseudonymRef, start: u64, end: u64, vehicle: Option<&str>) {
        let obs = Observation { pseudonym, start, end };
        let at = self.observations.partition_point(|o| order(o) <= order(&obs));
        if let Some(v) = vehicle {
            self.ground_truth.push(Owner {
                pseudonym: obs.pseudonym.clone(),
                vehicle: v.to_string(),
            });
        }
        self.observations.insert(at, obs);
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn ground_truth(&self) -> &[Owner] {
        &self.ground_truth
    }

    pub fn owners(&self) -> BTreeMap<&PseudonymRef, &str> {
        self.ground_truth
            .iter()
            .map(|o| (&o.pseudonym, o.vehicle.as_str()))
            .collect()
    }

    /// The same observations with the ground truth removed.
    pub fn without_ground_truth(&self) -> Self {
        Self {
            observations: self.observations.clone(),
            ground_truth: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}
