//! Scenario files and the seeded event schedule they expand to.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use vpki_authority::DomainSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Ticket requests to an LTCA under a forged long-term certificate.
    FakeLtc,
    /// Pseudonym requests to a PCA presenting a forged ticket.
    FakeTicket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSpec {
    pub count: usize,
    /// Mean rate per attacker.
    pub requests_per_hour: f64,
    /// Attacker `i` uses `kinds[i % kinds.len()]`.
    #[serde(default = "both_kinds")]
    pub kinds: Vec<AttackKind>,
}

fn both_kinds() -> Vec<AttackKind> {
    vec![AttackKind::FakeLtc, AttackKind::FakeTicket]
}

impl Default for AttackerSpec {
    fn default() -> Self {
        Self {
            count: 0,
            requests_per_hour: 360.0,
            kinds: both_kinds(),
        }
    }
}

/// A hard kill of one server endpoint (`ltca-a`, `pca-a-1#1`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub at_seconds: f64,
    pub server: String,
}

fn default_workers() -> usize {
    16
}

fn default_sample() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    /// Vehicle `i` is registered in domain `i % domains.len()`.
    pub vehicles: usize,
    /// Mean pseudonym requests per vehicle and hour (Poisson arrivals).
    pub requests_per_hour: f64,
    pub pseudonyms_per_request: usize,
    pub duration_seconds: f64,
    pub domains: Vec<DomainSpec>,
    /// Share of requests made to a foreign domain's PCA.
    #[serde(default)]
    pub roaming_fraction: f64,
    #[serde(default)]
    pub attackers: AttackerSpec,
    #[serde(default)]
    pub faults: Vec<Fault>,
    /// Resolve-and-revoke actions spread evenly over the run.
    #[serde(default)]
    pub revocations: usize,
    /// Protocol time at the start of the run.
    #[serde(default)]
    pub start_time: u64,
    /// Scenario seconds per wall-clock second. Absent: events run back to
    /// back on a manual clock, with no pacing.
    #[serde(default)]
    pub time_scale: Option<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Share of issued pseudonyms the resolution monitor checks.
    #[serde(default = "default_sample")]
    pub resolution_sample: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid scenario: {0}")]
pub struct ScenarioInvalid(pub String);

fn finite_nonneg(name: &str, v: f64) -> Result<(), ScenarioInvalid> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ScenarioInvalid(format!("{name} must be a finite non-negative number")))
    }
}

impl Scenario {
    /// Desk-scale defaults: 200 vehicles, 6 requests/h, 100 pseudonyms,
    /// 10 minutes, one domain whose grid fits 100 pseudonyms per ticket.
    pub fn desk(seed: u64) -> Self {
        let mut domain = DomainSpec::new("a");
        domain.policy.ticket_interval_seconds = 6000;
        domain.policy.pseudonym_lifetime_seconds = 60;
        Self {
            seed,
            vehicles: 200,
            requests_per_hour: 6.0,
            pseudonyms_per_request: 100,
            duration_seconds: 600.0,
            domains: vec![domain],
            roaming_fraction: 0.0,
            attackers: AttackerSpec::default(),
            faults: Vec::new(),
            revocations: 0,
            start_time: 0,
            time_scale: None,
            workers: default_workers(),
            resolution_sample: default_sample(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioInvalid> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioInvalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioInvalid> {
        if !(self.duration_seconds.is_finite() && self.duration_seconds > 0.0) {
            return Err(ScenarioInvalid("duration must be positive".into()));
        }
        finite_nonneg("requests_per_hour", self.requests_per_hour)?;
        finite_nonneg("attackers.requests_per_hour", self.attackers.requests_per_hour)?;
        if !(0.0..=1.0).contains(&self.roaming_fraction) {
            return Err(ScenarioInvalid("roaming_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.resolution_sample) {
            return Err(ScenarioInvalid("resolution_sample must lie in [0, 1]".into()));
        }
        if let Some(scale) = self.time_scale {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(ScenarioInvalid("time_scale must be positive".into()));
            }
        }
        if self.domains.is_empty() {
            return Err(ScenarioInvalid("at least one domain".into()));
        }
        if self.roaming_fraction > 0.0 && self.domains.len() < 2 {
            return Err(ScenarioInvalid("roaming needs a second domain".into()));
        }
        if self.pseudonyms_per_request == 0 {
            return Err(ScenarioInvalid("pseudonyms_per_request must be positive".into()));
        }
        if self.workers == 0 {
            return Err(ScenarioInvalid("workers must be positive".into()));
        }
        if self.attackers.count > 0 && self.attackers.kinds.is_empty() {
            return Err(ScenarioInvalid("attackers need at least one kind".into()));
        }
        for d in &self.domains {
            d.policy
                .validate()
                .map_err(|e| ScenarioInvalid(format!("domain {}: {e}", d.name)))?;
            if d.pcas == 0 || d.pca_replicas == 0 {
                return Err(ScenarioInvalid(format!("domain {} needs a PCA", d.name)));
            }
            let slots = d.policy.ticket_interval_seconds / d.policy.pseudonym_lifetime_seconds;
            if self.pseudonyms_per_request as u64 > slots {
                return Err(ScenarioInvalid(format!(
                    "domain {}: {} pseudonyms do not fit a ticket period of {} slots",
                    d.name, self.pseudonyms_per_request, slots
                )));
            }
            if self.pseudonyms_per_request > d.policy.max_batch as usize {
                return Err(ScenarioInvalid(format!("domain {}: batch above max_batch", d.name)));
            }
        }
        for f in &self.faults {
            finite_nonneg("fault time", f.at_seconds)?;
        }
        Ok(())
    }

    pub fn domain_of(&self, vehicle: usize) -> usize {
        vehicle % self.domains.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum Action {
    /// Ticket and pseudonyms in the vehicle's home domain.
    Issue { vehicle: usize, pca: usize },
    /// Pseudonyms from a foreign domain's PCA.
    Roam { vehicle: usize, domain: usize, pca: usize },
    Attack { attacker: usize, kind: AttackKind },
    /// Resolve a random issued pseudonym (picked with `pick`) and revoke.
    Revoke { pick: u64 },
    Kill { fault: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Scenario seconds since the start of the run.
    pub at: f64,
    pub action: Action,
}

fn poisson_times(rng: &mut ChaCha20Rng, per_second: f64, duration: f64) -> Vec<f64> {
    if per_second <= 0.0 {
        return Vec::new();
    }
    let gap = Exp::new(per_second).expect("positive rate");
    let mut out = Vec::new();
    let mut t = gap.sample(rng);
    while t < duration {
        out.push(t);
        t += gap.sample(rng);
    }
    out
}

/// Arrival times of one attacker's open-loop stream.
pub fn attacker_times(seed: u64, attacker: usize, per_hour: f64, duration: f64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xa77a_c4e5 ^ (attacker as u64).rotate_left(32));
    poisson_times(&mut rng, per_hour / 3600.0, duration)
}

/// Expands a scenario into its time-ordered events. Same scenario, same
/// events.
pub fn schedule(s: &Scenario) -> Vec<Event> {
    let mut rng = ChaCha20Rng::seed_from_u64(s.seed);
    let mut events = Vec::new();
    let domains = s.domains.len();
    for v in 0..s.vehicles {
        let home = s.domain_of(v);
        for at in poisson_times(&mut rng, s.requests_per_hour / 3600.0, s.duration_seconds) {
            let action = if domains > 1 && rng.gen_bool(s.roaming_fraction) {
                let domain = (home + rng.gen_range(1..domains)) % domains;
                let pca = rng.gen_range(0..s.domains[domain].pcas);
                Action::Roam { vehicle: v, domain, pca }
            } else {
                let pca = rng.gen_range(0..s.domains[home].pcas);
                Action::Issue { vehicle: v, pca }
            };
            events.push(Event { at, action });
        }
    }
    let a = &s.attackers;
    for i in 0..a.count {
        let kind = a.kinds[i % a.kinds.len()];
        for at in attacker_times(s.seed, i, a.requests_per_hour, s.duration_seconds) {
            events.push(Event {
                at,
                action: Action::Attack { attacker: i, kind },
            });
        }
    }
    for k in 0..s.revocations {
        let at = s.duration_seconds * (k as f64 + 0.5) / s.revocations as f64;
        events.push(Event {
            at,
            action: Action::Revoke { pick: rng.gen() },
        });
    }
    for (i, f) in s.faults.iter().enumerate() {
        events.push(Event {
            at: f.at_seconds,
            action: Action::Kill { fault: i },
        });
    }
    events.sort_by(|x, y| x.at.total_cmp(&y.at).then(x.action.cmp(&y.action)));
    events
}
