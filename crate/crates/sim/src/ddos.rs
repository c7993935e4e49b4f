//! Legitimate throughput under a growing crowd of attackers.
//!
//! Legitimate vehicles run closed-loop (next request as soon as the last
//! one returns); attackers run open-loop at their Poisson rates. Each
//! phase holds the attacker count fixed and counts served requests.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use vpki_authority::{DomainSpec, RuntimeConfig};
use vpki_core::wire::Transport;

use crate::attack::{fire, AttackOutcome};
use crate::run::{plan_request, SimError, Simulation};
use crate::scenario::{attacker_times, AttackKind, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampConfig {
    pub seed: u64,
    /// Closed-loop legitimate vehicles.
    pub clients: usize,
    pub pseudonyms: usize,
    /// Attacker count of each phase, in order.
    pub attackers: Vec<usize>,
    pub phase_seconds: f64,
    /// Mean rate of one attacker.
    pub requests_per_hour: f64,
    /// Multiplier on every attacker's rate, so that a desk-sized crowd
    /// offers the load of a larger one.
    pub compression: f64,
    /// Threads delivering attack frames.
    pub senders: usize,
}

impl RampConfig {
    /// 0 to 2000 attackers at 360/h each, compressed 5x so the largest
    /// phase offers what 10,000 uncompressed attackers would.
    pub fn desk(seed: u64) -> Self {
        Self {
            seed,
            clients: 8,
            pseudonyms: 10,
            attackers: vec![0, 500, 1000, 1500, 2000],
            phase_seconds: 8.0,
            requests_per_hour: 360.0,
            compression: 5.0,
            senders: 192,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampPoint {
    pub attackers: usize,
    /// Legitimate issuances completed.
    pub served: usize,
    pub failed: usize,
    pub served_per_second: f64,
    /// Attack requests scheduled for the phase and actually sent.
    pub attack_offered: usize,
    pub attack_sent: usize,
    pub attack_outcomes: BTreeMap<AttackOutcome, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampReport {
    pub config: RampConfig,
    pub points: Vec<RampPoint>,
}

impl RampReport {
    pub fn throughput(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.served_per_second).collect()
    }

    /// No phase serves more than the one before it, give or take `noise`
    /// times the attack-free throughput.
    pub fn non_increasing(&self, noise: f64) -> bool {
        let x = self.throughput();
        let Some(&base) = x.first() else { return true };
        x.windows(2).all(|w| w[1] <= w[0] + noise * base)
    }

    /// Relative throughput loss at the largest crowd.
    pub fn drop_at_max(&self) -> f64 {
        let x = self.throughput();
        match (x.first(), x.last()) {
            (Some(&first), Some(&last)) if first > 0.0 => 1.0 - last / first,
            _ => 0.0,
        }
    }

    pub fn attack_outcomes(&self) -> BTreeMap<AttackOutcome, usize> {
        let mut all = BTreeMap::new();
        for p in &self.points {
            for (o, n) in &p.attack_outcomes {
                *all.entry(*o).or_insert(0) += n;
            }
        }
        all
    }

    /// `attackers served_per_second` rows for plotting.
    pub fn write_dat(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "# attackers served_per_second")?;
        for p in &self.points {
            writeln!(out, "{} {:.3}", p.attackers, p.served_per_second)?;
        }
        Ok(())
    }
}

fn ramp_scenario(cfg: &RampConfig) -> Scenario {
    let mut domain = DomainSpec::new("a");
    domain.policy.ticket_interval_seconds = cfg.pseudonyms as u64 * 60;
    domain.policy.pseudonym_lifetime_seconds = 60;
    let mut s = Scenario::desk(cfg.seed);
    s.vehicles = cfg.clients;
    s.requests_per_hour = 0.0;
    s.pseudonyms_per_request = cfg.pseudonyms;
    s.domains = vec![domain];
    s.start_time = 1_000;
    s
}

struct Shot {
    at: Duration,
    kind: AttackKind,
    frame: Vec<u8>,
}

/// Pre-builds a phase's attack frames so senders spend no time signing.
fn build_shots(sim: &Simulation, cfg: &RampConfig, phase: usize, attackers: usize) -> Vec<Shot> {
    let forger = &sim.forgers[0];
    let now = sim.clock().now();
    let rate = cfg.requests_per_hour * cfg.compression;
    let kinds = [AttackKind::FakeLtc, AttackKind::FakeTicket];
    let seed = cfg.seed ^ ((phase as u64 + 1) << 40);
    let mut shots = Vec::new();
    for a in 0..attackers {
        let kind = kinds[a % 2];
        for (k, t) in attacker_times(seed, a, rate, cfg.phase_seconds).into_iter().enumerate() {
            let nonce = seed ^ ((a as u64) << 20) ^ k as u64;
            shots.push(Shot {
                at: Duration::from_secs_f64(t),
                kind,
                frame: forger.frame(kind, a as u64, nonce, now),
            });
        }
    }
    shots.sort_by_key(|s| s.at);
    shots
}

/// Runs the whole ramp on a fresh single-domain deployment.
pub fn ddos_ramp(cfg: &RampConfig) -> Result<RampReport, SimError> {
    let sim = Simulation::with_runtime(ramp_scenario(cfg), RuntimeConfig::default())?;
    // Unmeasured warm-up so the first phase does not pay for cold caches.
    run_phase(&sim, cfg, Vec::new(), Duration::from_secs(1));
    let mut points = Vec::new();
    for (phase, &attackers) in cfg.attackers.iter().enumerate() {
        let shots = build_shots(&sim, cfg, phase, attackers);
        let offered = shots.len();
        let mut p = run_phase(&sim, cfg, shots, Duration::from_secs_f64(cfg.phase_seconds));
        p.attackers = attackers;
        p.attack_offered = offered;
        log::info!("{attackers} attackers: {:.2} served/s", p.served_per_second);
        points.push(p);
    }
    Ok(RampReport {
        config: cfg.clone(),
        points,
    })
}

fn run_phase(sim: &Simulation, cfg: &RampConfig, shots: Vec<Shot>, length: Duration) -> RampPoint {
    let d = &sim.plan().domains[0];
    let pca = d.pcas[0].id.clone();
    let policy = d.policy;
    let now = sim.clock().now();
    let ltca_t = sim.deployment().transport(&d.ltca.id).expect("started");
    let pca_t = sim.deployment().transport(&pca).expect("started");

    let served = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let next_shot = AtomicUsize::new(0);
    let sent = AtomicUsize::new(0);
    let outcomes = Mutex::new(BTreeMap::new());
    let over = AtomicBool::new(false);
    let origin = Instant::now();

    thread::scope(|scope| {
        for v in &sim.vehicles {
            let (served, failed, over, pca) = (&served, &failed, &over, &pca);
            scope.spawn(move || {
                let mut v = v.lock();
                while !over.load(Ordering::Relaxed) {
                    let sub = plan_request(&policy, now, v.next_free, cfg.pseudonyms);
                    v.next_free = sub.end();
                    v.client.pregenerate(cfg.pseudonyms);
                    let ok = v
                        .client
                        .acquire_ticket(pca, sub)
                        .and_then(|_| v.client.acquire_pseudonyms(pca, sub, cfg.pseudonyms));
                    v.client.take_issued();
                    if over.load(Ordering::Relaxed) {
                        break;
                    }
                    match ok {
                        Ok(_) => served.fetch_add(1, Ordering::Relaxed),
                        Err(_) => failed.fetch_add(1, Ordering::Relaxed),
                    };
                }
            });
        }
        for _ in 0..cfg.senders.min(shots.len()) {
            let (shots, next_shot, sent, outcomes, over) = (&shots, &next_shot, &sent, &outcomes, &over);
            let (ltca_t, pca_t) = (&ltca_t, &pca_t);
            scope.spawn(move || {
                let mut tally: BTreeMap<AttackOutcome, usize> = BTreeMap::new();
                loop {
                    let i = next_shot.fetch_add(1, Ordering::Relaxed);
                    let Some(shot) = shots.get(i) else { break };
                    if let Some(wait) = (origin + shot.at).checked_duration_since(Instant::now()) {
                        thread::sleep(wait);
                    }
                    if over.load(Ordering::Relaxed) {
                        break;
                    }
                    let t: &std::sync::Arc<dyn Transport> = match shot.kind {
                        AttackKind::FakeLtc => ltca_t,
                        AttackKind::FakeTicket => pca_t,
                    };
                    *tally.entry(fire(t, shot.kind, &shot.frame).0).or_insert(0) += 1;
                    sent.fetch_add(1, Ordering::Relaxed);
                }
                let mut all = outcomes.lock();
                for (o, n) in tally {
                    *all.entry(o).or_insert(0) += n;
                }
            });
        }
        thread::sleep(length);
        over.store(true, Ordering::Relaxed);
    });

    let served = served.into_inner();
    RampPoint {
        attackers: 0,
        served,
        failed: failed.into_inner(),
        served_per_second: served as f64 / length.as_secs_f64(),
        attack_offered: 0,
        attack_sent: sent.into_inner(),
        attack_outcomes: outcomes.into_inner(),
    }
}
