//! Drives a scenario against an in-process deployment.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::hash::{Hash, Hasher};
use std::io;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam::channel::{self, Receiver};
use crossbeam::sync::WaitGroup;
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use vpki_authority::deploy::{DomainPlan, DIRECTORY_ID};
use vpki_authority::{Deployment, DeploymentPlan, DeploymentSpec, RuntimeConfig};
use vpki_core::messages::{ResolveRequest, ResolveResponse};
use vpki_core::rpc::Reject;
use vpki_core::snapshot::DeploymentSnapshot;
use vpki_core::time::ManualClock;
use vpki_core::{CaId, Clock, DomainPolicy, Interval, KeyPair, Role, SerialNumber, TimePoint};
use vpki_privacy::{PseudonymRef, Transcript};
use vpki_vehicle::{enroll, ClientError, Network, VehicleClient};

use crate::attack::{fire, AttackOutcome, Forger};
use crate::metrics::{self, MetricRecord, Op, OpSummary, Recorder, OK};
use crate::monitors::{pool_overlap, sybil_scan, CrlTracker, Violation};
use crate::scenario::{schedule, Action, Event, Scenario, ScenarioInvalid};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    ScenarioInvalid(#[from] ScenarioInvalid),
    #[error("could not start services: {0}")]
    ServiceSpawnFailure(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Protocol time advancing with the wall clock, `scale` times faster.
#[derive(Debug)]
pub struct ScaledClock {
    start: TimePoint,
    scale: f64,
    origin: Mutex<Instant>,
}

impl ScaledClock {
    pub fn new(start: TimePoint, scale: f64) -> Self {
        Self {
            start,
            scale,
            origin: Mutex::new(Instant::now()),
        }
    }

    /// Makes the current instant protocol time `start` again.
    pub fn restart(&self) {
        *self.origin.lock() = Instant::now();
    }
}

impl Clock for ScaledClock {
    fn now(&self) -> TimePoint {
        self.start + (self.origin.lock().elapsed().as_secs_f64() * self.scale) as u64
    }
}

enum SimClock {
    Paced(Arc<ScaledClock>),
    Unpaced(Arc<ManualClock>),
}

impl SimClock {
    fn shared(&self) -> Arc<dyn Clock> {
        match self {
            SimClock::Paced(c) => c.clone(),
            SimClock::Unpaced(c) => c.clone(),
        }
    }
}

/// A pseudonym some vehicle accepted, with its true owner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuedPseudonym {
    pub issuer: String,
    pub serial: u64,
    pub start: u64,
    pub end: u64,
    pub vehicle: String,
    pub home: String,
}

impl IssuedPseudonym {
    pub fn reference(&self) -> PseudonymRef {
        PseudonymRef::new(&self.issuer, self.serial)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub events: usize,
    pub wall_seconds: f64,
    pub records: Vec<MetricRecord>,
    pub violations: Vec<Violation>,
    pub resolution_checked: usize,
    pub attacks: BTreeMap<AttackOutcome, usize>,
    pub issued: Vec<IssuedPseudonym>,
    pub transcript: Transcript,
    pub snapshot: DeploymentSnapshot,
}

impl MetricsReport {
    pub fn summary(&self) -> BTreeMap<Op, OpSummary> {
        metrics::summarize(&self.records)
    }

    pub fn of(&self, op: Op) -> impl Iterator<Item = &MetricRecord> {
        self.records.iter().filter(move |r| r.op == op)
    }

    /// How often each (op, outcome) pair occurred; latencies aside, this
    /// is what a seeded run reproduces.
    pub fn outcomes(&self) -> BTreeMap<(Op, String), usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry((r.op, r.outcome.clone())).or_insert(0) += 1;
        }
        m
    }

    /// Writes latencies.csv, summary.json, cdf_*.dat, transcript.json,
    /// violations.json and one snapshot file per authority instance.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        metrics::export(&self.records, metrics::Format::Csv, dir)?;
        metrics::export(&self.records, metrics::Format::Json, dir)?;
        let json = |v: &dyn erased::Json| v.to_json();
        fs::write(dir.join("transcript.json"), json(&self.transcript)?)?;
        fs::write(dir.join("violations.json"), json(&self.violations)?)?;
        let snaps = dir.join("snapshots");
        fs::create_dir_all(&snaps)?;
        for l in &self.snapshot.ltcas {
            fs::write(snaps.join(format!("{}.json", l.ca_id)), json(l)?)?;
        }
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &self.snapshot.pcas {
            let r = seen.entry(&p.ca_id).or_insert(0);
            fs::write(snaps.join(format!("{}.r{r}.json", p.ca_id)), json(p)?)?;
            *r += 1;
        }
        Ok(())
    }
}

mod erased {
    use std::io;

    pub trait Json {
        fn to_json(&self) -> io::Result<String>;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> io::Result<String> {
            serde_json::to_string_pretty(self).map_err(io::Error::other)
        }
    }
}

pub(crate) struct SimVehicle {
    pub(crate) name: String,
    pub(crate) home: usize,
    pub(crate) client: VehicleClient,
    /// Ticket periods before this instant are already spent.
    pub(crate) next_free: TimePoint,
    held: Vec<(SerialNumber, Interval)>,
}

/// The pseudonym sub-interval for a request made at `now`: `n` slots from
/// the current slot, moved to the next ticket period when they do not fit.
pub fn plan_request(policy: &DomainPolicy, now: TimePoint, next_free: TimePoint, n: usize) -> Interval {
    let (tau, gamma, e) = (
        policy.pseudonym_lifetime_seconds,
        policy.ticket_interval_seconds,
        policy.grid_epoch,
    );
    let down = |t: TimePoint, step: u64| e + (t.max(e) - e) / step * step;
    let up = |t: TimePoint, step: u64| e + (t.max(e) - e).div_ceil(step) * step;
    let mut start = down(now, tau).max(up(next_free, tau));
    let period_end = down(start, gamma) + gamma;
    let len = n as u64 * tau;
    if start + len > period_end {
        start = period_end;
    }
    Interval::new(start, start + len).expect("n > 0")
}

fn seeded(seed: u64, salt: &impl Hash) -> ChaCha20Rng {
    let mut h = DefaultHasher::new();
    (seed, salt).hash(&mut h);
    ChaCha20Rng::seed_from_u64(h.finish())
}

fn undelivered(e: &ClientError) -> bool {
    matches!(e, ClientError::Call(c) if c.is_undelivered())
}

/// Runs `f` once more if the first attempt never reached a server. A
/// request cut off mid-flight may have been served, so it is not resent.
fn with_retry<T>(rec: &mut Recorder, op: Op, server: &str, mut f: impl FnMut() -> Result<T, ClientError>) -> Result<T, ClientError> {
    match rec.time(op, server, &mut f) {
        Err(e) if undelivered(&e) => rec.time(op, server, f),
        r => r,
    }
}

struct Shared {
    issued: Mutex<Vec<IssuedPseudonym>>,
    violations: Mutex<Vec<Violation>>,
    crls: Mutex<CrlTracker>,
    attacks: Mutex<BTreeMap<AttackOutcome, usize>>,
}

pub struct Simulation {
    scenario: Scenario,
    plan: DeploymentPlan,
    clock: SimClock,
    deployment: Deployment,
    pub(crate) vehicles: Vec<Mutex<SimVehicle>>,
    pub(crate) forgers: Vec<Forger>,
    shared: Shared,
    killed: Mutex<Vec<String>>,
}

impl Simulation {
    /// Starts the deployment and enrolls the fleet.
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        Self::with_runtime(scenario, RuntimeConfig::default())
    }

    pub fn with_runtime(scenario: Scenario, runtime: RuntimeConfig) -> Result<Self, SimError> {
        scenario.validate()?;
        let plan = DeploymentPlan::generate(&DeploymentSpec {
            domains: scenario.domains.clone(),
            seed: Some(scenario.seed),
        })
        .map_err(|e| ScenarioInvalid(e.to_string()))?;
        let clock = match scenario.time_scale {
            Some(scale) => SimClock::Paced(Arc::new(ScaledClock::new(scenario.start_time, scale))),
            None => SimClock::Unpaced(Arc::new(ManualClock::new(scenario.start_time))),
        };
        let deployment = Deployment::start(&plan, clock.shared(), runtime);
        let names: BTreeSet<String> = deployment.endpoints().iter().map(|e| e.name().to_string()).collect();
        if let Some(f) = scenario.faults.iter().find(|f| !names.contains(&f.server)) {
            return Err(ScenarioInvalid(format!("fault names unknown server {}", f.server)).into());
        }

        let mut network = Network::new();
        network.add(
            CaId::new(DIRECTORY_ID).expect("valid id"),
            deployment.directory_endpoint.clone(),
            DomainPolicy::default(),
        );
        for d in &plan.domains {
            let mut add = |id: &CaId| network.add(id.clone(), deployment.transport(id).expect("started"), d.policy);
            add(&d.ltca.id);
            d.pcas.iter().for_each(|p| add(&p.id));
        }

        let shared_clock = clock.shared();
        let mut vehicles = Vec::with_capacity(scenario.vehicles);
        for v in 0..scenario.vehicles {
            let home = scenario.domain_of(v);
            let d = &plan.domains[home];
            let name = format!("vehicle-{v}");
            let mut rng = seeded(scenario.seed, &name);
            let key = KeyPair::generate(&mut rng);
            let ltc = enroll(
                &*deployment.transport(&d.ltca.id).expect("started"),
                &d.ltca.key.public,
                &*shared_clock,
                d.policy.clock_skew_seconds,
                &key,
                &name,
                Interval::new(0, 1 << 40).expect("non-empty"),
                None,
            )
            .map_err(|e| SimError::ServiceSpawnFailure(format!("enrolling {name}: {e}")))?;
            let client = VehicleClient::new(key, ltc, plan.trust.clone(), network.clone(), shared_clock.clone(), rng);
            vehicles.push(Mutex::new(SimVehicle {
                name,
                home,
                client,
                next_free: 0,
                held: Vec::new(),
            }));
        }
        let forgers = plan
            .domains
            .iter()
            .enumerate()
            .map(|(i, d)| Forger::new(d.ltca.id.clone(), d.pcas[0].id.clone(), scenario.seed ^ i as u64))
            .collect();
        Ok(Self {
            scenario,
            plan,
            clock,
            deployment,
            vehicles,
            forgers,
            shared: Shared {
                issued: Mutex::new(Vec::new()),
                violations: Mutex::new(Vec::new()),
                crls: Mutex::new(CrlTracker::default()),
                attacks: Mutex::new(BTreeMap::new()),
            },
            killed: Mutex::new(Vec::new()),
        })
    }

    pub fn plan(&self) -> &DeploymentPlan {
        &self.plan
    }

    pub fn deployment(&self) -> &Deployment {
        &self.deployment
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        self.clock.shared()
    }

    fn domain_of_pca(&self, pca: &str) -> Option<&DomainPlan> {
        self.plan.domains.iter().find(|d| d.pcas.iter().any(|p| p.id.as_str() == pca))
    }

    /// Asks the RA of the pseudonym's domain who obtained it.
    pub fn resolve(&self, issuer: &str, serial: u64, revoke: bool) -> Result<ResolveResponse, Reject> {
        let d = self
            .domain_of_pca(issuer)
            .ok_or_else(|| Reject::new(vpki_core::messages::ErrorCode::UnknownIssuer, issuer))?;
        let ra = &self.deployment.domain(&d.name).expect("started").ra;
        ra.resolve(&ResolveRequest {
            pseudonym_issuer: CaId::new(issuer).map_err(|_| Reject::new(vpki_core::messages::ErrorCode::BadRequest, issuer))?,
            pseudonym_serial: SerialNumber(serial),
            justification: "simulation audit".into(),
            revoke_pseudonyms: revoke,
            revoke_ltc: false,
        })
    }

    /// Executes the schedule, then runs the end-of-run monitors.
    pub fn execute(&mut self) -> Result<MetricsReport, SimError> {
        let events = schedule(&self.scenario);
        let began = Instant::now();
        let origin = Instant::now();
        if let SimClock::Paced(c) = &self.clock {
            c.restart();
        }
        let attackers = self.scenario.attackers.count > 0;
        let this = &*self;
        let buffers = thread::scope(|scope| {
            let (tx, rx) = channel::unbounded::<(Event, WaitGroup)>();
            let (atx, arx) = channel::unbounded::<(Event, WaitGroup)>();
            let mut handles = Vec::new();
            for _ in 0..this.scenario.workers {
                let rx = rx.clone();
                handles.push(scope.spawn(move || this.work(rx, origin)));
            }
            if attackers {
                for _ in 0..this.attack_workers() {
                    let arx = arx.clone();
                    handles.push(scope.spawn(move || this.work(arx, origin)));
                }
            }
            drop((rx, arx));
            this.dispatch(&events, origin, |ev, wg| {
                let to = if matches!(ev.action, Action::Attack { .. }) { &atx } else { &tx };
                to.send((ev, wg)).expect("workers alive");
            });
            drop((tx, atx));
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect::<Vec<_>>()
        });
        let records = metrics::merge(buffers);
        let mut report = self.finish(records)?;
        report.events = events.len();
        report.wall_seconds = began.elapsed().as_secs_f64();
        Ok(report)
    }

    fn attack_workers(&self) -> usize {
        (self.scenario.attackers.count / 16).clamp(4, 64)
    }

    fn dispatch(&self, events: &[Event], origin: Instant, mut send: impl FnMut(Event, WaitGroup)) {
        match &self.clock {
            SimClock::Paced(_) => {
                let scale = self.scenario.time_scale.expect("paced");
                let wg = WaitGroup::new();
                for ev in events {
                    let due = origin + Duration::from_secs_f64(ev.at / scale);
                    if let Some(wait) = due.checked_duration_since(Instant::now()) {
                        thread::sleep(wait);
                    }
                    match ev.action {
                        Action::Kill { fault } => self.kill(fault),
                        _ => send(*ev, wg.clone()),
                    }
                }
            }
            SimClock::Unpaced(clock) => {
                // Events of one window run concurrently; the clock then jumps.
                // A window stays well inside every domain's skew allowance.
                let window = self.scenario.domains.iter().map(|d| d.policy.clock_skew_seconds).min().unwrap_or(300) as f64 / 5.0;
                let mut wg = WaitGroup::new();
                let mut window_end = window;
                for ev in events {
                    if ev.at >= window_end {
                        wg.wait();
                        wg = WaitGroup::new();
                        window_end = (ev.at / window).floor() * window + window;
                    }
                    clock.advance_to(self.scenario.start_time + ev.at as u64);
                    match ev.action {
                        Action::Kill { fault } => self.kill(fault),
                        _ => send(*ev, wg.clone()),
                    }
                }
                wg.wait();
                clock.advance_to(self.scenario.start_time + self.scenario.duration_seconds as u64);
            }
        }
    }

    fn kill(&self, fault: usize) {
        let name = &self.scenario.faults[fault].server;
        if let Some(e) = self.deployment.endpoints().into_iter().find(|e| e.name() == name) {
            log::info!("killing {name}");
            e.kill();
            self.killed.lock().push(name.clone());
        }
    }

    fn work(&self, rx: Receiver<(Event, WaitGroup)>, origin: Instant) -> Vec<MetricRecord> {
        let mut rec = Recorder::new(origin);
        for (ev, _done) in rx.iter() {
            let now = self.scenario.start_time + ev.at as u64;
            match ev.action {
                Action::Issue { vehicle, pca } => self.issue(&mut rec, vehicle, pca, now),
                Action::Roam { vehicle, domain, pca } => self.roam(&mut rec, vehicle, domain, pca, now),
                Action::Attack { attacker, kind } => self.attack(&mut rec, attacker, kind, ev.at),
                Action::Revoke { pick } => self.revoke(&mut rec, pick),
                Action::Kill { .. } => {}
            }
        }
        rec.into_records()
    }

    fn accept(&self, v: &mut SimVehicle) {
        let home = self.plan.domains[v.home].ltca.id.to_string();
        let mut issued = self.shared.issued.lock();
        for p in v.client.take_issued() {
            v.held.push((p.serial, p.interval));
            issued.push(IssuedPseudonym {
                issuer: p.issuer.to_string(),
                serial: p.serial.0,
                start: p.interval.start(),
                end: p.interval.end(),
                vehicle: v.name.clone(),
                home: home.clone(),
            });
        }
    }

    fn issue(&self, rec: &mut Recorder, vehicle: usize, pca: usize, now: TimePoint) {
        let n = self.scenario.pseudonyms_per_request;
        let mut v = self.vehicles[vehicle].lock();
        let d = &self.plan.domains[v.home];
        let pca = &d.pcas[pca].id;
        let sub = plan_request(&d.policy, now, v.next_free, n);
        v.next_free = d.policy.ticket_interval(&sub).expect("after epoch").end();
        v.client.pregenerate(n);

        let t0 = rec.now_us();
        let ltca = d.ltca.id.as_str();
        let result = with_retry(rec, Op::Ticket, ltca, || v.client.acquire_ticket(pca, sub))
            .and_then(|_| with_retry(rec, Op::Pseudonyms, pca.as_str(), || v.client.acquire_pseudonyms(pca, sub, n)));
        self.close_issuance(rec, &mut v, pca.as_str(), t0, result);
    }

    fn roam(&self, rec: &mut Recorder, vehicle: usize, domain: usize, pca: usize, now: TimePoint) {
        let n = self.scenario.pseudonyms_per_request;
        let mut v = self.vehicles[vehicle].lock();
        let home = &self.plan.domains[v.home];
        let f = &self.plan.domains[domain];
        let pca = &f.pcas[pca].id;
        let sub = plan_request(&f.policy, now, v.next_free, n);
        let foreign_period = f.policy.ticket_interval(&sub).expect("after epoch");
        let home_period = home.policy.ticket_interval(&foreign_period).expect("after epoch");
        v.next_free = home_period.end().max(foreign_period.end());
        v.client.pregenerate(n);

        let t0 = rec.now_us();
        let result = with_retry(rec, Op::ForeignTicket, home.ltca.id.as_str(), || {
            v.client.roam_foreign_ticket(&f.ltca.id, sub)
        })
        .and_then(|_| with_retry(rec, Op::Exchange, f.ltca.id.as_str(), || v.client.roam_exchange(pca, sub)))
        .and_then(|_| with_retry(rec, Op::Pseudonyms, pca.as_str(), || v.client.acquire_pseudonyms(pca, sub, n)));
        self.close_issuance(rec, &mut v, pca.as_str(), t0, result);
    }

    fn close_issuance(&self, rec: &mut Recorder, v: &mut SimVehicle, pca: &str, t0: u64, result: Result<usize, ClientError>) {
        let outcome = match &result {
            Ok(_) => OK.to_string(),
            Err(e) => metrics::outcome_label(e),
        };
        rec.push(Op::Issuance, pca, t0, rec.now_us(), outcome);
        if result.is_ok() {
            self.accept(v);
        }
    }

    fn attack(&self, rec: &mut Recorder, attacker: usize, kind: crate::scenario::AttackKind, at: f64) {
        let forger = &self.forgers[attacker % self.forgers.len()];
        let target = forger.target(kind);
        let Some(transport) = self.deployment.transport(target) else { return };
        let mut h = DefaultHasher::new();
        (self.scenario.seed, attacker, at.to_bits()).hash(&mut h);
        let nonce = h.finish();
        let frame = forger.frame(kind, attacker as u64, nonce, self.clock.shared().now());
        let start = rec.now_us();
        let (outcome, code) = fire(&transport, kind, &frame);
        let label = match code {
            Some(c) => c.to_string(),
            None => format!("{outcome:?}").to_lowercase(),
        };
        rec.push(Op::Attack, target.as_str(), start, rec.now_us(), label);
        *self.shared.attacks.lock().entry(outcome).or_insert(0) += 1;
    }

    fn revoke(&self, rec: &mut Recorder, pick: u64) {
        let target = {
            let issued = self.shared.issued.lock();
            if issued.is_empty() {
                return;
            }
            issued[(pick % issued.len() as u64) as usize].clone()
        };
        let start = rec.now_us();
        let result = self.resolve(&target.issuer, target.serial, true);
        let outcome = match &result {
            Ok(_) => OK.to_string(),
            Err(r) => r.code.to_string(),
        };
        rec.push(Op::Resolve, &target.issuer, start, rec.now_us(), outcome);
        if let Some(v) = check_resolution(&target, result) {
            self.shared.violations.lock().push(v);
        }
        self.observe_crls(&target.issuer);
    }

    fn observe_crls(&self, issuer: &str) {
        let Some(g) = self.deployment.domains.iter().flat_map(|d| &d.pcas).find(|g| g.id.as_str() == issuer) else {
            return;
        };
        let mut tracker = self.shared.crls.lock();
        for (r, pca) in g.replicas.iter().enumerate() {
            if let Some(v) = tracker.observe(&format!("{issuer}#{r}"), &pca.get_crl(None)) {
                self.shared.violations.lock().push(v);
            }
        }
    }

    fn finish(&mut self, records: Vec<MetricRecord>) -> Result<MetricsReport, SimError> {
        // Crashed replicas come back on their persisted state so that
        // what they issued stays resolvable.
        for name in self.killed.lock().drain(..) {
            self.deployment.restart_replica(&name);
        }
        let snapshot = self.deployment.snapshot();
        let mut violations = std::mem::take(&mut *self.shared.violations.lock());
        violations.extend(sybil_scan(&snapshot));
        for v in &self.vehicles {
            let v = v.lock();
            violations.extend(pool_overlap(&v.name, &v.held));
        }
        let issuers: Vec<String> = self.plan.domains.iter().flat_map(|d| &d.pcas).map(|p| p.id.to_string()).collect();
        for i in &issuers {
            self.observe_crls(i);
        }
        violations.extend(std::mem::take(&mut *self.shared.violations.lock()));

        let mut issued = std::mem::take(&mut *self.shared.issued.lock());
        issued.sort_by(|a, b| (&a.issuer, a.serial).cmp(&(&b.issuer, b.serial)));
        let sample = (issued.len() as f64 * self.scenario.resolution_sample).ceil() as usize;
        let mut rng = seeded(self.scenario.seed, &"resolution-sample");
        let picked: Vec<&IssuedPseudonym> = issued.choose_multiple(&mut rng, sample).collect();
        for p in &picked {
            violations.extend(check_resolution(p, self.resolve(&p.issuer, p.serial, false)));
        }

        let mut transcript = Transcript::default();
        for p in &issued {
            transcript.observe(p.reference(), p.start, p.end, Some(&p.vehicle));
        }
        Ok(MetricsReport {
            events: 0,
            wall_seconds: 0.0,
            records,
            violations,
            resolution_checked: picked.len(),
            attacks: std::mem::take(&mut *self.shared.attacks.lock()),
            issued,
            transcript,
            snapshot,
        })
    }

    /// Role lookup helper for callers wiring extra clients.
    pub fn authority_key(&self, id: &CaId, role: Role) -> Option<&vpki_core::PublicKey> {
        self.plan.trust.key_for(id, role)
    }
}

impl Drop for Simulation {
    fn drop(&mut self) {
        self.deployment.shutdown();
    }
}

fn check_resolution(p: &IssuedPseudonym, result: Result<ResolveResponse, Reject>) -> Option<Violation> {
    let name = format!("{}#{}", p.issuer, p.serial);
    match result {
        Ok(ResolveResponse::Resolved { subject_id, .. }) if subject_id == p.vehicle => None,
        Ok(ResolveResponse::Resolved { subject_id, .. }) => Some(Violation::Misresolved {
            pseudonym: name,
            expected: p.vehicle.clone(),
            got: subject_id,
        }),
        Ok(partial) => Some(Violation::Unresolved {
            pseudonym: name,
            detail: format!("{partial:?}"),
        }),
        Err(r) => Some(Violation::Unresolved {
            pseudonym: name,
            detail: r.to_string(),
        }),
    }
}

/// Runs a scenario start to finish.
pub fn run(scenario: &Scenario) -> Result<MetricsReport, SimError> {
    Simulation::new(scenario.clone())?.execute()
}
