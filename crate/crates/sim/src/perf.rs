//! Single-request latency benchmarks on an idle deployment.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use vpki_authority::{DomainSpec, RuntimeConfig};
use vpki_core::encoding::Canonical;
use vpki_core::messages::PseudonymRequest;
use vpki_core::rpc::Service;
use vpki_core::wire::{self, msg};
use vpki_core::{hash_bind, make_csr, KeyPair, Rnd256};

use crate::metrics::percentile;
use crate::run::{plan_request, SimError, Simulation};
use crate::scenario::Scenario;

/// Reference timings measured on dual-core 2 GHz VMs.
pub const REFERENCE_TICKET_MS: f64 = 5.0;
pub const REFERENCE_HUNDRED_MS: f64 = 500.0;
pub const REFERENCE_PCA_TEN_MS: f64 = 26.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub samples_ms: Vec<f64>,
    pub failures: usize,
}

impl Timing {
    pub fn median_ms(&self) -> f64 {
        let mut v = self.samples_ms.clone();
        v.sort_by(f64::total_cmp);
        percentile(&v, 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    /// Vehicle-side ticket request, LTCA round trip included.
    pub ticket: Timing,
    /// Ticket plus 100 pseudonyms, keys generated beforehand.
    pub hundred: Timing,
    /// PCA handling of a 10-CSR request, decode to signed response.
    pub pca_ten: Timing,
}

fn time_ms<T>(f: impl FnOnce() -> T) -> (f64, T) {
    let t = Instant::now();
    let out = f();
    (t.elapsed().as_secs_f64() * 1000.0, out)
}

fn bench_scenario(seed: u64) -> Scenario {
    let mut domain = DomainSpec::new("a");
    domain.policy.ticket_interval_seconds = 6000;
    domain.policy.pseudonym_lifetime_seconds = 60;
    let mut s = Scenario::desk(seed);
    s.vehicles = 3;
    s.requests_per_hour = 0.0;
    s.domains = vec![domain];
    s.start_time = 1_000;
    s
}

pub fn measure(samples: usize, seed: u64) -> Result<PerfReport, SimError> {
    let sim = Simulation::with_runtime(bench_scenario(seed), RuntimeConfig::default())?;
    let d = &sim.plan().domains[0];
    let policy = d.policy;
    let pca = d.pcas[0].id.clone();
    let now = sim.clock().now();

    let mut ticket = Timing { samples_ms: Vec::new(), failures: 0 };
    {
        let mut v = sim.vehicles[0].lock();
        for _ in 0..samples {
            let sub = plan_request(&policy, now, v.next_free, 1);
            v.next_free = policy.ticket_interval(&sub).expect("after epoch").end();
            let (ms, r) = time_ms(|| v.client.acquire_ticket(&pca, sub));
            match r {
                Ok(_) => ticket.samples_ms.push(ms),
                Err(_) => ticket.failures += 1,
            }
        }
    }

    let mut hundred = Timing { samples_ms: Vec::new(), failures: 0 };
    {
        let mut v = sim.vehicles[1].lock();
        for _ in 0..samples {
            let sub = plan_request(&policy, now, v.next_free, 100);
            v.next_free = policy.ticket_interval(&sub).expect("after epoch").end();
            v.client.pregenerate(100);
            let (ms, r) = time_ms(|| v.client.obtain_pseudonyms(&pca, sub, 100));
            v.client.take_issued();
            match r {
                Ok(100) => hundred.samples_ms.push(ms),
                _ => hundred.failures += 1,
            }
        }
    }

    // Requests are assembled first; only the PCA's work is timed.
    let ltca = &sim.deployment().domains[0].ltca;
    let replica = sim.deployment().domains[0].pcas[0].replicas[0].clone();
    let ltc = sim.vehicles[2].lock().client.ltc().clone();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x26);
    let mut next_free = 0;
    let mut frames = Vec::with_capacity(samples);
    for k in 0..samples {
        let sub = plan_request(&policy, now, next_free, 10);
        let period = policy.ticket_interval(&sub).expect("after epoch");
        next_free = period.end();
        let mut rnd = [0u8; 32];
        rng.fill_bytes(&mut rnd);
        let rnd = Rnd256(rnd);
        let tkt = ltca
            .issue_ticket(hash_bind(&pca, &rnd), period, &ltc)
            .map_err(|r| SimError::ServiceSpawnFailure(r.to_string()))?;
        let body = PseudonymRequest {
            rnd,
            requested: sub,
            ticket: tkt,
            csrs: (0..10).map(|_| make_csr(&KeyPair::generate(&mut rng))).collect(),
        };
        let env = wire::seal(msg::PSNYM_REQ, k as u64 + 1, now, body.to_canonical_bytes(), None);
        frames.push(wire::frame(&env));
    }
    let mut pca_ten = Timing { samples_ms: Vec::new(), failures: 0 };
    for f in &frames {
        let (ms, resp) = time_ms(|| replica.handle(f));
        match wire::deframe(&resp) {
            Ok(env) if env.msg_type == msg::PSNYM_RES => pca_ten.samples_ms.push(ms),
            _ => pca_ten.failures += 1,
        }
    }

    Ok(PerfReport { ticket, hundred, pca_ten })
}
