#![allow(dead_code)]

use std::sync::Arc;

use vpki_authority::deploy::{ltca_id, pca_id};
use vpki_authority::{Deployment, DeploymentPlan, DeploymentSpec, DomainSpec, Ltca, Pca, PcaConfig, RuntimeConfig};
use vpki_core::time::ManualClock;
use vpki_core::{
    generate_keypair, hash_bind, make_csr, CaId, Clock, Csr, Interval, KeyPair, LongTermCertificate,
    Rnd256, Ticket,
};

pub fn spec(domains: &[&str]) -> DeploymentSpec {
    DeploymentSpec {
        domains: domains.iter().map(|d| DomainSpec::new(d)).collect(),
        seed: Some(7),
    }
}

pub fn plan(domains: &[&str]) -> DeploymentPlan {
    DeploymentPlan::generate(&spec(domains)).unwrap()
}

pub struct Fixture {
    pub plan: DeploymentPlan,
    pub clock: Arc<ManualClock>,
    pub deployment: Deployment,
}

impl Fixture {
    pub fn new(domains: &[&str], start: u64) -> Self {
        Self::from_plan(plan(domains), start)
    }

    pub fn from_plan(plan: DeploymentPlan, start: u64) -> Self {
        let clock = Arc::new(ManualClock::new(start));
        let deployment = Deployment::start(&plan, clock.clone() as Arc<dyn Clock>, RuntimeConfig::default());
        Self { plan, clock, deployment }
    }

    pub fn ltca(&self, domain: &str) -> &Arc<Ltca> {
        &self.deployment.domain(domain).unwrap().ltca
    }

    pub fn pca(&self, domain: &str) -> &Arc<Pca> {
        &self.deployment.domain(domain).unwrap().pcas[0].replicas[0]
    }

    /// A second, stand-alone PCA instance sharing the first PCA's identity.
    pub fn pca_config(&self, domain: &str) -> PcaConfig {
        let d = self.plan.domain(domain).unwrap();
        PcaConfig {
            id: d.pcas[0].id.clone(),
            domain: domain.into(),
            policy: d.policy,
            associated_ltcas: vec![d.ltca.id.clone()],
            replica: 9,
        }
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        self.deployment.shutdown();
    }
}

pub struct Car {
    pub subject: String,
    pub key: KeyPair,
    pub ltc: LongTermCertificate,
}

pub fn register(ltca: &Ltca, subject: &str, seed: u8) -> Car {
    let key = generate_keypair(Some([seed; 32]));
    let ltc = ltca
        .register_vehicle(&make_csr(&key), subject, Interval::new(0, 1 << 40).unwrap())
        .unwrap();
    Car {
        subject: subject.into(),
        key,
        ltc,
    }
}

pub fn iv(a: u64, b: u64) -> Interval {
    Interval::new(a, b).unwrap()
}

pub fn pca_a() -> CaId {
    pca_id("a", 0)
}

pub fn pca_b() -> CaId {
    pca_id("b", 0)
}

pub fn ltca_a() -> CaId {
    ltca_id("a")
}

pub fn ltca_b() -> CaId {
    ltca_id("b")
}

/// Ticket from the car's LTCA bound to `target`, with the opening value.
pub fn ticket_for(ltca: &Ltca, car: &Car, target: &CaId, requested: Interval, rnd_byte: u8) -> (Ticket, Rnd256) {
    let rnd = Rnd256([rnd_byte; 32]);
    let t = ltca.issue_ticket(hash_bind(target, &rnd), requested, &car.ltc).unwrap();
    (t, rnd)
}

pub fn csrs(n: usize, seed: u8) -> Vec<Csr> {
    (0..n)
        .map(|i| {
            let mut s = [seed; 32];
            s[0] = i as u8;
            s[1] = (i >> 8) as u8;
            make_csr(&generate_keypair(Some(s)))
        })
        .collect()
}

/// A CSR whose proof of possession was made with another key.
pub fn bad_csr(seed: u8) -> Csr {
    let mut csr = make_csr(&generate_keypair(Some([seed; 32])));
    csr.public_key = generate_keypair(Some([seed.wrapping_add(1); 32])).public;
    csr
}
