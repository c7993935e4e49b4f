//! Generating a complete set of authorities and wiring them up in process.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use vpki_core::crypto::sha256;
use vpki_core::snapshot::DeploymentSnapshot;
use vpki_core::wire::Transport;
use vpki_core::{
    generate_keypair, AuthorityCertificate, CaId, Clock, DomainPolicy, Interval, KeyPair, Role,
    TrustStore,
};

use crate::directory::{Directory, Manifest};
use crate::ltca::{Ltca, LtcaConfig};
use crate::pca::{Pca, PcaConfig};
use crate::ra::{Ra, RaConfig};
use crate::runtime::{Balancer, EndpointConfig, LocalEndpoint};

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    #[serde(default = "one")]
    pub pcas: usize,
    #[serde(default = "one")]
    pub pca_replicas: usize,
    #[serde(default)]
    pub policy: DomainPolicy,
}

impl DomainSpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            pcas: 1,
            pca_replicas: 1,
            policy: DomainPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentSpec {
    pub domains: Vec<DomainSpec>,
    /// Derive every key from this seed. Test use only: keys derived from a
    /// known seed are not secret.
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn ltca_id(domain: &str) -> CaId {
    format!("ltca-{domain}").parse().expect("valid id")
}

pub fn pca_id(domain: &str, index: usize) -> CaId {
    format!("pca-{domain}-{}", index + 1).parse().expect("valid id")
}

pub fn ra_id(domain: &str) -> CaId {
    format!("ra-{domain}").parse().expect("valid id")
}

pub const RCA_ID: &str = "rca";
pub const DIRECTORY_ID: &str = "directory";

/// An authority's identity: id, key pair and certificate.
#[derive(Debug, Clone)]
pub struct Identity {
    pub id: CaId,
    pub key: KeyPair,
    pub cert: AuthorityCertificate,
}

#[derive(Debug, Clone)]
pub struct DomainPlan {
    pub name: String,
    pub policy: DomainPolicy,
    pub pca_replicas: usize,
    pub ltca: Identity,
    pub pcas: Vec<Identity>,
    pub ra: Identity,
}

/// Keys, certificates, trust store and directory manifest for a deployment.
#[derive(Debug, Clone)]
pub struct DeploymentPlan {
    pub rca: Identity,
    pub directory: Identity,
    pub domains: Vec<DomainPlan>,
    pub trust: TrustStore,
    pub manifest: Manifest,
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("domain {domain}: {source}")]
    Policy {
        domain: String,
        source: vpki_core::policy::PolicyError,
    },
    #[error("domain {0} needs at least one PCA and one replica")]
    NoPca(String),
    #[error("duplicate domain {0}")]
    DuplicateDomain(String),
    #[error(transparent)]
    Trust(#[from] vpki_core::credential::TrustError),
}

impl DeploymentPlan {
    pub fn generate(spec: &DeploymentSpec) -> Result<Self, PlanError> {
        let key_for = |name: &str| match spec.seed {
            Some(seed) => {
                let mut input = seed.to_be_bytes().to_vec();
                input.extend_from_slice(name.as_bytes());
                generate_keypair(Some(*sha256(&input).as_bytes()))
            }
            None => generate_keypair(None),
        };
        let validity = Interval::new(0, 1 << 40).expect("valid interval");
        let rca_id: CaId = RCA_ID.parse().expect("valid id");
        let rca_key = key_for(RCA_ID);
        let rca = Identity {
            cert: AuthorityCertificate::issue(
                rca_id.clone(),
                Role::Rca,
                String::new(),
                rca_key.public.clone(),
                rca_id.clone(),
                validity,
                &rca_key.private,
            ),
            id: rca_id.clone(),
            key: rca_key,
        };
        let sub = |id: CaId, role: Role, domain: &str| {
            let key = key_for(id.as_str());
            Identity {
                cert: AuthorityCertificate::issue(
                    id.clone(),
                    role,
                    domain.to_string(),
                    key.public.clone(),
                    rca_id.clone(),
                    validity,
                    &rca.key.private,
                ),
                id,
                key,
            }
        };
        let directory = sub(DIRECTORY_ID.parse().expect("valid id"), Role::Directory, "");
        let mut domains: Vec<DomainPlan> = Vec::new();
        for d in &spec.domains {
            d.policy.validate().map_err(|source| PlanError::Policy {
                domain: d.name.clone(),
                source,
            })?;
            if d.pcas == 0 || d.pca_replicas == 0 {
                return Err(PlanError::NoPca(d.name.clone()));
            }
            if domains.iter().any(|p| p.name == d.name) {
                return Err(PlanError::DuplicateDomain(d.name.clone()));
            }
            domains.push(DomainPlan {
                name: d.name.clone(),
                policy: d.policy,
                pca_replicas: d.pca_replicas,
                ltca: sub(ltca_id(&d.name), Role::Ltca, &d.name),
                pcas: (0..d.pcas).map(|i| sub(pca_id(&d.name, i), Role::Pca, &d.name)).collect(),
                ra: sub(ra_id(&d.name), Role::Ra, &d.name),
            });
        }
        let mut certs = vec![rca.cert.clone(), directory.cert.clone()];
        let mut associations: BTreeMap<CaId, Vec<CaId>> = BTreeMap::new();
        for d in &domains {
            certs.push(d.ltca.cert.clone());
            certs.push(d.ra.cert.clone());
            let pca_ids: Vec<CaId> = d.pcas.iter().map(|p| p.id.clone()).collect();
            for p in &d.pcas {
                certs.push(p.cert.clone());
                associations.insert(p.id.clone(), vec![d.ltca.id.clone(), d.ra.id.clone()]);
            }
            let mut ltca_assoc = pca_ids.clone();
            ltca_assoc.push(d.ra.id.clone());
            associations.insert(d.ltca.id.clone(), ltca_assoc);
            let mut ra_assoc = pca_ids;
            ra_assoc.push(d.ltca.id.clone());
            associations.insert(d.ra.id.clone(), ra_assoc);
        }
        let trust = TrustStore::from_certificates(certs)?;
        let manifest = Manifest::build(&trust, &associations, &directory.key.private);
        Ok(Self {
            rca,
            directory,
            domains,
            trust,
            manifest,
        })
    }

    pub fn domain(&self, name: &str) -> Option<&DomainPlan> {
        self.domains.iter().find(|d| d.name == name)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RuntimeConfig {
    pub ltca: EndpointConfig,
    pub pca: EndpointConfig,
    pub ra: EndpointConfig,
    pub directory: EndpointConfig,
    /// How long the balancer avoids a replica after it failed.
    pub replica_retry: Duration,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            ltca: EndpointConfig::default(),
            pca: EndpointConfig::default(),
            ra: EndpointConfig::default(),
            directory: EndpointConfig { workers: 2, queue: 256 },
            replica_retry: Duration::from_secs(1),
        }
    }
}

pub struct PcaGroup {
    pub id: CaId,
    pub replicas: Vec<Arc<Pca>>,
    pub endpoints: Vec<Arc<LocalEndpoint>>,
    pub balancer: Arc<Balancer>,
}

pub struct DomainRuntime {
    pub name: String,
    pub policy: DomainPolicy,
    pub ltca: Arc<Ltca>,
    pub ltca_endpoint: Arc<LocalEndpoint>,
    pub pcas: Vec<PcaGroup>,
    pub ra: Arc<Ra>,
    pub ra_endpoint: Arc<LocalEndpoint>,
}

/// Every authority of a plan running in this process.
pub struct Deployment {
    pub trust: Arc<TrustStore>,
    pub directory: Arc<Directory>,
    pub directory_endpoint: Arc<LocalEndpoint>,
    pub domains: Vec<DomainRuntime>,
    config: RuntimeConfig,
}

impl Deployment {
    pub fn start(plan: &DeploymentPlan, clock: Arc<dyn Clock>, config: RuntimeConfig) -> Self {
        let trust = Arc::new(plan.trust.clone());
        let skew = plan
            .domains
            .iter()
            .map(|d| d.policy.clock_skew_seconds)
            .max()
            .unwrap_or(300);
        let directory = Arc::new(
            Directory::load(plan.manifest.clone(), plan.directory.key.clone(), clock.clone(), skew)
                .expect("generated manifest is consistent"),
        );
        let directory_endpoint = LocalEndpoint::start("directory", directory.clone(), config.directory);
        let mut domains = Vec::new();
        for d in &plan.domains {
            let ltca = Arc::new(Ltca::new(
                LtcaConfig {
                    id: d.ltca.id.clone(),
                    domain: d.name.clone(),
                    policy: d.policy,
                    registrar: None,
                },
                d.ltca.key.clone(),
                trust.clone(),
                clock.clone(),
            ));
            let ltca_endpoint = LocalEndpoint::start(d.ltca.id.to_string(), ltca.clone(), config.ltca);
            let pcas = d
                .pcas
                .iter()
                .map(|p| {
                    let replicas: Vec<Arc<Pca>> = (0..d.pca_replicas)
                        .map(|r| {
                            Arc::new(Pca::new(
                                PcaConfig {
                                    id: p.id.clone(),
                                    domain: d.name.clone(),
                                    policy: d.policy,
                                    associated_ltcas: vec![d.ltca.id.clone()],
                                    replica: r as u16,
                                },
                                p.key.clone(),
                                trust.clone(),
                                clock.clone(),
                            ))
                        })
                        .collect();
                    let endpoints: Vec<Arc<LocalEndpoint>> = replicas
                        .iter()
                        .enumerate()
                        .map(|(r, pca)| LocalEndpoint::start(format!("{}#{r}", p.id), pca.clone(), config.pca))
                        .collect();
                    let balancer = Arc::new(Balancer::new(
                        endpoints.iter().map(|e| e.clone() as Arc<dyn Transport>).collect(),
                        config.replica_retry,
                    ));
                    PcaGroup {
                        id: p.id.clone(),
                        replicas,
                        endpoints,
                        balancer,
                    }
                })
                .collect();
            let ra = Arc::new(Ra::new(
                RaConfig {
                    id: d.ra.id.clone(),
                    clock_skew_seconds: d.policy.clock_skew_seconds,
                    operator: None,
                },
                d.ra.key.clone(),
                trust.clone(),
                clock.clone(),
            ));
            let ra_endpoint = LocalEndpoint::start(d.ra.id.to_string(), ra.clone(), config.ra);
            domains.push(DomainRuntime {
                name: d.name.clone(),
                policy: d.policy,
                ltca,
                ltca_endpoint,
                pcas,
                ra,
                ra_endpoint,
            });
        }
        let deployment = Self {
            trust,
            directory,
            directory_endpoint,
            domains,
            config,
        };
        deployment.wire_resolution_routes();
        deployment
    }

    /// Every RA can reach every LTCA and every PCA replica.
    fn wire_resolution_routes(&self) {
        for d in &self.domains {
            for other in &self.domains {
                d.ra.add_route(other.ltca.id().clone(), vec![other.ltca_endpoint.clone()]);
                for g in &other.pcas {
                    d.ra.add_route(
                        g.id.clone(),
                        g.endpoints.iter().map(|e| e.clone() as Arc<dyn Transport>).collect(),
                    );
                }
            }
        }
    }

    /// Brings a killed PCA replica back on the state it kept, as a restart
    /// replaying its journal would. The group gets a fresh balancer; clients
    /// holding the old one keep seeing the replica as dead.
    pub fn restart_replica(&mut self, endpoint: &str) -> bool {
        let config = self.config;
        let Some(g) = self
            .domains
            .iter_mut()
            .flat_map(|d| &mut d.pcas)
            .find(|g| g.endpoints.iter().any(|e| e.name() == endpoint))
        else {
            return false;
        };
        let r = g.endpoints.iter().position(|e| e.name() == endpoint).expect("found above");
        if g.endpoints[r].is_alive() {
            return true;
        }
        g.endpoints[r].shutdown();
        g.endpoints[r] = LocalEndpoint::start(endpoint, g.replicas[r].clone(), config.pca);
        g.balancer = Arc::new(Balancer::new(
            g.endpoints.iter().map(|e| e.clone() as Arc<dyn Transport>).collect(),
            config.replica_retry,
        ));
        self.wire_resolution_routes();
        true
    }

    pub fn domain(&self, name: &str) -> Option<&DomainRuntime> {
        self.domains.iter().find(|d| d.name == name)
    }

    pub fn pca_group(&self, id: &CaId) -> Option<&PcaGroup> {
        self.domains.iter().flat_map(|d| &d.pcas).find(|g| &g.id == id)
    }

    /// Client-facing transport for any authority, balanced for PCAs.
    pub fn transport(&self, id: &CaId) -> Option<Arc<dyn Transport>> {
        if id.as_str() == DIRECTORY_ID {
            return Some(self.directory_endpoint.clone());
        }
        for d in &self.domains {
            if d.ltca.id() == id {
                return Some(d.ltca_endpoint.clone());
            }
            if d.ra.id() == id {
                return Some(d.ra_endpoint.clone());
            }
            if let Some(g) = d.pcas.iter().find(|g| &g.id == id) {
                return Some(g.balancer.clone());
            }
        }
        None
    }

    pub fn snapshot(&self) -> DeploymentSnapshot {
        DeploymentSnapshot {
            ltcas: self.domains.iter().map(|d| d.ltca.snapshot()).collect(),
            pcas: self
                .domains
                .iter()
                .flat_map(|d| &d.pcas)
                .flat_map(|g| g.replicas.iter().map(|p| p.snapshot()))
                .collect(),
        }
    }

    pub fn endpoints(&self) -> Vec<Arc<LocalEndpoint>> {
        let mut all = vec![self.directory_endpoint.clone()];
        for d in &self.domains {
            all.push(d.ltca_endpoint.clone());
            all.push(d.ra_endpoint.clone());
            for g in &d.pcas {
                all.extend(g.endpoints.iter().cloned());
            }
        }
        all
    }

    pub fn shutdown(&self) {
        for e in self.endpoints() {
            e.shutdown();
        }
    }
}
