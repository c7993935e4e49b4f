//! Shared plumbing for the command-line tools: the on-disk layout written
//! by `vpki init`, file loading and TCP serving.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use vpki_authority::deploy::{DeploymentPlan, DeploymentSpec, Identity};
use vpki_authority::runtime::Balancer;
use vpki_authority::tcp::{TcpServer, TcpTransport};
use vpki_core::files::{self, tag};
use vpki_core::rpc::Service;
use vpki_core::wire::Transport;
use vpki_core::{AuthorityCertificate, CaId, DomainPolicy, KeyPair, Role, TrustStore};

pub const TIMEOUT: Duration = Duration::from_secs(10);

pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
}

/// Prints `context: err` and exits with status 1.
pub trait OrExit<T> {
    fn or_exit(self, context: &str) -> T;
}

impl<T, E: Display> OrExit<T> for Result<T, E> {
    fn or_exit(self, context: &str) -> T {
        self.unwrap_or_else(|e| {
            eprintln!("{context}: {e}");
            std::process::exit(1)
        })
    }
}

impl<T> OrExit<T> for Option<T> {
    fn or_exit(self, context: &str) -> T {
        self.unwrap_or_else(|| {
            eprintln!("{context}");
            std::process::exit(1)
        })
    }
}

pub fn load_trust(path: &Path) -> Arc<TrustStore> {
    Arc::new(files::read_tagged(path, tag::TRUST_STORE).or_exit("trust store"))
}

pub fn load_key(path: &Path) -> KeyPair {
    files::read_private_key(path).or_exit("key")
}

/// The certificate for `id`, checked to have `role` and to match `key`.
pub fn own_certificate<'a>(trust: &'a TrustStore, id: &CaId, role: Role, key: &KeyPair) -> &'a AuthorityCertificate {
    let cert = trust
        .certificate(id)
        .or_exit(&format!("{id} is not in the trust store"));
    if cert.role != role {
        eprintln!("{id} is certified as {}, not {role}", cert.role);
        std::process::exit(1);
    }
    if cert.public_key != key.public {
        eprintln!("key does not match the certificate of {id}");
        std::process::exit(1);
    }
    cert
}

pub fn tcp(addr: &str) -> Arc<dyn Transport> {
    Arc::new(TcpTransport::resolve(addr, TIMEOUT).or_exit(addr))
}

/// One transport, or a balancer when the authority has replicas.
pub fn replicated(addrs: &[String]) -> Arc<dyn Transport> {
    match addrs {
        [one] => tcp(one),
        many => Arc::new(Balancer::new(many.iter().map(|a| tcp(a)).collect(), Duration::from_secs(1))),
    }
}

/// Serves until the process is killed.
pub fn serve(listen: &str, name: &str, service: Arc<dyn Service>) -> ! {
    let server = TcpServer::bind(listen, service).or_exit(listen);
    log::info!("{name} listening on {}", server.local_addr());
    server.wait();
    std::process::exit(0)
}

/// Where one authority listens, as recorded by `vpki init`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorityEntry {
    pub id: String,
    pub role: String,
    pub domain: String,
    /// One address per replica.
    pub addrs: Vec<String>,
    pub policy: DomainPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddressBook {
    pub directory: String,
    pub authorities: Vec<AuthorityEntry>,
}

impl AddressBook {
    pub fn load(path: &Path) -> Self {
        let text = fs::read_to_string(path).or_exit(&path.display().to_string());
        serde_json::from_str(&text).or_exit(&path.display().to_string())
    }

    pub fn get(&self, id: &str) -> Option<&AuthorityEntry> {
        self.authorities.iter().find(|a| a.id == id)
    }
}

/// File names under a `vpki init` output directory.
pub struct Layout(pub PathBuf);

impl Layout {
    pub fn trust(&self) -> PathBuf {
        self.0.join("trust.bin")
    }
    pub fn manifest(&self) -> PathBuf {
        self.0.join("manifest.bin")
    }
    pub fn addresses(&self) -> PathBuf {
        self.0.join("authorities.json")
    }
    pub fn key(&self, id: &str) -> PathBuf {
        self.0.join("keys").join(format!("{id}.key"))
    }
    pub fn policy(&self, domain: &str) -> PathBuf {
        self.0.join("policies").join(format!("{domain}.json"))
    }
    pub fn state(&self, id: &str, replica: usize) -> PathBuf {
        self.0.join("state").join(format!("{id}.r{replica}.journal"))
    }
}

/// Generates keys, certificates, trust store and signed manifest for
/// `spec`, and assigns consecutive ports from `base_port` on `host`.
pub fn init(spec: &DeploymentSpec, out: &Path, host: &str, base_port: u16) -> io::Result<(DeploymentPlan, AddressBook)> {
    let plan = DeploymentPlan::generate(spec).map_err(io::Error::other)?;
    let layout = Layout(out.to_path_buf());
    for sub in ["keys", "policies", "state"] {
        fs::create_dir_all(out.join(sub))?;
    }
    files::write_tagged(&layout.trust(), tag::TRUST_STORE, &plan.trust).map_err(io::Error::other)?;
    files::write_tagged(&layout.manifest(), tag::DIRECTORY_MANIFEST, &plan.manifest).map_err(io::Error::other)?;
    let write_key = |i: &Identity| files::write_private_key(&layout.key(i.id.as_str()), &i.key.private).map_err(io::Error::other);
    write_key(&plan.directory)?;

    let mut port = base_port;
    let mut next = |n: usize| -> Vec<String> {
        (0..n)
            .map(|_| {
                port += 1;
                format!("{host}:{}", port - 1)
            })
            .collect()
    };
    let directory = next(1).remove(0);
    let mut authorities = Vec::new();
    for d in &plan.domains {
        fs::write(layout.policy(&d.name), serde_json::to_string_pretty(&d.policy)?)?;
        let mut entry = |i: &Identity, role: Role, replicas: usize| -> io::Result<()> {
            write_key(i)?;
            authorities.push(AuthorityEntry {
                id: i.id.to_string(),
                role: role.to_string(),
                domain: d.name.clone(),
                addrs: next(replicas),
                policy: d.policy,
            });
            Ok(())
        };
        entry(&d.ltca, Role::Ltca, 1)?;
        for p in &d.pcas {
            entry(p, Role::Pca, d.pca_replicas)?;
        }
        entry(&d.ra, Role::Ra, 1)?;
    }
    let book = AddressBook { directory, authorities };
    fs::write(layout.addresses(), serde_json::to_string_pretty(&book)?)?;
    Ok((plan, book))
}

/// Shell commands that start every server of an initialized deployment.
pub fn launch_commands(out: &Path, book: &AddressBook) -> Vec<String> {
    let l = Layout(out.to_path_buf());
    let p = |p: PathBuf| p.display().to_string();
    let mut cmds = vec![format!(
        "directory --listen {} --manifest {} --key {} --trust {}",
        book.directory,
        p(l.manifest()),
        p(l.key("directory")),
        p(l.trust())
    )];
    let mut routes: BTreeMap<&str, &[String]> = BTreeMap::new();
    for a in &book.authorities {
        if a.role != "RA" {
            routes.insert(&a.id, &a.addrs);
        }
    }
    let route_flags: String = routes
        .iter()
        .flat_map(|(id, addrs)| addrs.iter().map(move |addr| format!(" --route {id}={addr}")))
        .collect();
    for a in &book.authorities {
        for (r, addr) in a.addrs.iter().enumerate() {
            let common = format!(
                "--id {} --listen {addr} --trust {} --key {} --state {}",
                a.id,
                p(l.trust()),
                p(l.key(&a.id)),
                p(l.state(&a.id, r))
            );
            cmds.push(match a.role.as_str() {
                "LTCA" => format!("ltca {common} --policy {}", p(l.policy(&a.domain))),
                "PCA" => format!("pca {common} --policy {} --replica {r}", p(l.policy(&a.domain))),
                _ => format!("ra {common}{route_flags}"),
            });
        }
    }
    cmds
}
