//! Pseudonym certificate authority server. Run one process per replica.

use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use vpki_authority::config::load_policy;
use vpki_authority::{Pca, PcaConfig};
use vpki_cli::{init_logging, load_key, load_trust, own_certificate, serve, OrExit};
use vpki_core::time::SystemClock;
use vpki_core::{CaId, Role};

#[derive(Parser)]
#[command(about = "Serve a PCA replica over TCP")]
struct Args {
    #[arg(long)]
    id: CaId,
    #[arg(long)]
    listen: String,
    #[arg(long)]
    policy: PathBuf,
    /// State journal of this replica, created if missing.
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    trust: PathBuf,
    #[arg(long)]
    key: PathBuf,
    /// Replica index; keeps serials of replicas of one PCA apart.
    #[arg(long, default_value_t = 0)]
    replica: u16,
}

fn main() {
    init_logging();
    let args = Args::parse();
    let trust = load_trust(&args.trust);
    let key = load_key(&args.key);
    let domain = own_certificate(&trust, &args.id, Role::Pca, &key).domain.clone();
    // Tickets are honoured from the LTCAs of the PCA's own domain.
    let associated_ltcas = trust
        .certificates()
        .iter()
        .filter(|c| c.role == Role::Ltca && c.domain == domain)
        .map(|c| c.ca_id.clone())
        .collect();
    let config = PcaConfig {
        id: args.id.clone(),
        domain,
        policy: load_policy(&args.policy).or_exit("policy"),
        associated_ltcas,
        replica: args.replica,
    };
    let pca = Pca::open(config, key, trust, Arc::new(SystemClock), &args.state).or_exit("state");
    serve(&args.listen, &format!("{}#{}", args.id, args.replica), Arc::new(pca))
}
