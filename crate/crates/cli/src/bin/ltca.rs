//! Long-term certificate authority server.

use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use vpki_authority::config::load_policy;
use vpki_authority::{Ltca, LtcaConfig};
use vpki_cli::{init_logging, load_key, load_trust, own_certificate, serve, OrExit};
use vpki_core::time::SystemClock;
use vpki_core::{CaId, Role};

#[derive(Parser)]
#[command(about = "Serve an LTCA over TCP")]
struct Args {
    #[arg(long)]
    id: CaId,
    #[arg(long)]
    listen: String,
    #[arg(long)]
    policy: PathBuf,
    /// State journal, created if missing.
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    trust: PathBuf,
    #[arg(long)]
    key: PathBuf,
}

fn main() {
    init_logging();
    let args = Args::parse();
    let trust = load_trust(&args.trust);
    let key = load_key(&args.key);
    let domain = own_certificate(&trust, &args.id, Role::Ltca, &key).domain.clone();
    let config = LtcaConfig {
        id: args.id.clone(),
        domain,
        policy: load_policy(&args.policy).or_exit("policy"),
        registrar: None,
    };
    let ltca = Ltca::open(config, key, trust, Arc::new(SystemClock), &args.state).or_exit("state");
    serve(&args.listen, args.id.as_str(), Arc::new(ltca))
}
