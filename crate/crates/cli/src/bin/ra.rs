//! Resolution authority: `ra --id ...` serves, `ra resolve ...` asks a
//! running RA to resolve a pseudonym.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use vpki_authority::{Ra, RaConfig};
use vpki_cli::{init_logging, load_key, load_trust, own_certificate, replicated, serve, tcp, OrExit};
use vpki_core::encoding::Canonical;
use vpki_core::messages::{ResolveRequest, ResolveResponse};
use vpki_core::rpc;
use vpki_core::time::SystemClock;
use vpki_core::wire::msg;
use vpki_core::{CaId, Role, SerialNumber};

#[derive(Parser)]
#[command(about = "Serve an RA over TCP, or resolve a pseudonym", args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    serve: ServeArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    id: Option<CaId>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    trust: Option<PathBuf>,
    /// Audit journal, created if missing.
    #[arg(long)]
    state: Option<PathBuf>,
    #[arg(long)]
    key: Option<PathBuf>,
    /// `<CaId>=<addr>`; repeat an id once per replica.
    #[arg(long = "route", value_parser = parse_route)]
    routes: Vec<(CaId, String)>,
    /// Only requests signed by this key are served.
    #[arg(long)]
    operator: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    skew: u64,
}

#[derive(Subcommand)]
enum Command {
    Resolve(ResolveArgs),
}

#[derive(Args)]
struct ResolveArgs {
    /// `<issuer>:<serial>`
    #[arg(long, value_parser = parse_pseudonym)]
    pseudonym: (CaId, u64),
    #[arg(long)]
    revoke: bool,
    #[arg(long)]
    revoke_ltc: bool,
    #[arg(long, default_value = "operator request")]
    justification: String,
    /// Address of the RA.
    #[arg(long)]
    connect: String,
    /// Id of the RA, to verify its responses.
    #[arg(long)]
    ra: CaId,
    #[arg(long)]
    trust: PathBuf,
    /// Operator key to sign with; a throwaway key otherwise.
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    skew: u64,
}

fn parse_route(s: &str) -> Result<(CaId, String), String> {
    let (id, addr) = s.split_once('=').ok_or("expected <CaId>=<addr>")?;
    Ok((id.parse().map_err(|e| format!("{e}"))?, addr.to_string()))
}

fn parse_pseudonym(s: &str) -> Result<(CaId, u64), String> {
    let (id, serial) = s.rsplit_once(':').ok_or("expected <issuer>:<serial>")?;
    let serial = serial.parse().map_err(|e| format!("serial: {e}"))?;
    Ok((id.parse().map_err(|e| format!("{e}"))?, serial))
}

fn required<T>(v: Option<T>, flag: &str) -> T {
    v.or_exit(&format!("--{flag} is required"))
}

fn run_server(a: ServeArgs) -> ! {
    let id = required(a.id, "id");
    let listen = required(a.listen, "listen");
    let trust = load_trust(&required(a.trust, "trust"));
    let key = load_key(&required(a.key, "key"));
    let state = required(a.state, "state");
    own_certificate(&trust, &id, Role::Ra, &key);
    let config = RaConfig {
        id: id.clone(),
        clock_skew_seconds: a.skew,
        operator: a.operator.map(|p| load_key(&p).public),
    };
    let ra = Ra::open(config, key, trust, Arc::new(SystemClock), &state).or_exit("state");
    let mut routes: BTreeMap<CaId, Vec<String>> = BTreeMap::new();
    for (to, addr) in a.routes {
        routes.entry(to).or_default().push(addr);
    }
    for (to, addrs) in routes {
        // Replicas are asked in turn by the RA itself, so no balancer here.
        ra.add_route(to, addrs.iter().map(|a| tcp(a)).collect());
    }
    serve(&listen, id.as_str(), Arc::new(ra))
}

fn resolve(a: ResolveArgs) {
    let trust = load_trust(&a.trust);
    let server_key = trust.key_for(&a.ra, Role::Ra).or_exit(&format!("{} is not a trusted RA", a.ra));
    let mut rng = ChaCha20Rng::from_entropy();
    let signer = match &a.key {
        Some(p) => load_key(p),
        None => vpki_core::KeyPair::generate(&mut rng),
    };
    let (issuer, serial) = a.pseudonym;
    let body = ResolveRequest {
        pseudonym_issuer: issuer.clone(),
        pseudonym_serial: SerialNumber(serial),
        justification: a.justification,
        revoke_pseudonyms: a.revoke,
        revoke_ltc: a.revoke_ltc,
    };
    let resp = rpc::call(
        &*replicated(&[a.connect]),
        server_key,
        &SystemClock,
        a.skew,
        msg::RESOLVE_REQ,
        body.to_canonical_bytes(),
        Some(&signer.private),
        rng.next_u64(),
    )
    .or_exit("resolve");
    match rpc::decode_body::<ResolveResponse>(&resp).or_exit("response") {
        ResolveResponse::Resolved { subject_id, home } => {
            println!("{issuer}:{serial} resolved: subject {subject_id}, home {home}")
        }
        ResolveResponse::Partial { home, f_ticket_serial } => {
            println!("{issuer}:{serial} partially resolved: home {home}, foreign ticket {}", f_ticket_serial.0);
        }
    }
}

fn main() {
    init_logging();
    let cli = Cli::parse();
    match cli.command {
        Some(Command::Resolve(a)) => resolve(a),
        None => run_server(cli.serve),
    }
}
