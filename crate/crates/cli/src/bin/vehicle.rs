//! Demo vehicle: enrolls at its home LTCA and walks through a scripted
//! sequence of protocol steps against running servers.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;
use vpki_cli::{init_logging, load_trust, replicated, tcp, AddressBook, OrExit};
use vpki_core::time::SystemClock;
use vpki_core::{CaId, Clock, DomainPolicy, Interval, KeyPair, Role, SerialNumber};
use vpki_vehicle::{enroll, Network, VehicleClient};

#[derive(Parser)]
#[command(about = "Walk a vehicle through the protocol against running servers")]
struct Cli {
    /// Home LTCA.
    #[arg(long)]
    home: CaId,
    /// Address of the directory server.
    #[arg(long)]
    directory: String,
    #[arg(long)]
    trust: PathBuf,
    /// Address book written by `vpki init`.
    #[arg(long)]
    authorities: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    RunScenario { file: PathBuf },
}

/// Times are seconds from the moment the step runs.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum Step {
    Native {
        pca: String,
        offset: u64,
        length: u64,
        count: usize,
    },
    Roam {
        ltca: String,
        pca: String,
        offset: u64,
        length: u64,
        count: usize,
    },
    Discover {
        domain: String,
    },
    Crl {
        pca: String,
    },
    /// OCSP for `serial`, or for the newest pooled pseudonym from `pca`.
    Status {
        pca: String,
        #[serde(default)]
        serial: Option<u64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Script {
    subject: String,
    steps: Vec<Step>,
}

fn id(s: &str) -> CaId {
    s.parse().or_exit(s)
}

fn window(clock: &dyn Clock, offset: u64, length: u64) -> Interval {
    let start = clock.now() + offset;
    Interval::new(start, start + length).or_exit("interval")
}

fn report(car: &mut VehicleClient) {
    for p in car.take_issued() {
        println!(
            "pseudonym {}:{} [{}, {})",
            p.issuer,
            p.serial.0,
            p.interval.start(),
            p.interval.end()
        );
    }
}

fn main() {
    init_logging();
    let cli = Cli::parse();
    let Command::RunScenario { file } = &cli.command;
    let text = std::fs::read_to_string(file).or_exit(&file.display().to_string());
    let script: Script = serde_json::from_str(&text).or_exit(&file.display().to_string());

    let trust = load_trust(&cli.trust);
    let book = AddressBook::load(&cli.authorities);
    let mut net = Network::new();
    net.add(id("directory"), tcp(&cli.directory), DomainPolicy::default());
    for a in &book.authorities {
        if a.role != "RA" {
            net.add(id(&a.id), replicated(&a.addrs), a.policy);
        }
    }
    let home = book.get(cli.home.as_str()).or_exit(&format!("{} is not in the address book", cli.home));
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let mut rng = ChaCha20Rng::from_entropy();
    let key = KeyPair::generate(&mut rng);
    let ltca_key = trust.key_for(&cli.home, Role::Ltca).or_exit("home LTCA is not trusted");
    let now = clock.now();
    let ltc = enroll(
        &*replicated(&home.addrs),
        ltca_key,
        &*clock,
        home.policy.clock_skew_seconds,
        &key,
        &script.subject,
        Interval::new(now, now + 365 * 86_400).or_exit("validity"),
        None,
    )
    .or_exit("enrollment");
    println!("enrolled {} at {} (ltc serial {})", script.subject, cli.home, ltc.serial.0);
    let mut car = VehicleClient::new(key, ltc, (*trust).clone(), net, clock.clone(), rng);

    for step in script.steps {
        match step {
            Step::Native { pca, offset, length, count } => {
                let n = car
                    .obtain_pseudonyms(&id(&pca), window(&*clock, offset, length), count)
                    .or_exit(&format!("pseudonyms from {pca}"));
                println!("native {pca}: {n} pseudonyms");
                report(&mut car);
            }
            Step::Roam { ltca, pca, offset, length, count } => {
                let n = car
                    .roam(&id(&ltca), &id(&pca), window(&*clock, offset, length), count)
                    .or_exit(&format!("roaming to {pca}"));
                println!("roaming {pca}: {n} pseudonyms");
                report(&mut car);
            }
            Step::Discover { domain } => {
                let entries = car.discover(&id("directory"), &domain).or_exit("directory");
                for e in entries {
                    println!("directory {domain}: {} {}", e.ca_id, e.role);
                }
            }
            Step::Crl { pca } => {
                let n = car.refresh_crl(&id(&pca)).or_exit(&format!("crl from {pca}"));
                println!("crl {pca}: {n} revoked");
            }
            Step::Status { pca, serial } => {
                let pca = id(&pca);
                let serial = serial.map(SerialNumber).unwrap_or_else(|| {
                    car.pool()
                        .filter(|p| p.issuer == pca)
                        .max_by_key(|p| p.interval.start())
                        .map(|p| p.serial)
                        .or_exit(&format!("no pseudonym from {pca} in the pool"))
                });
                let status = car.check_status(&pca, serial).or_exit("ocsp");
                println!("status {pca}:{} {status:?}", serial.0);
            }
        }
    }
}
