//! Deployment setup.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use vpki_authority::DeploymentSpec;
use vpki_cli::{init, launch_commands, OrExit};

#[derive(Parser)]
#[command(about = "Set up a multi-domain deployment on disk")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate keys, certificates, trust store, signed manifest and an
    /// address book, then print the commands that start every server.
    Init {
        /// Deployment JSON: `{"domains": [{"name": "a", "pcas": 2}], "seed": 7}`.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 7000)]
        base_port: u16,
    },
}

fn main() {
    let Command::Init { spec, out, host, base_port } = Cli::parse().command;
    let text = std::fs::read_to_string(&spec).or_exit(&spec.display().to_string());
    let spec: DeploymentSpec = serde_json::from_str(&text).or_exit(&spec.display().to_string());
    let (_, book) = init(&spec, &out, &host, base_port).or_exit("init");
    for cmd in launch_commands(&out, &book) {
        println!("{cmd}");
    }
}
