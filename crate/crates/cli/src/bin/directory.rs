//! Directory server.

use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use vpki_authority::{Directory, Manifest};
use vpki_cli::{init_logging, load_key, load_trust, own_certificate, serve, OrExit};
use vpki_core::files::{read_tagged, tag};
use vpki_core::time::SystemClock;
use vpki_core::{CaId, Role};

#[derive(Parser)]
#[command(about = "Serve a signed directory manifest over TCP")]
struct Args {
    #[arg(long)]
    listen: String,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    trust: PathBuf,
    #[arg(long, default_value_t = 300)]
    skew: u64,
}

fn main() {
    init_logging();
    let args = Args::parse();
    let trust = load_trust(&args.trust);
    let key = load_key(&args.key);
    let id: CaId = vpki_authority::deploy::DIRECTORY_ID.parse().or_exit("directory id");
    own_certificate(&trust, &id, Role::Directory, &key);
    let manifest: Manifest = read_tagged(&args.manifest, tag::DIRECTORY_MANIFEST).or_exit("manifest");
    let dir = Directory::load(manifest, key, Arc::new(SystemClock), args.skew).or_exit("manifest");
    serve(&args.listen, "directory", Arc::new(dir))
}
