//! Offline privacy analysis of a run's transcript and authority snapshots.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use vpki_cli::OrExit;
use vpki_core::snapshot::{DeploymentSnapshot, LtcaSnapshot, PcaSnapshot};
use vpki_privacy::{collusion_closure, link_by_lifetime, parse_entities, score_linkage, KnowledgeSummary, LinkageScore, Transcript};

#[derive(Parser)]
#[command(about = "Linkability and collusion analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Analyze {
        #[arg(long)]
        transcript: PathBuf,
        /// Directory of LTCA and PCA snapshot JSON files.
        #[arg(long)]
        snapshots: PathBuf,
        /// Colluding authorities, e.g. `LTCA_A,PCA_A` or `LTCA_A,pca-a-1`.
        #[arg(long)]
        collude: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct Report {
    observations: usize,
    proposed_links: usize,
    /// Absent when the transcript carries no ground truth.
    linkage: Option<LinkageScore>,
    coalition: KnowledgeSummary,
}

/// LTCA snapshots are told apart by their vehicle table.
fn load_snapshots(dir: &Path) -> DeploymentSnapshot {
    let mut snap = DeploymentSnapshot::default();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .or_exit(&dir.display().to_string())
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let name = p.display().to_string();
        let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).or_exit(&name)).or_exit(&name);
        if value.get("vehicles").is_some() {
            snap.ltcas.push(serde_json::from_value::<LtcaSnapshot>(value).or_exit(&name));
        } else {
            snap.pcas.push(serde_json::from_value::<PcaSnapshot>(value).or_exit(&name));
        }
    }
    snap
}

fn main() {
    let Command::Analyze {
        transcript,
        snapshots,
        collude,
        out,
    } = Cli::parse().command;
    let name = transcript.display().to_string();
    let transcript: Transcript = serde_json::from_str(&fs::read_to_string(&transcript).or_exit(&name)).or_exit(&name);
    let snap = load_snapshots(&snapshots);
    let entities = parse_entities(&collude).or_exit("--collude");
    let coalition = collusion_closure(&entities, &snap).or_exit("collusion").summary();
    let partition = link_by_lifetime(&transcript);
    let linkage = if transcript.ground_truth().is_empty() {
        None
    } else {
        Some(score_linkage(&partition, &transcript).or_exit("linkage"))
    };
    let report = Report {
        observations: transcript.len(),
        proposed_links: partition.link_count(),
        linkage,
        coalition,
    };
    let json = serde_json::to_string_pretty(&report).or_exit("report");
    fs::write(&out, &json).or_exit(&out.display().to_string());
    println!("{json}");
}
