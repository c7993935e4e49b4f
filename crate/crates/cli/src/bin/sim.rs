//! Fleet simulator.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vpki_cli::{init_logging, OrExit};
use vpki_sim::{ddos_ramp, perf, RampConfig, Scenario};

#[derive(Parser)]
#[command(about = "Run fleet scenarios, attacker ramps and latency benchmarks in process")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write latencies, summaries, CDFs and snapshots.
    /// Exits with status 2 if an invariant monitor fired.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Legitimate throughput against a growing attacker crowd.
    Ddos {
        /// Ramp JSON; the desk-sized ramp if absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Median single-request latencies on an idle deployment.
    Perf {
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    init_logging();
    match Cli::parse().command {
        Command::Run { scenario, out } => {
            let text = fs::read_to_string(&scenario).or_exit(&scenario.display().to_string());
            let s = Scenario::from_json(&text).or_exit(&scenario.display().to_string());
            let report = vpki_sim::run(&s).or_exit("run");
            report.write(&out).or_exit(&out.display().to_string());
            for (op, s) in report.summary() {
                println!("{op:?}: {s:?}");
            }
            println!("{} pseudonyms issued, {} violations", report.issued.len(), report.violations.len());
            for v in &report.violations {
                println!("violation: {v}");
            }
            if report.violations.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Command::Ddos { config, seed, out } => {
            let cfg = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p).or_exit(&p.display().to_string());
                    serde_json::from_str(&text).or_exit(&p.display().to_string())
                }
                None => RampConfig::desk(seed),
            };
            let report = ddos_ramp(&cfg).or_exit("ramp");
            fs::create_dir_all(&out).or_exit(&out.display().to_string());
            let dat = fs::File::create(out.join("ramp.dat")).or_exit("ramp.dat");
            report.write_dat(dat).or_exit("ramp.dat");
            fs::write(out.join("ramp.json"), serde_json::to_string_pretty(&report).or_exit("json")).or_exit("ramp.json");
            for p in &report.points {
                println!(
                    "{:>6} attackers: {:>7.2} served/s, {}/{} attack requests sent",
                    p.attackers, p.served_per_second, p.attack_sent, p.attack_offered
                );
            }
            ExitCode::SUCCESS
        }
        Command::Perf { samples, seed } => {
            let r = perf::measure(samples, seed).or_exit("perf");
            let line = |name: &str, t: &perf::Timing, reference: f64| {
                println!("{name:<24} median {:>9.2} ms  reference {reference} ms  failures {}", t.median_ms(), t.failures)
            };
            line("ticket", &r.ticket, perf::REFERENCE_TICKET_MS);
            line("ticket + 100 pseudonyms", &r.hundred, perf::REFERENCE_HUNDRED_MS);
            line("pca 10-key batch", &r.pca_ten, perf::REFERENCE_PCA_TEN_MS);
            ExitCode::SUCCESS
        }
    }
}
