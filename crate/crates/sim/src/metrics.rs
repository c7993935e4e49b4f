//! Latency records, their summary statistics and file export.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use vpki_core::rpc::CallError;
use vpki_core::wire::TransportError;
use vpki_vehicle::ClientError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Ticket,
    ForeignTicket,
    Exchange,
    Pseudonyms,
    /// A whole request as the vehicle sees it: ticket through pseudonyms.
    Issuance,
    Resolve,
    Crl,
    Attack,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Ticket => "ticket",
            Op::ForeignTicket => "foreign_ticket",
            Op::Exchange => "exchange",
            Op::Pseudonyms => "pseudonyms",
            Op::Issuance => "issuance",
            Op::Resolve => "resolve",
            Op::Crl => "crl",
            Op::Attack => "attack",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const OK: &str = "ok";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub op: Op,
    pub server: String,
    /// Microseconds on a monotonic clock since the run began.
    pub start_us: u64,
    pub end_us: u64,
    /// `ok` or the failure: a server error code or transport condition.
    pub outcome: String,
}

impl MetricRecord {
    pub fn latency_us(&self) -> u64 {
        self.end_us - self.start_us
    }

    pub fn is_ok(&self) -> bool {
        self.outcome == OK
    }
}

/// A per-worker record buffer; buffers are merged after the run.
#[derive(Debug)]
pub struct Recorder {
    origin: Instant,
    records: Vec<MetricRecord>,
}

impl Recorder {
    pub fn new(origin: Instant) -> Self {
        Self {
            origin,
            records: Vec::new(),
        }
    }

    pub fn now_us(&self) -> u64 {
        self.origin.elapsed().as_micros() as u64
    }

    /// Times `f` and records it under `op`.
    pub fn time<T>(
        &mut self,
        op: Op,
        server: &str,
        f: impl FnOnce() -> Result<T, ClientError>,
    ) -> Result<T, ClientError> {
        let start_us = self.now_us();
        let result = f();
        let end_us = self.now_us().max(start_us);
        let outcome = match &result {
            Ok(_) => OK.to_string(),
            Err(e) => outcome_label(e),
        };
        self.push(op, server, start_us, end_us, outcome);
        result
    }

    pub fn push(&mut self, op: Op, server: &str, start_us: u64, end_us: u64, outcome: String) {
        self.records.push(MetricRecord {
            op,
            server: server.to_string(),
            start_us,
            end_us,
            outcome,
        });
    }

    pub fn into_records(self) -> Vec<MetricRecord> {
        self.records
    }
}

/// A short, run-independent name for a failure.
pub fn outcome_label(e: &ClientError) -> String {
    match e {
        ClientError::Roam { source, .. } => outcome_label(source),
        ClientError::Call(c) => call_label(c),
        ClientError::NoRoute(_) => "no_route".into(),
        ClientError::UnknownAuthority(..) => "unknown_authority".into(),
        ClientError::NoTicket(_) => "no_ticket".into(),
        ClientError::OutsideTicket => "outside_ticket".into(),
        ClientError::MismatchedResponse { .. } => "mismatched_response".into(),
        ClientError::Unauthorized => "unauthorized".into(),
    }
}

pub fn call_label(e: &CallError) -> String {
    match e {
        CallError::Service { code, .. } => code.to_string(),
        CallError::Transport(t) => transport_label(t).into(),
        CallError::Frame(_) => "bad_frame".into(),
        CallError::ResponseInvalid(_) => "response_invalid".into(),
    }
}

pub fn transport_label(e: &TransportError) -> &'static str {
    match e {
        TransportError::Unreachable(_) => "unreachable",
        TransportError::Overloaded => "overloaded",
        TransportError::Closed => "closed",
        TransportError::Io(_) => "io",
    }
}

/// Merges worker buffers into one list ordered by start time.
pub fn merge(buffers: impl IntoIterator<Item = Vec<MetricRecord>>) -> Vec<MetricRecord> {
    let mut all: Vec<MetricRecord> = buffers.into_iter().flatten().collect();
    all.sort_by(|a, b| (a.start_us, a.end_us, a.op).cmp(&(b.start_us, b.end_us, b.op)));
    all
}

/// Nearest-rank percentile of sorted values; `p` in [0, 1].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p.clamp(0.0, 1.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub p: f64,
    pub latency_ms: f64,
}

/// Latency statistics over the successful records of one op.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpSummary {
    pub count: usize,
    pub ok: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    /// Breakpoints at p = 0.00, 0.01, ..., 1.00.
    pub cdf: Vec<CdfPoint>,
    pub failures: BTreeMap<String, usize>,
}

pub fn latencies_ms<'a>(records: impl IntoIterator<Item = &'a MetricRecord>) -> Vec<f64> {
    let mut v: Vec<f64> = records
        .into_iter()
        .filter(|r| r.is_ok())
        .map(|r| r.latency_us() as f64 / 1000.0)
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn summarize_op<'a>(records: impl IntoIterator<Item = &'a MetricRecord>) -> OpSummary {
    let records: Vec<&MetricRecord> = records.into_iter().collect();
    let lat = latencies_ms(records.iter().copied());
    let mut failures = BTreeMap::new();
    for r in records.iter().filter(|r| !r.is_ok()) {
        *failures.entry(r.outcome.clone()).or_insert(0) += 1;
    }
    let mean = if lat.is_empty() {
        0.0
    } else {
        lat.iter().sum::<f64>() / lat.len() as f64
    };
    OpSummary {
        count: records.len(),
        ok: lat.len(),
        mean_ms: mean,
        p50_ms: percentile(&lat, 0.50),
        p90_ms: percentile(&lat, 0.90),
        p95_ms: percentile(&lat, 0.95),
        p99_ms: percentile(&lat, 0.99),
        max_ms: lat.last().copied().unwrap_or(0.0),
        cdf: (0..=100)
            .map(|i| {
                let p = i as f64 / 100.0;
                CdfPoint {
                    p,
                    latency_ms: percentile(&lat, p),
                }
            })
            .collect(),
        failures,
    }
}

pub fn summarize(records: &[MetricRecord]) -> BTreeMap<Op, OpSummary> {
    let mut by_op: BTreeMap<Op, Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        by_op.entry(r.op).or_default().push(r);
    }
    by_op.into_iter().map(|(op, rs)| (op, summarize_op(rs))).collect()
}

pub const CSV_HEADER: &str = "op,server,start_us,end_us,outcome";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_csv(records: &[MetricRecord], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.op,
            csv_field(&r.server),
            r.start_us,
            r.end_us,
            csv_field(&r.outcome)
        )?;
    }
    Ok(())
}

/// gnuplot-ready `latency_ms cumulative_probability` rows.
pub fn write_cdf_dat(op: Op, summary: &OpSummary, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "# {op}: latency_ms cumulative_probability")?;
    for pt in &summary.cdf {
        writeln!(out, "{:.3} {:.2}", pt.latency_ms, pt.p)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Writes `latencies.csv`, or `summary.json` plus one `cdf_<op>.dat` per op.
pub fn export(records: &[MetricRecord], format: Format, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    match format {
        Format::Csv => write_csv(records, io::BufWriter::new(fs::File::create(dir.join("latencies.csv"))?)),
        Format::Json => {
            let summary = summarize(records);
            let text = serde_json::to_string_pretty(&summary).map_err(io::Error::other)?;
            fs::write(dir.join("summary.json"), text)?;
            for (op, s) in &summary {
                write_cdf_dat(*op, s, fs::File::create(dir.join(format!("cdf_{op}.dat")))?)?;
            }
            Ok(())
        }
    }
}
