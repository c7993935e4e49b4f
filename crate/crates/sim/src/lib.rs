//! Fleet emulation against an in-process deployment: seeded workloads,
//! roaming, server crashes, attacker streams, invariant monitors and
//! latency reports.

pub mod attack;
pub mod ddos;
pub mod metrics;
pub mod monitors;
pub mod perf;
pub mod run;
pub mod scenario;

pub use ddos::{ddos_ramp, RampConfig, RampReport};
pub use metrics::{MetricRecord, Op, OpSummary};
pub use monitors::Violation;
pub use run::{run, IssuedPseudonym, MetricsReport, ScaledClock, SimError, Simulation};
pub use scenario::{AttackKind, AttackerSpec, Event, Fault, Scenario, ScenarioInvalid};
