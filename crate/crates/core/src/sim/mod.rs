//! Discrete-event simulation of a DLedger deployment.

mod harness;
pub mod metrics;
pub mod oracle;
pub mod scenario;
pub mod stats;

pub use harness::{run_scenario, sub_seed, Role, SimEvent, Simulation};
pub use metrics::MetricsLog;
pub use scenario::{Adversary, Partition, Scenario, ScenarioError, Topology};
