//! Swarm load generator: thousands of scripted virtual users multiplexed on
//! one runtime, exact latency percentiles, and report comparison.

pub mod config;
pub mod engine;
pub mod error;
pub mod report;
pub mod stub;
pub mod transport;

pub use config::{Mix, Scenario, Step, SwarmConfig};
pub use engine::{run_against_stub, run_swarm};
pub use error::SwarmError;
pub use report::{compare_reports, LoadReport, RouteStats, Verdict};
pub use stub::{Stub, StubStats};
pub use transport::Transport;
