//! A local, wire-compatible stand-in for an EC2-like compute provider.
//!
//! Speaks `RunInstances`, `DescribeInstances` and `TerminateInstances` as
//! signed form posts, answers in XML or JSON by `Accept`, and exposes knobs
//! for capacity, start-up delay, failure injection, scripted timelines and
//! outages.

pub mod http;
pub mod model;
pub mod sign;

pub use http::{router, serve_on, spawn, Shared, SimHandle};
pub use model::{LiveInstance, SimConfig, SimError, SimInstance, SimState, Simulator};
