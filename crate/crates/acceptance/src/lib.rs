//! Brute-force oracles for the acceptance suite. Each one recomputes a
//! platform answer the slow, obvious way, without calling the code it checks.

pub mod analytics;
pub mod lifecycle;
pub mod search;
pub mod wire;
