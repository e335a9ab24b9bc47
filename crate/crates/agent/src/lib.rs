//! Local launcher agent: fetches a signed launch descriptor, downloads the
//! client image at most once per machine, starts it with a runner and
//! reports the run back to the service.

pub mod cache;
pub mod error;
pub mod launch;
pub mod runner;

pub use cache::{Cache, ImageCacheEntry};
pub use error::AgentError;
pub use launch::{Agent, LaunchOutcome, Source};
pub use runner::Runner;
