//! Domain core of the gridhall citizen-science hosting service.
//!
//! [`Platform`] is the single entry point; transports (the HTTP server, the
//! CLI) only translate requests into its methods.

pub mod analytics;
pub mod auth;
pub mod blobstore;
pub mod clock;
pub mod error;
pub mod exec;
pub mod groups;
pub mod identity;
pub mod ids;
pub mod launcher;
pub mod orchestrator;
pub mod platform;
pub mod registry;
pub mod storage;
pub mod vault;

pub use error::{Error, ErrorKind, Result};
pub use platform::{Platform, PlatformConfig};
