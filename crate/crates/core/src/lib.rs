//! Hierarchical-roofline performance model for LLM inference.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod hardware;
pub mod oracle;
pub mod placement;
pub mod roofline;
pub mod units;
pub mod workload;

pub use error::{Error, Result};
