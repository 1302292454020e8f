//! HTTP API, command-line interface and configuration for the analysis base.

pub mod cli;
pub mod config;
pub mod http;
pub mod ops;

pub use config::Config;
pub use ops::Gateway;
