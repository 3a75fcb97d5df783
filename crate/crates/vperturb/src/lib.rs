//! Command-line driver for the virtual-perturbation diagnostics in
//! `vperturb-core`: TOML configuration, JSONL trajectories, CSV and JSON
//! reports, and the `train → diagnose → bound → verify` pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod trajectory;

pub use commands::{BoundFlags, Context, Outcome};
pub use config::{Config, Format};
pub use error::{CliError, CliResult};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
