//! Command-line driver: configs in, CSV/JSON/SVG artifacts out.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod driver;

pub use commands::{run, Command, Outcome};
pub use config::RunConfig;
pub use error::CliError;
