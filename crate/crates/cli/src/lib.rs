//! Configuration, dispatch, artifacts and replay for the `vlab` binary.

pub mod config;
pub mod error;
pub mod manifest;
pub mod run;

pub use config::RunConfig;
pub use error::CliError;
pub use manifest::{replay, run_to_dir, RunManifest};
