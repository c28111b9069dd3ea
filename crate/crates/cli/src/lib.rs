//! Library side of the `respira` command: configuration, stage drivers and error
//! reporting. The binary is a thin clap front end over [`stages`].

pub mod config;
pub mod error;
pub mod stages;

pub use config::RunConfig;
pub use error::CliError;
pub use stages::{Ctx, Stage};

use std::path::Path;

/// Load (or default) the configuration, apply the seed override and build a context.
pub fn context(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<Ctx, CliError> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(Ctx::new(cfg.resolve(seed)?, out))
}
