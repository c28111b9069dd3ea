use std::path::{Path, PathBuf};

/// Failures the driver distinguishes on its machine-readable error line.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error in {}: {msg}", path.display())]
    Config { path: PathBuf, msg: String },

    /// `stage` names the subcommand that produces the file, when there is one.
    #[error("missing input {}{}", path.display(), stage.map(|s| format!(" (run `{s}` first)")).unwrap_or_default())]
    MissingInput { path: PathBuf, stage: Option<&'static str> },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(respira::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config_parse",
            CliError::MissingInput { .. } => "missing_input",
            CliError::Schema(_) => "schema_violation",
            CliError::Io { .. } => "io",
            CliError::Core(_) => "runtime",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 3,
            CliError::MissingInput { .. } => 4,
            CliError::Schema(_) => 5,
            CliError::Io { .. } => 6,
            CliError::Core(_) => 1,
        }
    }

    /// One line: `error kind=<kind> code=<n> message="<escaped>"`.
    pub fn machine_line(&self) -> String {
        format!("error kind={} code={} message={:?}", self.kind(), self.exit_code(), self.to_string())
    }

    pub(crate) fn missing_or_io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput { path: path.to_path_buf(), stage: None }
        } else {
            CliError::Io { path: path.to_path_buf(), source: e }
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source: e }
    }
}

impl From<respira::Error> for CliError {
    fn from(e: respira::Error) -> Self {
        match e {
            respira::Error::Parse { .. } | respira::Error::Schema { .. } | respira::Error::Json(_) => CliError::Schema(e.to_string()),
            respira::Error::Csv(ref c) if !matches!(c.kind(), csv::ErrorKind::Io(_)) => CliError::Schema(e.to_string()),
            other => CliError::Core(other),
        }
    }
}
