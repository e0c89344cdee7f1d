//! Configuration ingestion, command dispatch and CSV emission for `asymdiag`.

pub mod commands;
pub mod config;
pub mod table;

use std::path::Path;

pub use commands::{run, Command, Report};
pub use config::RunConfig;
pub use table::Table;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] asymdiag::Error),
    #[error("{0}")]
    Violation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Violation(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numeric(_) => "numeric",
            CliError::Violation(_) => "bound_violation",
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        serde_json::json!({
            "status": "error",
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

/// Runs `command`, writes every table to `out` as `<name>.csv`, and in strict
/// mode turns warnings into a [`CliError::Violation`] after the files are written.
pub fn execute(command: Command, cfg: &RunConfig, out: &Path, strict: bool) -> Result<Report, CliError> {
    let report = run(command, cfg)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))?;
    for t in &report.tables {
        let path = out.join(format!("{}.csv", t.name));
        std::fs::write(&path, t.to_csv()?).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    if strict && !report.warnings.is_empty() {
        return Err(CliError::Violation(report.warnings.join("; ")));
    }
    Ok(report)
}
