//! Experiment runner: JSON experiment specs in, CSV/JSON results out.

use std::path::Path;

pub mod app;
pub mod commands;
pub mod output;
pub mod spec;
pub mod sweep;

pub use commands::{cmd_check, cmd_compare, cmd_dspsa, cmd_solve, Outcome, RunOptions};
pub use output::Format;
pub use spec::{ExperimentSpec, SpecError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Spec { path: String, message: SpecError },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] qamsched_core::Error),
    #[error("solver did not converge: {0}")]
    NotConverged(qamsched_core::Error),
    #[error("property check failed: {0}")]
    Property(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn from_solve(e: qamsched_core::Error) -> Self {
        match e {
            qamsched_core::Error::NotConverged { .. } => CliError::NotConverged(e),
            other => CliError::Model(other),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spec { .. } | CliError::Io { .. } | CliError::Model(_) => 1,
            CliError::Property(_) => 2,
            CliError::NotConverged(_) => 3,
        }
    }
}

/// Reads and validates a spec file.
pub fn load_spec(path: &Path) -> Result<ExperimentSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ExperimentSpec::parse(&text).map_err(|message| CliError::Spec {
        path: path.display().to_string(),
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let stalled = qamsched_core::Error::NotConverged {
            iterations: 10,
            last_gap: 1.0,
        };
        assert_eq!(CliError::from_solve(stalled).exit_code(), 3);
        let bad = qamsched_core::Error::Dimension("x".into());
        assert_eq!(CliError::from_solve(bad).exit_code(), 1);
        assert_eq!(CliError::Property("p".into()).exit_code(), 2);
        let spec = CliError::Spec {
            path: "s.json".into(),
            message: SpecError::new("m"),
        };
        assert_eq!(spec.exit_code(), 1);
    }
}
