use std::path::PathBuf;

use thiserror::Error;

use crate::mdp::Violation;
use crate::simplex::LpError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model ({} violation(s)): {}", .0.len(), format_violations(.0))]
    InvalidModel(Vec<Violation>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported format_version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("solver failure: {0}")]
    Solver(#[from] LpError),

    #[error("fair optimum is infeasible for epsilon = {0}")]
    OracleInfeasible(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Configuration problems map to exit code 1, everything else to 2.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::InvalidModel(_)
                | Error::Config(_)
                | Error::UnsupportedVersion { .. }
                | Error::Parse { .. }
        )
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
