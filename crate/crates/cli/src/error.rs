use scs_core::{CriterionError, DataError, NuisanceError, SelectionError, SolverError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input, flags or file contents.
    #[error("{0}")]
    Input(String),
    /// A fit or criterion could not be computed.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Data(d) => d.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<NuisanceError> for CliError {
    fn from(e: NuisanceError) -> Self {
        match e {
            NuisanceError::Data(d) => d.into(),
            NuisanceError::EmptyGroup(_) | NuisanceError::NoConfounders => CliError::Input(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<CriterionError> for CliError {
    fn from(e: CriterionError) -> Self {
        match e {
            CriterionError::Data(d) => d.into(),
            CriterionError::Solver(s) => s.into(),
            CriterionError::Nuisance(n) => n.into(),
            CriterionError::Incompatible { .. } => CliError::Input(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<SelectionError> for CliError {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::Criterion(c) => c.into(),
            SelectionError::Solver(s) => s.into(),
            SelectionError::Grid(_) => CliError::Input(e.to_string()),
            SelectionError::AllFailed => CliError::Numerical(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
