use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("empty dataset")]
    Empty,
    #[error("dimension mismatch: {what} has {found} rows, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("group label out of range: row {row} has label {label}, H = {h_count}")]
    GroupOutOfRange {
        row: usize,
        label: usize,
        h_count: usize,
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("penalty {0} is not supported by this solver")]
    UnsupportedPenalty(&'static str),
    #[error("unidentifiable block: coefficient block {0} has no positive weight")]
    UnidentifiableBlock(usize),
    #[error("negative aggregated weight at row {row}, block {block}")]
    NegativeWeight { row: usize, block: usize },
    #[error("degenerate problem: {0}")]
    Degenerate(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NuisanceError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("empty group {0}")]
    EmptyGroup(usize),
    #[error("rank-deficient design for the {0} model")]
    RankDeficient(&'static str),
    #[error("propensity model needs at least one confounder column")]
    NoConfounders,
    #[error("newton iterations did not converge for the {0} model")]
    NotConverged(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriterionError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("matrix {0} is singular or ill-conditioned (condition number {1:.3e})")]
    Singular(&'static str, f64),
    #[error("noise variance unresolved: {0}")]
    Sigma2(String),
    #[error("criterion {criterion} is incompatible with pipeline {pipeline}")]
    Incompatible {
        criterion: &'static str,
        pipeline: &'static str,
    },
    #[error("{0}")]
    Missing(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error(transparent)]
    Criterion(#[from] CriterionError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("all path entries failed")]
    AllFailed,
}
