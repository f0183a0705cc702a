//! Sparse causal-effect estimation under propensity-score weighting, with Cp- and AIC-type
//! criteria for choosing the regularization level and a Monte Carlo harness.

pub mod data;
pub mod error;
pub mod linalg;
pub mod criteria;
pub mod estimators;
pub mod nuisance;
pub mod selection;
pub mod simulation;
pub mod solvers;

pub use data::{ContrastSpec, Dataset, ModelFamily, PenaltySpec, Standardizer};
pub use error::{CriterionError, DataError, NuisanceError, SelectionError, SolverError};
