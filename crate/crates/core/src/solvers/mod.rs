//! Penalized least-squares and GLM solvers.
//!
//! Least-squares objectives are on the total scale, `sum (w_i - x_i'theta)^2 + pen(theta)`,
//! so the active-set stationarity reads `2 sum x_ij (x_i'theta - w_i) + lambda sgn(theta_j) = 0`.
//! GLM objectives are per sample, `-(1/N) * weighted log-likelihood + pen(beta)`.

mod glm;
mod lsq;
pub mod penalty;
pub(crate) mod quadratic;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::PenaltySpec;

pub use glm::{glm_gradient, glm_objective, solve_penalized_glm, GlmProblem, GlmRecord};
pub use lsq::{
    lsq_gradient, solve_elastic_net_lsq, solve_group_lasso_lsq, solve_lasso_lsq, solve_lsq, GroupLassoFit,
    WeightedLsqProblem,
};

/// Coefficients with absolute value above this are active.
pub const EPS_ACTIVE: f64 = 1e-8;
/// KKT tolerance relative to the largest gradient magnitude at zero.
pub const TOL_KKT: f64 = 1e-6;
/// Natural-parameter clamp for logit models.
pub const ETA_MAX: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop when the largest coefficient change in a sweep falls below this.
    pub tol_change: f64,
    pub max_iter: usize,
    pub max_outer: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_change: 1e-8,
            max_iter: 10_000,
            max_outer: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedFit {
    pub coef: DVector<f64>,
    pub active: Vec<usize>,
    pub signs: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub penalty: PenaltySpec,
    /// Active Gram/Hessian block has condition number above the guard.
    pub rank_deficient: bool,
    /// All-zero columns whose coefficients were forced to zero.
    pub degenerate_columns: Vec<usize>,
    /// A logit linear predictor hit the clamp.
    pub eta_clipped: bool,
    /// Objective after each sweep (least squares) or outer step (GLM).
    pub history: Vec<f64>,
}

impl PenalizedFit {
    pub(crate) fn assemble(
        coef: DVector<f64>,
        active_source: &DVector<f64>,
        penalty: PenaltySpec,
        objective_value: f64,
        iterations: usize,
        converged: bool,
    ) -> Self {
        let active = active_indices(active_source);
        let signs = active.iter().map(|&k| active_source[k].signum()).collect();
        PenalizedFit {
            coef,
            active,
            signs,
            objective_value,
            iterations,
            converged,
            penalty,
            rank_deficient: false,
            degenerate_columns: Vec::new(),
            eta_clipped: false,
            history: Vec::new(),
        }
    }

    pub fn active_size(&self) -> usize {
        self.active.len()
    }

    /// Full-length sign vector, zero off the active set.
    pub fn sign_vector(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.coef.len());
        for (&k, &v) in self.active.iter().zip(&self.signs) {
            s[k] = v;
        }
        s
    }
}

pub fn active_indices(coef: &DVector<f64>) -> Vec<usize> {
    (0..coef.len()).filter(|&k| coef[k].abs() > EPS_ACTIVE).collect()
}

/// Largest violation of the l1 subgradient conditions for a smooth-part gradient `grad`
/// and per-coordinate levels `levels`.
pub fn l1_kkt_violation(grad: &DVector<f64>, coef: &DVector<f64>, levels: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..coef.len() {
        let v = if coef[k].abs() > EPS_ACTIVE {
            (grad[k] + levels[k] * coef[k].signum()).abs()
        } else {
            (grad[k].abs() - levels[k]).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

pub(crate) fn gram_condition_flag(gram: &DMatrix<f64>, active: &[usize]) -> bool {
    if active.is_empty() {
        return false;
    }
    let sub = crate::linalg::submatrix(gram, active);
    !(crate::linalg::condition_number(&sub) <= crate::linalg::MAX_CONDITION)
}
