use nalgebra::{DMatrix, DVector};

use super::penalty::group_index_sets;
use super::quadratic::{minimize_quadratic, QuadPenalty};
use super::{gram_condition_flag, PenalizedFit, SolverOptions, EPS_ACTIVE};
use crate::data::PenaltySpec;
use crate::error::{DataError, SolverError};

/// Least-squares problem `sum (w_i - x_i'theta)^2 + pen(theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLsqProblem {
    pub w: DVector<f64>,
    pub design: DMatrix<f64>,
    pub penalty: PenaltySpec,
}

impl WeightedLsqProblem {
    pub fn new(w: DVector<f64>, design: DMatrix<f64>, penalty: PenaltySpec) -> Result<Self, SolverError> {
        let p = WeightedLsqProblem { w, design, penalty };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if self.w.len() != self.design.nrows() {
            return Err(DataError::DimensionMismatch {
                what: "design",
                expected: self.w.len(),
                found: self.design.nrows(),
            }
            .into());
        }
        if self.w.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite("pseudo-outcome").into());
        }
        if self.design.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite("design").into());
        }
        self.penalty.validate(Some(self.design.ncols()))?;
        Ok(())
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.design.transpose() * &self.design
    }

    pub fn xtw(&self) -> DVector<f64> {
        self.design.transpose() * &self.w
    }

    pub fn rss(&self, coef: &DVector<f64>) -> f64 {
        (&self.w - &self.design * coef).norm_squared()
    }
}

/// Gradient of `sum (w - x'theta)^2`.
pub fn lsq_gradient(problem: &WeightedLsqProblem, coef: &DVector<f64>) -> DVector<f64> {
    (problem.design.transpose() * (&problem.design * coef - &problem.w)) * 2.0
}

/// Dispatches on the penalty kind of a single problem.
pub fn solve_lsq(
    problem: &WeightedLsqProblem,
    warm: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<PenalizedFit, SolverError> {
    match problem.penalty {
        PenaltySpec::Lasso { .. } => solve_lasso_lsq(problem, warm, opts),
        PenaltySpec::ElasticNet { .. } => solve_elastic_net_lsq(problem, warm, opts),
        PenaltySpec::GroupLasso { .. } => solve_coefficient_groups(problem, warm, opts),
        _ => Err(SolverError::UnsupportedPenalty(problem.penalty.name())),
    }
}

/// Lasso by cyclic coordinate descent.
pub fn solve_lasso_lsq(
    problem: &WeightedLsqProblem,
    warm: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<PenalizedFit, SolverError> {
    problem.validate()?;
    let lambda = match problem.penalty {
        PenaltySpec::Lasso { lambda } => lambda,
        _ => return Err(SolverError::UnsupportedPenalty(problem.penalty.name())),
    };
    let p = problem.design.ncols();
    let gram = problem.gram();
    let a = &gram * 2.0;
    let b = problem.xtw() * 2.0;
    let levels = vec![lambda; p];
    let init = start(warm, p)?;
    let out = minimize_quadratic(&a, &b, &QuadPenalty::L1(&levels), &init, opts.tol_change, opts.max_iter);
    let wtw = problem.w.norm_squared();
    let objective = out.history.last().copied().unwrap_or(f64::NAN) + wtw;
    let mut fit = PenalizedFit::assemble(
        out.x.clone(),
        &out.x,
        problem.penalty.clone(),
        objective,
        out.sweeps,
        out.converged,
    );
    fit.rank_deficient = gram_condition_flag(&gram, &fit.active);
    fit.degenerate_columns = out.degenerate;
    fit.history = out.history.iter().map(|v| v + wtw).collect();
    Ok(fit)
}

/// Naive elastic net minimizer rescaled by `(1 + lambda2)`; the active set is taken before rescaling.
pub fn solve_elastic_net_lsq(
    problem: &WeightedLsqProblem,
    warm: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<PenalizedFit, SolverError> {
    problem.validate()?;
    let (l1, l2) = match problem.penalty {
        PenaltySpec::ElasticNet { lambda1, lambda2 } => (lambda1, lambda2),
        _ => return Err(SolverError::UnsupportedPenalty(problem.penalty.name())),
    };
    let p = problem.design.ncols();
    let gram = problem.gram();
    let mut a = &gram * 2.0;
    for j in 0..p {
        if gram[(j, j)] > 0.0 {
            a[(j, j)] += 2.0 * l2;
        }
    }
    let b = problem.xtw() * 2.0;
    let levels = vec![l1; p];
    // warm starts are given on the returned (rescaled) scale
    let init = start(warm, p)? / (1.0 + l2);
    let out = minimize_quadratic(&a, &b, &QuadPenalty::L1(&levels), &init, opts.tol_change, opts.max_iter);
    let wtw = problem.w.norm_squared();
    let objective = out.history.last().copied().unwrap_or(f64::NAN) + wtw;
    let mut fit = PenalizedFit::assemble(
        &out.x * (1.0 + l2),
        &out.x,
        problem.penalty.clone(),
        objective,
        out.sweeps,
        out.converged,
    );
    fit.rank_deficient = gram_condition_flag(&gram, &fit.active);
    fit.degenerate_columns = out.degenerate;
    fit.history = out.history.iter().map(|v| v + wtw).collect();
    Ok(fit)
}

fn solve_coefficient_groups(
    problem: &WeightedLsqProblem,
    warm: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<PenalizedFit, SolverError> {
    problem.validate()?;
    let (lambda, groups) = match &problem.penalty {
        PenaltySpec::GroupLasso { lambda, groups } => (*lambda, group_index_sets(groups)),
        _ => return Err(SolverError::UnsupportedPenalty(problem.penalty.name())),
    };
    let p = problem.design.ncols();
    let gram = problem.gram();
    let a = &gram * 2.0;
    let b = problem.xtw() * 2.0;
    let init = start(warm, p)?;
    let pen = QuadPenalty::Group { lambda, groups: &groups };
    let out = minimize_quadratic(&a, &b, &pen, &init, opts.tol_change, opts.max_iter);
    let wtw = problem.w.norm_squared();
    let objective = out.history.last().copied().unwrap_or(f64::NAN) + wtw;
    let mut fit = PenalizedFit::assemble(out.x.clone(), &out.x, problem.penalty.clone(), objective, out.sweeps, out.converged);
    fit.rank_deficient = gram_condition_flag(&gram, &fit.active);
    fit.degenerate_columns = out.degenerate;
    fit.history = out.history.iter().map(|v| v + wtw).collect();
    Ok(fit)
}

/// Per-group fits sharing one active set of covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLassoFit {
    /// One fit per group h; each carries the shared covariate active set.
    pub fits: Vec<PenalizedFit>,
    pub active: Vec<usize>,
    pub lambda: f64,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rank_deficient: bool,
    pub history: Vec<f64>,
}

impl GroupLassoFit {
    pub fn active_size(&self) -> usize {
        self.active.len()
    }

    /// H x p coefficient table.
    pub fn coef_matrix(&self) -> DMatrix<f64> {
        let h = self.fits.len();
        let p = self.fits.first().map_or(0, |f| f.coef.len());
        DMatrix::from_fn(h, p, |r, c| self.fits[r].coef[c])
    }

    /// `sum_h c_h theta^[h]`.
    pub fn contrast(&self, c: &[f64]) -> DVector<f64> {
        let p = self.fits.first().map_or(0, |f| f.coef.len());
        let mut out = DVector::zeros(p);
        for (f, &ch) in self.fits.iter().zip(c) {
            out.axpy(ch, &f.coef, 1.0);
        }
        out
    }
}

/// Group lasso over covariates: `sum_h sum_i (w_i^[h] - x_i'theta^[h])^2 + lambda sum_j ||theta_j||`.
///
/// Blocks are isotropic because the design is shared, so each block update is exact.
pub fn solve_group_lasso_lsq(
    problems: &[WeightedLsqProblem],
    lambda: f64,
    warm: Option<&[DVector<f64>]>,
    opts: &SolverOptions,
) -> Result<GroupLassoFit, SolverError> {
    let h = problems.len();
    if h == 0 {
        return Err(DataError::Empty.into());
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(DataError::Invalid("lambda must be >= 0".into()).into());
    }
    let design = &problems[0].design;
    for pr in problems {
        if pr.design != *design {
            return Err(DataError::Invalid("group problems must share one design".into()).into());
        }
        if pr.w.len() != design.nrows() || pr.w.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite("pseudo-outcome").into());
        }
    }
    let p = design.ncols();
    let d = p * h;
    let gram = design.transpose() * design;
    let mut a = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    for (g, pr) in problems.iter().enumerate() {
        a.view_mut((g * p, g * p), (p, p)).copy_from(&(&gram * 2.0));
        b.rows_mut(g * p, p).copy_from(&(pr.xtw() * 2.0));
    }
    let groups: Vec<Vec<usize>> = (0..p).map(|j| (0..h).map(|g| g * p + j).collect()).collect();
    let mut init = DVector::zeros(d);
    if let Some(ws) = warm {
        if ws.len() != h || ws.iter().any(|v| v.len() != p) {
            return Err(DataError::Invalid("warm start has wrong shape".into()).into());
        }
        for (g, v) in ws.iter().enumerate() {
            init.rows_mut(g * p, p).copy_from(v);
        }
    }
    let pen = QuadPenalty::Group { lambda, groups: &groups };
    let out = minimize_quadratic(&a, &b, &pen, &init, opts.tol_change, opts.max_iter);
    let wtw: f64 = problems.iter().map(|pr| pr.w.norm_squared()).sum();
    let objective = out.history.last().copied().unwrap_or(f64::NAN) + wtw;
    let active: Vec<usize> = (0..p)
        .filter(|&j| (0..h).map(|g| out.x[g * p + j].powi(2)).sum::<f64>().sqrt() > EPS_ACTIVE)
        .collect();
    let rank_deficient = gram_condition_flag(&gram, &active);
    let degenerate: Vec<usize> = out.degenerate.iter().filter(|&&k| k < p).copied().collect();
    let fits = (0..h)
        .map(|g| {
            let coef = out.x.rows(g * p, p).into_owned();
            let signs = active.iter().map(|&j| coef[j].signum()).collect();
            PenalizedFit {
                coef,
                active: active.clone(),
                signs,
                objective_value: objective,
                iterations: out.sweeps,
                converged: out.converged,
                penalty: PenaltySpec::GroupLasso {
                    lambda,
                    groups: (0..p).collect(),
                },
                rank_deficient,
                degenerate_columns: degenerate.clone(),
                eta_clipped: false,
                history: Vec::new(),
            }
        })
        .collect();
    Ok(GroupLassoFit {
        fits,
        active,
        lambda,
        objective_value: objective,
        iterations: out.sweeps,
        converged: out.converged,
        rank_deficient,
        history: out.history.iter().map(|v| v + wtw).collect(),
    })
}

fn start(warm: Option<&DVector<f64>>, p: usize) -> Result<DVector<f64>, SolverError> {
    match warm {
        Some(v) if v.len() != p => Err(DataError::Invalid("warm start has wrong length".into()).into()),
        Some(v) => Ok(v.clone()),
        None => Ok(DVector::zeros(p)),
    }
}
