use nalgebra::{DMatrix, DVector};

use super::penalty::{group_index_sets, penalty_value, rho_d1};
use super::quadratic::{minimize_quadratic, QuadPenalty};
use super::{gram_condition_flag, PenalizedFit, SolverOptions, ETA_MAX};
use crate::data::{ModelFamily, PenaltySpec};
use crate::error::{DataError, SolverError};
use crate::linalg::{sigmoid, softplus};

/// One weighted pseudo-observation attached to row `row` of the design and coefficient block `block`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmRecord {
    pub row: usize,
    pub block: usize,
    pub weight: f64,
    pub response: f64,
}

/// Penalized weighted GLM: `-(1/N) sum_r weight_r * loglik(response_r; eta_r) + pen(beta)` where
/// `eta_r = x_row' beta^[block]` and `beta` stacks the blocks (block-major).
///
/// Augmentation records carry conditional expectations of the outcome; their weights may be negative
/// as long as the aggregated weight per (row, block) is not.
#[derive(Debug, Clone)]
pub struct GlmProblem<'a> {
    pub design: &'a DMatrix<f64>,
    pub blocks: usize,
    pub family: ModelFamily,
    pub observed: Vec<GlmRecord>,
    pub augmentation: Vec<GlmRecord>,
    pub n_scale: f64,
    pub penalty: PenaltySpec,
}

/// Aggregated curvature weight and linear coefficient per (row, block).
pub(crate) struct Aggregated {
    pub n: usize,
    pub blocks: usize,
    pub curv: Vec<f64>,
    pub lin: Vec<f64>,
}

impl Aggregated {
    #[inline]
    pub fn idx(&self, i: usize, h: usize) -> usize {
        i * self.blocks + h
    }
}

impl<'a> GlmProblem<'a> {
    pub fn dim(&self) -> usize {
        self.design.ncols() * self.blocks
    }

    pub fn phi(&self) -> Result<f64, SolverError> {
        match self.family {
            ModelFamily::Gaussian { sigma2: Some(s) } => Ok(s),
            ModelFamily::Gaussian { sigma2: None } => {
                Err(DataError::Invalid("gaussian variance must be resolved before fitting".into()).into())
            }
            ModelFamily::BinomialLogit { .. } => Ok(1.0),
        }
    }

    pub(crate) fn aggregate(&self) -> Result<Aggregated, SolverError> {
        let n = self.design.nrows();
        let h = self.blocks;
        if h == 0 {
            return Err(DataError::Invalid("at least one coefficient block is required".into()).into());
        }
        if self.design.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite("design").into());
        }
        self.family.validate()?;
        self.penalty.validate(Some(self.dim()))?;
        let mut agg = Aggregated {
            n,
            blocks: h,
            curv: vec![0.0; n * h],
            lin: vec![0.0; n * h],
        };
        for (r, aug) in self
            .observed
            .iter()
            .map(|r| (r, false))
            .chain(self.augmentation.iter().map(|r| (r, true)))
        {
            if r.row >= n || r.block >= h {
                return Err(DataError::Invalid("record index out of range".into()).into());
            }
            if !r.weight.is_finite() || !r.response.is_finite() {
                return Err(DataError::NonFinite("record").into());
            }
            if !aug && r.weight < 0.0 {
                return Err(SolverError::NegativeWeight {
                    row: r.row,
                    block: r.block,
                });
            }
            let k = agg.idx(r.row, r.block);
            agg.curv[k] += r.weight;
            agg.lin[k] += r.weight * r.response;
        }
        for i in 0..n {
            for b in 0..h {
                let k = agg.idx(i, b);
                if agg.curv[k] < -1e-12 {
                    return Err(SolverError::NegativeWeight { row: i, block: b });
                }
                agg.curv[k] = agg.curv[k].max(0.0);
            }
        }
        for b in 0..h {
            if !(0..n).any(|i| agg.curv[agg.idx(i, b)] > 0.0) {
                return Err(SolverError::UnidentifiableBlock(b + 1));
            }
        }
        Ok(agg)
    }

    fn linear_predictors(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let p = self.design.ncols();
        let mut eta = DMatrix::zeros(self.design.nrows(), self.blocks);
        for b in 0..self.blocks {
            let col = self.design * beta.rows(b * p, p);
            eta.set_column(b, &col);
        }
        eta
    }
}

#[inline]
fn cumulant(family: &ModelFamily, eta: f64) -> (f64, f64, f64) {
    match *family {
        ModelFamily::Gaussian { .. } => (0.5 * eta * eta, eta, 1.0),
        ModelFamily::BinomialLogit { m } => {
            let m = m as f64;
            let s = sigmoid(eta);
            (m * softplus(eta), m * s, m * s * (1.0 - s))
        }
    }
}

fn smooth_value(problem: &GlmProblem, agg: &Aggregated, beta: &DVector<f64>, phi: f64) -> f64 {
    let eta = problem.linear_predictors(beta);
    let mut acc = 0.0;
    for i in 0..agg.n {
        for b in 0..agg.blocks {
            let k = agg.idx(i, b);
            if agg.curv[k] == 0.0 && agg.lin[k] == 0.0 {
                continue;
            }
            let e = eta[(i, b)];
            let (cum, _, _) = cumulant(&problem.family, e);
            acc += agg.lin[k] * e - agg.curv[k] * cum;
        }
    }
    -acc / (problem.n_scale * phi)
}

/// Full penalized objective.
pub fn glm_objective(problem: &GlmProblem, beta: &DVector<f64>) -> Result<f64, SolverError> {
    let agg = problem.aggregate()?;
    let phi = problem.phi()?;
    Ok(smooth_value(problem, &agg, beta, phi) + penalty_value(&problem.penalty, beta))
}

/// Gradient of the smooth part.
pub fn glm_gradient(problem: &GlmProblem, beta: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    let agg = problem.aggregate()?;
    let phi = problem.phi()?;
    Ok(gradient_and_hessian(problem, &agg, beta, phi).0)
}

fn gradient_and_hessian(
    problem: &GlmProblem,
    agg: &Aggregated,
    beta: &DVector<f64>,
    phi: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let p = problem.design.ncols();
    let d = p * agg.blocks;
    let eta = problem.linear_predictors(beta);
    let mut g = DVector::zeros(d);
    let mut hmat = DMatrix::zeros(d, d);
    let scale = 1.0 / (problem.n_scale * phi);
    for i in 0..agg.n {
        let xi = problem.design.row(i);
        for b in 0..agg.blocks {
            let k = agg.idx(i, b);
            if agg.curv[k] == 0.0 && agg.lin[k] == 0.0 {
                continue;
            }
            let e = eta[(i, b)];
            let (_, mu, _) = cumulant(&problem.family, e);
            let (_, _, v) = cumulant(&problem.family, e.clamp(-ETA_MAX, ETA_MAX));
            let r = -(agg.lin[k] - agg.curv[k] * mu) * scale;
            let w = agg.curv[k] * v * scale;
            let off = b * p;
            for a in 0..p {
                g[off + a] += r * xi[a];
                let wa = w * xi[a];
                if wa != 0.0 {
                    for c in 0..p {
                        hmat[(off + a, off + c)] += wa * xi[c];
                    }
                }
            }
        }
    }
    (g, hmat)
}

fn max_abs_eta(problem: &GlmProblem, beta: &DVector<f64>) -> f64 {
    problem.linear_predictors(beta).abs().max()
}

struct InnerPenalty {
    levels: Vec<f64>,
    ridge: f64,
    groups: Option<(f64, Vec<Vec<usize>>)>,
}

impl InnerPenalty {
    fn value(&self, beta: &DVector<f64>) -> f64 {
        let ridge = self.ridge * beta.norm_squared();
        match &self.groups {
            Some((l, g)) => {
                ridge + l * g.iter().map(|s| s.iter().map(|&k| beta[k] * beta[k]).sum::<f64>().sqrt()).sum::<f64>()
            }
            None => ridge + beta.iter().zip(&self.levels).map(|(b, l)| l * b.abs()).sum::<f64>(),
        }
    }
}

/// Proximal Newton: quadratic model of the smooth part, inner coordinate descent, backtracking.
fn prox_newton(
    problem: &GlmProblem,
    agg: &Aggregated,
    phi: f64,
    pen: &InnerPenalty,
    init: DVector<f64>,
    opts: &SolverOptions,
) -> (DVector<f64>, usize, bool, bool, Vec<usize>, Vec<f64>, DMatrix<f64>) {
    let d = problem.dim();
    let mut beta = init;
    let mut clipped = false;
    if max_abs_eta(problem, &beta) > ETA_MAX && matches!(problem.family, ModelFamily::BinomialLogit { .. }) {
        beta.fill(0.0);
    }
    let objective = |b: &DVector<f64>| smooth_value(problem, agg, b, phi) + pen.value(b);
    let mut f_cur = objective(&beta);
    let mut history = vec![f_cur];
    let mut converged = false;
    let mut outer = 0;
    let mut degenerate = Vec::new();
    let mut last_hess = DMatrix::zeros(d, d);
    while outer < opts.max_outer {
        outer += 1;
        let (g, mut a) = gradient_and_hessian(problem, agg, &beta, phi);
        last_hess = a.clone();
        for k in 0..d {
            if a[(k, k)] > 0.0 {
                a[(k, k)] += 2.0 * pen.ridge;
            }
        }
        let b = &a * &beta - &g;
        let qpen = match &pen.groups {
            Some((l, groups)) => QuadPenalty::Group { lambda: *l, groups },
            None => QuadPenalty::L1(&pen.levels),
        };
        let inner = minimize_quadratic(&a, &b, &qpen, &beta, 0.1 * opts.tol_change, opts.max_iter);
        degenerate = inner.degenerate.clone();
        let dir = &inner.x - &beta;
        if dir.amax() < opts.tol_change {
            beta = inner.x;
            f_cur = objective(&beta);
            history.push(f_cur);
            converged = true;
            break;
        }
        let mut t = 1.0;
        let binomial = matches!(problem.family, ModelFamily::BinomialLogit { .. });
        let mut cand = &beta + &dir * t;
        if binomial {
            while max_abs_eta(problem, &cand) > ETA_MAX && t > 1e-12 {
                t *= 0.5;
                clipped = true;
                cand = &beta + &dir * t;
            }
        }
        let mut f_new = objective(&cand);
        while f_new > f_cur + 1e-14 * f_cur.abs().max(1.0) && t > 1e-12 {
            t *= 0.5;
            cand = &beta + &dir * t;
            f_new = objective(&cand);
        }
        if f_new > f_cur + 1e-14 * f_cur.abs().max(1.0) {
            // no descent possible along the Newton direction: stationary to working precision
            converged = dir.amax() < 1e3 * opts.tol_change;
            break;
        }
        let step = (&cand - &beta).amax();
        beta = cand;
        f_cur = f_new;
        history.push(f_cur);
        if step < opts.tol_change {
            converged = true;
            break;
        }
    }
    (beta, outer, converged, clipped, degenerate, history, last_hess)
}

/// Minimizes the penalized weighted negative log-likelihood.
///
/// Convex penalties use proximal Newton from `warm` (or zero). SCAD and MC+ start from the
/// lasso solution at the same lambda and iterate local linear approximations, each a weighted
/// lasso solved by proximal Newton; the result is a stationary point.
pub fn solve_penalized_glm(
    problem: &GlmProblem,
    warm: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<PenalizedFit, SolverError> {
    let agg = problem.aggregate()?;
    let phi = problem.phi()?;
    if !(problem.n_scale > 0.0) {
        return Err(DataError::Invalid("sample scale must be positive".into()).into());
    }
    let d = problem.dim();
    let init = match warm {
        Some(v) if v.len() != d => {
            return Err(DataError::Invalid("warm start has wrong length".into()).into())
        }
        Some(v) => v.clone(),
        None => DVector::zeros(d),
    };
    let (pen, nonconvex) = match &problem.penalty {
        PenaltySpec::Lasso { lambda } => (
            InnerPenalty { levels: vec![*lambda; d], ridge: 0.0, groups: None },
            false,
        ),
        PenaltySpec::ElasticNet { lambda1, lambda2 } => (
            InnerPenalty { levels: vec![*lambda1; d], ridge: *lambda2, groups: None },
            false,
        ),
        PenaltySpec::GroupLasso { lambda, groups } => (
            InnerPenalty {
                levels: vec![0.0; d],
                ridge: 0.0,
                groups: Some((*lambda, group_index_sets(groups))),
            },
            false,
        ),
        PenaltySpec::Scad { lambda, .. } | PenaltySpec::McPlus { lambda, .. } => (
            InnerPenalty { levels: vec![*lambda; d], ridge: 0.0, groups: None },
            true,
        ),
    };
    let (mut beta, mut iters, mut converged, mut clipped, mut degenerate, mut history, mut hess) =
        prox_newton(problem, &agg, phi, &pen, init, opts);
    if nonconvex {
        let full = |b: &DVector<f64>| smooth_value(problem, &agg, b, phi) + penalty_value(&problem.penalty, b);
        let mut nc_history = vec![full(&beta)];
        let mut lla_converged = false;
        for _ in 0..opts.max_outer {
            let levels: Vec<f64> = beta.iter().map(|&b| rho_d1(&problem.penalty, b)).collect();
            let step_pen = InnerPenalty { levels, ridge: 0.0, groups: None };
            let (next, it, conv, cl, dg, _, hs) = prox_newton(problem, &agg, phi, &step_pen, beta.clone(), opts);
            iters += it;
            clipped |= cl;
            degenerate = dg;
            hess = hs;
            let change = (&next - &beta).amax();
            beta = next;
            nc_history.push(full(&beta));
            if !conv {
                break;
            }
            if change < opts.tol_change {
                lla_converged = true;
                break;
            }
        }
        converged = converged && lla_converged;
        history = nc_history;
    }
    if clipped {
        log::warn!("logit linear predictor reached the clamp |eta| = {ETA_MAX}");
    }
    let objective = smooth_value(problem, &agg, &beta, phi) + penalty_value(&problem.penalty, &beta);
    let mut fit = PenalizedFit::assemble(beta.clone(), &beta, problem.penalty.clone(), objective, iters, converged);
    fit.rank_deficient = gram_condition_flag(&hess, &fit.active);
    fit.degenerate_columns = degenerate;
    fit.eta_clipped = clipped;
    fit.history = history;
    Ok(fit)
}
