//! Regularization paths and criterion-based choice of lambda.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::criteria::{
    build_matrices, dr_aic, dric, ipcp, ipic, ipic_nonconvex, qicw_gaussian, qicw_glm, resolve_sigma2,
    CriterionMatrices, CriterionReport, CriterionTag, MatrixMode, NoiseSpec,
};
use crate::data::{ContrastSpec, Dataset, ModelFamily, PenaltySpec};
use crate::error::{CriterionError, SelectionError, SolverError};
use crate::estimators::{
    covariate_groups, dr_glm_problem, group_pseudo_outcomes, ipw_gaussian_fit, ipw_glm_problem, pseudo_outcomes,
    resolve_glm_family, ContrastFit, DrProblemSpec, IpwGaussianProblemSpec, WarmStart,
};
use crate::nuisance::{OutcomeNuisanceFit, Propensity};
use crate::solvers::{glm_gradient, solve_penalized_glm, GlmProblem, PenalizedFit, SolverOptions};

pub const DEFAULT_GRID_POINTS: usize = 50;
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;

#[derive(Debug, Clone)]
pub enum PipelineKind<'a> {
    /// Least squares on contrast pseudo-outcomes (lasso, elastic net, group lasso).
    IpwGaussian {
        contrast: &'a ContrastSpec,
        propensity: &'a Propensity,
        noise: NoiseSpec,
    },
    IpwGlm {
        family: ModelFamily,
        propensity: &'a Propensity,
    },
    DrGlm {
        family: ModelFamily,
        propensity: &'a Propensity,
        outcome: &'a OutcomeNuisanceFit,
    },
}

/// An estimation pipeline with a penalty template whose lambda the grid overrides.
#[derive(Debug, Clone)]
pub struct Pipeline<'a> {
    pub dataset: &'a Dataset,
    pub kind: PipelineKind<'a>,
    pub penalty: PenaltySpec,
    pub options: SolverOptions,
}

impl<'a> Pipeline<'a> {
    pub fn ipw_gaussian(
        dataset: &'a Dataset,
        contrast: &'a ContrastSpec,
        propensity: &'a Propensity,
        noise: NoiseSpec,
        penalty: PenaltySpec,
    ) -> Self {
        Pipeline {
            dataset,
            kind: PipelineKind::IpwGaussian { contrast, propensity, noise },
            penalty,
            options: SolverOptions::default(),
        }
    }

    /// GLM pipeline; an unknown gaussian variance is resolved here.
    pub fn ipw_glm(
        dataset: &'a Dataset,
        family: ModelFamily,
        propensity: &'a Propensity,
        penalty: PenaltySpec,
    ) -> Result<Self, SolverError> {
        Ok(Pipeline {
            dataset,
            kind: PipelineKind::IpwGlm {
                family: resolve_glm_family(dataset, family)?,
                propensity,
            },
            penalty,
            options: SolverOptions::default(),
        })
    }

    pub fn dr_glm(
        dataset: &'a Dataset,
        family: ModelFamily,
        propensity: &'a Propensity,
        outcome: &'a OutcomeNuisanceFit,
        penalty: PenaltySpec,
    ) -> Result<Self, SolverError> {
        Ok(Pipeline {
            dataset,
            kind: PipelineKind::DrGlm {
                family: resolve_glm_family(dataset, family)?,
                propensity,
                outcome,
            },
            penalty,
            options: SolverOptions::default(),
        })
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PipelineKind::IpwGaussian { .. } => "ipw_gaussian",
            PipelineKind::IpwGlm { .. } => "ipw_glm",
            PipelineKind::DrGlm { .. } => "dr_glm",
        }
    }

    /// Penalty template with group structure filled in for GLM group lasso.
    fn template(&self) -> PenaltySpec {
        match (&self.penalty, &self.kind) {
            (PenaltySpec::GroupLasso { lambda, groups }, PipelineKind::IpwGlm { .. } | PipelineKind::DrGlm { .. })
                if groups.len() != self.dataset.p() * self.dataset.h_count =>
            {
                PenaltySpec::GroupLasso {
                    lambda: *lambda,
                    groups: covariate_groups(self.dataset.p(), self.dataset.h_count),
                }
            }
            (p, _) => p.clone(),
        }
    }

    fn glm_problem(&self, penalty: PenaltySpec) -> Result<GlmProblem<'a>, SolverError> {
        match &self.kind {
            PipelineKind::IpwGlm { family, propensity } => ipw_glm_problem(self.dataset, *family, propensity, penalty),
            PipelineKind::DrGlm {
                family,
                propensity,
                outcome,
            } => dr_glm_problem(&DrProblemSpec {
                dataset: self.dataset,
                family: *family,
                propensity,
                outcome,
                penalty,
            }),
            PipelineKind::IpwGaussian { .. } => unreachable!("least-squares pipeline has no GLM problem"),
        }
    }

    /// Smallest lambda whose fit is identically zero.
    pub fn lambda_max(&self) -> Result<f64, SelectionError> {
        let ds = self.dataset;
        let template = self.template();
        let lmax = match &self.kind {
            PipelineKind::IpwGaussian {
                contrast, propensity, ..
            } => match template {
                PenaltySpec::GroupLasso { .. } => {
                    let xtw: Vec<DVector<f64>> = group_pseudo_outcomes(ds, propensity)
                        .iter()
                        .map(|w| ds.x.transpose() * w)
                        .collect();
                    (0..ds.p())
                        .map(|j| 2.0 * xtw.iter().map(|v| v[j] * v[j]).sum::<f64>().sqrt())
                        .fold(0.0, f64::max)
                }
                _ => 2.0 * (ds.x.transpose() * pseudo_outcomes(ds, contrast, propensity)).amax(),
            },
            _ => {
                let zero_pen = template.with_lambda(0.0);
                let problem = self.glm_problem(zero_pen)?;
                let g = glm_gradient(&problem, &DVector::zeros(problem.dim()))?;
                match template {
                    PenaltySpec::GroupLasso { groups, .. } => crate::solvers::penalty::group_index_sets(&groups)
                        .iter()
                        .map(|s| s.iter().map(|&k| g[k] * g[k]).sum::<f64>().sqrt())
                        .fold(0.0, f64::max),
                    _ => g.amax(),
                }
            }
        };
        if !(lmax > 0.0 && lmax.is_finite()) {
            return Err(SelectionError::Grid("degenerate all-zero gradient at the origin".into()));
        }
        Ok(lmax)
    }
}

/// Log-spaced grid from lambda_max down to `ratio * lambda_max`, decreasing.
pub fn lambda_grid(pipeline: &Pipeline, n_points: usize, ratio: f64) -> Result<Vec<PenaltySpec>, SelectionError> {
    if n_points < 2 {
        return Err(SelectionError::Grid(format!("need at least 2 points, got {n_points}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SelectionError::Grid(format!("ratio must lie in (0, 1), got {ratio}")));
    }
    let lmax = pipeline.lambda_max()?;
    let template = pipeline.template();
    Ok((0..n_points)
        .map(|k| {
            let l = if k == 0 {
                lmax
            } else {
                lmax * ratio.powf(k as f64 / (n_points - 1) as f64)
            };
            template.with_lambda(l)
        })
        .collect())
}

/// Fit at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub enum PathFit {
    Contrast(ContrastFit),
    Glm(PenalizedFit),
}

impl PathFit {
    pub fn active_size(&self) -> usize {
        match self {
            PathFit::Contrast(c) => c.active_size(),
            PathFit::Glm(f) => f.active_size(),
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            PathFit::Contrast(c) => c.converged(),
            PathFit::Glm(f) => f.converged,
        }
    }

    /// Effect estimate: the contrast `theta` or the stacked GLM coefficient.
    pub fn coefficients(&self, contrast: Option<&ContrastSpec>) -> DVector<f64> {
        match (self, contrast) {
            (PathFit::Contrast(c), Some(cs)) => c.effect(cs),
            (PathFit::Contrast(ContrastFit::Direct(f)), None) => f.coef.clone(),
            (PathFit::Contrast(ContrastFit::Group(g)), None) => {
                DVector::from_iterator(g.fits.len() * g.fits[0].coef.len(), g.fits.iter().flat_map(|f| f.coef.iter().copied()))
            }
            (PathFit::Glm(f), _) => f.coef.clone(),
        }
    }
}

/// Fits every grid point in the given order, warm-starting from the previous point.
pub fn fit_path(pipeline: &Pipeline, grid: &[PenaltySpec]) -> Vec<Result<PathFit, SolverError>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut warm_c: Option<WarmStart> = None;
    let mut warm_g: Option<DVector<f64>> = None;
    for pen in grid {
        let res = match &pipeline.kind {
            PipelineKind::IpwGaussian {
                contrast, propensity, ..
            } => {
                let spec = IpwGaussianProblemSpec {
                    dataset: pipeline.dataset,
                    contrast,
                    propensity,
                    penalty: pen.clone(),
                };
                ipw_gaussian_fit(&spec, warm_c.as_ref(), &pipeline.options).map(|f| {
                    warm_c = Some(f.warm_start());
                    PathFit::Contrast(f)
                })
            }
            _ => pipeline
                .glm_problem(pen.clone())
                .and_then(|pr| solve_penalized_glm(&pr, warm_g.as_ref(), &pipeline.options))
                .map(|f| {
                    warm_g = Some(f.coef.clone());
                    PathFit::Glm(f)
                }),
        };
        if let Err(e) = &res {
            log::warn!("fit failed at lambda = {}: {e}", pen.lambda());
        }
        out.push(res);
    }
    out
}

fn incompatible(c: CriterionTag, p: &Pipeline) -> CriterionError {
    CriterionError::Incompatible {
        criterion: c.name(),
        pipeline: p.name(),
    }
}

/// Variance used by the Gaussian contrast criteria.
pub fn pipeline_sigma2(pipeline: &Pipeline) -> Result<Option<f64>, CriterionError> {
    match &pipeline.kind {
        PipelineKind::IpwGaussian {
            contrast,
            propensity,
            noise,
        } => Ok(Some(resolve_sigma2(noise, pipeline.dataset, contrast, propensity)?.sigma2)),
        _ => Ok(None),
    }
}

/// Evaluates several criteria at one fit, sharing the empirical matrices.
pub fn evaluate(
    pipeline: &Pipeline,
    fit: &PathFit,
    criteria: &[CriterionTag],
    sigma2: Option<f64>,
) -> Vec<Result<CriterionReport, CriterionError>> {
    let ds = pipeline.dataset;
    let mut matrices: Option<Result<CriterionMatrices, CriterionError>> = None;
    let mut get_matrices = |mode: MatrixMode, f: &PenalizedFit| -> Result<CriterionMatrices, CriterionError> {
        if matrices.is_none() {
            let (family, prop, outcome) = match &pipeline.kind {
                PipelineKind::IpwGlm { family, propensity } => (family, *propensity, None),
                PipelineKind::DrGlm {
                    family,
                    propensity,
                    outcome,
                } => (family, *propensity, Some(*outcome)),
                PipelineKind::IpwGaussian { .. } => unreachable!(),
            };
            matrices = Some(build_matrices(f, ds, family, prop, outcome, mode));
        }
        matrices.clone().expect("just set")
    };
    criteria
        .iter()
        .map(|&c| match (&pipeline.kind, fit) {
            (
                PipelineKind::IpwGaussian {
                    contrast, propensity, ..
                },
                PathFit::Contrast(cf),
            ) => {
                let s2 = sigma2.ok_or(CriterionError::Sigma2("variance not resolved".into()))?;
                match c {
                    CriterionTag::Qicw => qicw_gaussian(cf, ds, contrast, propensity, s2),
                    CriterionTag::Ipcp => ipcp(cf, ds, contrast, propensity, s2),
                    _ => Err(incompatible(c, pipeline)),
                }
            }
            (PipelineKind::IpwGlm { family, propensity }, PathFit::Glm(f)) => match c {
                CriterionTag::Qicw => qicw_glm(f, ds, family, propensity),
                CriterionTag::Ipic if f.penalty.is_nonconvex() => ipic_nonconvex(f, ds, propensity, family),
                CriterionTag::Ipic => ipic(f, &get_matrices(MatrixMode::Ipw, f)?, ds, propensity, family),
                _ => Err(incompatible(c, pipeline)),
            },
            (PipelineKind::DrGlm { family, propensity, .. }, PathFit::Glm(f)) => match c {
                CriterionTag::Qicw => qicw_glm(f, ds, family, propensity),
                CriterionTag::DrAic => dr_aic(f, &get_matrices(MatrixMode::Dr, f)?, ds, propensity, family),
                CriterionTag::Dric => dric(f, &get_matrices(MatrixMode::Dr, f)?, ds, propensity, family),
                _ => Err(incompatible(c, pipeline)),
            },
            _ => Err(incompatible(c, pipeline)),
        })
        .collect()
}

/// Whether `criterion` can score fits of `pipeline`.
pub fn compatible(pipeline: &Pipeline, criterion: CriterionTag) -> bool {
    matches!(
        (&pipeline.kind, criterion),
        (PipelineKind::IpwGaussian { .. }, CriterionTag::Qicw | CriterionTag::Ipcp)
            | (PipelineKind::IpwGlm { .. }, CriterionTag::Qicw | CriterionTag::Ipic)
            | (PipelineKind::DrGlm { .. }, CriterionTag::Qicw | CriterionTag::DrAic | CriterionTag::Dric)
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub penalty: PenaltySpec,
    pub lambda: f64,
    pub active_size: usize,
    pub active: Vec<usize>,
    pub converged: bool,
    /// Contrast effect (least squares) or stacked coefficient (GLM).
    pub coef: Vec<f64>,
    pub report: Option<CriterionReport>,
    pub error: Option<String>,
}

impl PathEntry {
    pub fn failed(&self) -> bool {
        self.report.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPath {
    pub criterion: CriterionTag,
    pub pipeline: String,
    /// Ordered by decreasing lambda.
    pub entries: Vec<PathEntry>,
    pub chosen: usize,
}

impl SelectionPath {
    pub fn chosen_entry(&self) -> &PathEntry {
        &self.entries[self.chosen]
    }
}

/// Index of the smallest total among non-failed entries; the first (largest lambda) wins ties.
pub fn argmin_total(entries: &[PathEntry]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, e) in entries.iter().enumerate() {
        if let Some(r) = &e.report {
            if !r.total.is_finite() {
                continue;
            }
            if best.is_none_or(|(_, b)| r.total < b) {
                best = Some((k, r.total));
            }
        }
    }
    best.map(|(k, _)| k)
}

fn sorted_grid(grid: &[PenaltySpec]) -> Vec<PenaltySpec> {
    let mut g = grid.to_vec();
    g.sort_by(|a, b| b.lambda().total_cmp(&a.lambda()));
    g
}

/// Fits the path once and selects lambda under each criterion.
pub fn select_many(
    pipeline: &Pipeline,
    criteria: &[CriterionTag],
    grid: &[PenaltySpec],
) -> Result<Vec<SelectionPath>, SelectionError> {
    if grid.is_empty() {
        return Err(SelectionError::Grid("empty grid".into()));
    }
    for &c in criteria {
        if !compatible(pipeline, c) {
            return Err(incompatible(c, pipeline).into());
        }
    }
    let grid = sorted_grid(grid);
    let sigma2 = pipeline_sigma2(pipeline)?;
    let contrast = match &pipeline.kind {
        PipelineKind::IpwGaussian { contrast, .. } => Some(*contrast),
        _ => None,
    };
    let fits = fit_path(pipeline, &grid);
    let mut per_crit: Vec<Vec<PathEntry>> = vec![Vec::with_capacity(grid.len()); criteria.len()];
    let mut last_active: Option<usize> = None;
    for (pen, fit) in grid.iter().zip(&fits) {
        match fit {
            Ok(f) => {
                if let (Some(prev), PathFit::Contrast(ContrastFit::Direct(_))) = (last_active, f) {
                    if f.active_size() < prev {
                        log::debug!("active set shrank from {prev} to {} as lambda decreased", f.active_size());
                    }
                }
                last_active = Some(f.active_size());
                let reports = evaluate(pipeline, f, criteria, sigma2);
                let coef = f.coefficients(contrast);
                let active: Vec<usize> = match f {
                    PathFit::Contrast(c) => c.active().to_vec(),
                    PathFit::Glm(g) => g.active.clone(),
                };
                for (k, r) in reports.into_iter().enumerate() {
                    let (report, error) = match r {
                        Ok(r) => (Some(r), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    per_crit[k].push(PathEntry {
                        penalty: pen.clone(),
                        lambda: pen.lambda(),
                        active_size: f.active_size(),
                        active: active.clone(),
                        converged: f.converged(),
                        coef: coef.iter().copied().collect(),
                        report,
                        error,
                    });
                }
            }
            Err(e) => {
                for entries in per_crit.iter_mut() {
                    entries.push(PathEntry {
                        penalty: pen.clone(),
                        lambda: pen.lambda(),
                        active_size: 0,
                        active: Vec::new(),
                        converged: false,
                        coef: Vec::new(),
                        report: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
    }
    criteria
        .iter()
        .zip(per_crit)
        .map(|(&c, entries)| {
            let chosen = argmin_total(&entries).ok_or(SelectionError::AllFailed)?;
            Ok(SelectionPath {
                criterion: c,
                pipeline: pipeline.name().to_string(),
                entries,
                chosen,
            })
        })
        .collect()
}

pub fn select(pipeline: &Pipeline, criterion: CriterionTag, grid: &[PenaltySpec]) -> Result<SelectionPath, SelectionError> {
    Ok(select_many(pipeline, &[criterion], grid)?.remove(0))
}
