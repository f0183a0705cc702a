//! Estimation pipelines: Gaussian contrast IPW, IPW GLM and doubly robust GLM.

use nalgebra::{DMatrix, DVector};

use crate::data::{ContrastSpec, Dataset, ModelFamily, PenaltySpec};
use crate::error::{DataError, SolverError};
use crate::nuisance::{OutcomeNuisanceFit, Propensity};
use crate::solvers::{
    solve_group_lasso_lsq, solve_lsq, solve_penalized_glm, GlmProblem, GlmRecord, GroupLassoFit, PenalizedFit,
    SolverOptions, WeightedLsqProblem,
};

/// Above this magnitude the augmentation weight `1 - t/e` triggers a warning.
pub const AUGMENTATION_WARN: f64 = 50.0;

#[derive(Debug, Clone)]
pub struct IpwGaussianProblemSpec<'a> {
    pub dataset: &'a Dataset,
    pub contrast: &'a ContrastSpec,
    pub propensity: &'a Propensity,
    pub penalty: PenaltySpec,
}

/// `w_i = sum_h c_h t_i^[h] y_i / e_i^[h]`.
pub fn pseudo_outcomes(ds: &Dataset, contrast: &ContrastSpec, propensity: &Propensity) -> DVector<f64> {
    let e = propensity.probs();
    let c = contrast.weights();
    DVector::from_iterator(
        ds.n(),
        (0..ds.n()).map(|i| {
            let h = ds.group0(i);
            c[h] * ds.y[i] / e[(i, h)]
        }),
    )
}

/// Per-group pseudo-outcomes `w_i^[h] = t_i^[h] y_i / e_i^[h]`.
pub fn group_pseudo_outcomes(ds: &Dataset, propensity: &Propensity) -> Vec<DVector<f64>> {
    let e = propensity.probs();
    (0..ds.h_count)
        .map(|h| {
            DVector::from_iterator(
                ds.n(),
                (0..ds.n()).map(|i| if ds.group0(i) == h { ds.y[i] / e[(i, h)] } else { 0.0 }),
            )
        })
        .collect()
}

/// Result of the Gaussian contrast pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum ContrastFit {
    /// Lasso or elastic net fitted directly to the contrast pseudo-outcomes.
    Direct(PenalizedFit),
    /// Group lasso over per-group effects.
    Group(GroupLassoFit),
}

impl ContrastFit {
    /// The contrast effect `theta = sum_h c_h theta^[h]`.
    pub fn effect(&self, contrast: &ContrastSpec) -> DVector<f64> {
        match self {
            ContrastFit::Direct(f) => f.coef.clone(),
            ContrastFit::Group(g) => g.contrast(contrast.weights()),
        }
    }

    pub fn active(&self) -> &[usize] {
        match self {
            ContrastFit::Direct(f) => &f.active,
            ContrastFit::Group(g) => &g.active,
        }
    }

    pub fn active_size(&self) -> usize {
        self.active().len()
    }

    /// Number of nonzero coefficients (group fits count every group).
    pub fn parameter_count(&self) -> usize {
        match self {
            ContrastFit::Direct(f) => f.active.len(),
            ContrastFit::Group(g) => g.active.len() * g.fits.len(),
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            ContrastFit::Direct(f) => f.converged,
            ContrastFit::Group(g) => g.converged,
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            ContrastFit::Direct(f) => f.penalty.lambda(),
            ContrastFit::Group(g) => g.lambda,
        }
    }

    pub fn objective_value(&self) -> f64 {
        match self {
            ContrastFit::Direct(f) => f.objective_value,
            ContrastFit::Group(g) => g.objective_value,
        }
    }

    /// Coefficients usable as a warm start for the same pipeline.
    pub fn warm_start(&self) -> WarmStart {
        match self {
            ContrastFit::Direct(f) => WarmStart::Single(f.coef.clone()),
            ContrastFit::Group(g) => WarmStart::Groups(g.fits.iter().map(|f| f.coef.clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WarmStart {
    Single(DVector<f64>),
    Groups(Vec<DVector<f64>>),
}

/// Builds the pseudo-outcomes and dispatches to the lasso, elastic-net or group-lasso solver.
pub fn ipw_gaussian_fit(
    spec: &IpwGaussianProblemSpec,
    warm: Option<&WarmStart>,
    opts: &SolverOptions,
) -> Result<ContrastFit, SolverError> {
    let ds = spec.dataset;
    ds.validate()?;
    spec.propensity.check_shape(ds)?;
    if spec.contrast.len() != ds.h_count {
        return Err(DataError::Invalid(format!(
            "contrast has {} entries for {} groups",
            spec.contrast.len(),
            ds.h_count
        ))
        .into());
    }
    match &spec.penalty {
        PenaltySpec::GroupLasso { lambda, .. } => {
            let probs: Vec<WeightedLsqProblem> = group_pseudo_outcomes(ds, spec.propensity)
                .into_iter()
                .map(|w| WeightedLsqProblem::new(w, ds.x.clone(), PenaltySpec::Lasso { lambda: *lambda }))
                .collect::<Result<_, _>>()?;
            let w = match warm {
                Some(WarmStart::Groups(v)) => Some(v.as_slice()),
                _ => None,
            };
            Ok(ContrastFit::Group(solve_group_lasso_lsq(&probs, *lambda, w, opts)?))
        }
        PenaltySpec::Lasso { .. } | PenaltySpec::ElasticNet { .. } => {
            let w = pseudo_outcomes(ds, spec.contrast, spec.propensity);
            let pr = WeightedLsqProblem::new(w, ds.x.clone(), spec.penalty.clone())?;
            let start = match warm {
                Some(WarmStart::Single(v)) => Some(v),
                _ => None,
            };
            Ok(ContrastFit::Direct(solve_lsq(&pr, start, opts)?))
        }
        other => Err(SolverError::UnsupportedPenalty(other.name())),
    }
}

/// Resolves an unknown gaussian variance by the residual mean square of the unpenalized
/// per-group least-squares fit (divisor N - pH); binomial families pass through.
pub fn resolve_glm_family(ds: &Dataset, family: ModelFamily) -> Result<ModelFamily, SolverError> {
    match family {
        ModelFamily::Gaussian { sigma2: None } => {
            let p = ds.p();
            let dof = ds.n() as f64 - (p * ds.h_count) as f64;
            if dof <= 0.0 {
                return Err(SolverError::Degenerate("too few samples to estimate the variance".into()));
            }
            let mut rss = 0.0;
            for h in 0..ds.h_count {
                let rows: Vec<usize> = (0..ds.n()).filter(|&i| ds.group0(i) == h).collect();
                if rows.is_empty() {
                    continue;
                }
                let x = ds.x.select_rows(rows.iter());
                let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| ds.y[i]));
                let sol = (x.transpose() * &x)
                    .lu()
                    .solve(&(x.transpose() * &y))
                    .unwrap_or_else(|| DVector::zeros(p));
                rss += (&y - &x * sol).norm_squared();
            }
            let s2 = rss / dof;
            if !(s2 > 0.0) {
                return Err(SolverError::Degenerate("estimated variance is zero".into()));
            }
            Ok(ModelFamily::Gaussian { sigma2: Some(s2) })
        }
        other => Ok(other),
    }
}

fn observed_records(ds: &Dataset, propensity: &Propensity) -> Vec<GlmRecord> {
    let e = propensity.probs();
    (0..ds.n())
        .map(|i| {
            let h = ds.group0(i);
            GlmRecord {
                row: i,
                block: h,
                weight: 1.0 / e[(i, h)],
                response: ds.y[i],
            }
        })
        .collect()
}

/// IPW GLM problem: weights `t/e`, one coefficient block per group.
pub fn ipw_glm_problem<'a>(
    ds: &'a Dataset,
    family: ModelFamily,
    propensity: &Propensity,
    penalty: PenaltySpec,
) -> Result<GlmProblem<'a>, SolverError> {
    ds.validate()?;
    propensity.check_shape(ds)?;
    Ok(GlmProblem {
        design: &ds.x,
        blocks: ds.h_count,
        family,
        observed: observed_records(ds, propensity),
        augmentation: Vec::new(),
        n_scale: ds.n() as f64,
        penalty,
    })
}

pub fn ipw_glm_fit(
    ds: &Dataset,
    family: ModelFamily,
    propensity: &Propensity,
    penalty: PenaltySpec,
    warm: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<PenalizedFit, SolverError> {
    let problem = ipw_glm_problem(ds, family, propensity, penalty)?;
    solve_penalized_glm(&problem, warm, opts)
}

#[derive(Debug, Clone)]
pub struct DrProblemSpec<'a> {
    pub dataset: &'a Dataset,
    pub family: ModelFamily,
    pub propensity: &'a Propensity,
    pub outcome: &'a OutcomeNuisanceFit,
    pub penalty: PenaltySpec,
}

/// DR GLM problem: observed part weighted by `t/e`, plus augmentation `(1 - t/e) E{l | gamma}`
/// for every sample and group.
pub fn dr_glm_problem<'a>(spec: &DrProblemSpec<'a>) -> Result<GlmProblem<'a>, SolverError> {
    let ds = spec.dataset;
    ds.validate()?;
    spec.propensity.check_shape(ds)?;
    let e = spec.propensity.probs();
    let mut aug = Vec::with_capacity(ds.n() * ds.h_count);
    let mut largest: f64 = 0.0;
    for i in 0..ds.n() {
        let z = ds.z.row(i).into_owned();
        for h in 0..ds.h_count {
            let t = if ds.group0(i) == h { 1.0 } else { 0.0 };
            let a = 1.0 - t / e[(i, h)];
            largest = largest.max(a.abs());
            if a != 0.0 {
                aug.push(GlmRecord {
                    row: i,
                    block: h,
                    weight: a,
                    response: spec.outcome.mean(&z, h),
                });
            }
        }
    }
    if largest > AUGMENTATION_WARN {
        log::warn!("augmentation weight magnitude {largest:.1} exceeds {AUGMENTATION_WARN}");
    }
    Ok(GlmProblem {
        design: &ds.x,
        blocks: ds.h_count,
        family: spec.family,
        observed: observed_records(ds, spec.propensity),
        augmentation: aug,
        n_scale: ds.n() as f64,
        penalty: spec.penalty.clone(),
    })
}

pub fn dr_glm_fit(
    spec: &DrProblemSpec,
    warm: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<PenalizedFit, SolverError> {
    let problem = dr_glm_problem(spec)?;
    solve_penalized_glm(&problem, warm, opts)
}

/// Coefficient `beta^[h]` of zero-based group `h` from a stacked GLM coefficient.
pub fn block(coef: &DVector<f64>, p: usize, h: usize) -> DVector<f64> {
    coef.rows(h * p, p).into_owned()
}

/// `x_i' beta^[h]` for all rows and groups, n x H.
pub fn linear_predictors(x: &DMatrix<f64>, coef: &DVector<f64>, h_count: usize) -> DMatrix<f64> {
    let p = x.ncols();
    let mut eta = DMatrix::zeros(x.nrows(), h_count);
    for h in 0..h_count {
        eta.set_column(h, &(x * coef.rows(h * p, p)));
    }
    eta
}

/// Group map pairing each covariate across the coefficient blocks.
pub fn covariate_groups(p: usize, h_count: usize) -> Vec<usize> {
    (0..p * h_count).map(|k| k % p).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::fit_outcome_nuisance;

    fn toy() -> Dataset {
        let x = DMatrix::from_row_slice(
            6,
            2,
            &[1.0, 0.3, -0.5, 1.2, 0.8, -0.7, -1.1, 0.4, 0.2, -0.9, 0.6, 0.5],
        );
        let z = DMatrix::from_row_slice(6, 1, &[0.1, -0.4, 0.9, 0.3, -1.2, 0.5]);
        Dataset::new(DVector::from_row_slice(&[1.5, -0.2, 0.7, 2.1, -1.0, 0.4]), vec![1, 2, 1, 2, 2, 1], x, z, 2)
            .unwrap()
    }

    fn known_e(ds: &Dataset) -> Propensity {
        let p = DMatrix::from_fn(ds.n(), 2, |i, h| {
            let e1 = 1.0 / (1.0 + (-ds.z[(i, 0)]).exp());
            if h == 0 {
                e1
            } else {
                1.0 - e1
            }
        });
        Propensity::known(p).unwrap()
    }

    #[test]
    fn unpenalized_contrast_fit_is_ipw_least_squares() {
        let ds = toy();
        let prop = known_e(&ds);
        let c = ContrastSpec::two_group();
        let spec = IpwGaussianProblemSpec {
            dataset: &ds,
            contrast: &c,
            propensity: &prop,
            penalty: PenaltySpec::Lasso { lambda: 0.0 },
        };
        let opts = SolverOptions { tol_change: 1e-13, ..Default::default() };
        let fit = ipw_gaussian_fit(&spec, None, &opts).unwrap();
        let w = pseudo_outcomes(&ds, &c, &prop);
        let direct = (ds.x.transpose() * &ds.x).lu().solve(&(ds.x.transpose() * w)).unwrap();
        assert!((fit.effect(&c) - direct).amax() < 1e-10);
    }

    #[test]
    fn toy_contrast_lasso_matches_grid() {
        let ds = toy();
        let prop = known_e(&ds);
        let c = ContrastSpec::two_group();
        let lambda = 0.5;
        let spec = IpwGaussianProblemSpec {
            dataset: &ds,
            contrast: &c,
            propensity: &prop,
            penalty: PenaltySpec::Lasso { lambda },
        };
        let fit = ipw_gaussian_fit(&spec, None, &SolverOptions::default()).unwrap();
        let w = pseudo_outcomes(&ds, &c, &prop);
        let obj = |a: f64, b: f64| {
            let th = DVector::from_row_slice(&[a, b]);
            (&w - &ds.x * &th).norm_squared() + lambda * (a.abs() + b.abs())
        };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=4000 {
            let a = -3.0 + i as f64 * 1e-3;
            for k in 0..=3000 {
                let b = -1.5 + k as f64 * 1e-3;
                let v = obj(a, b);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        let th = fit.effect(&c);
        assert!((th[0] - best.1).abs() < 2e-3 && (th[1] - best.2).abs() < 2e-3, "{th} {best:?}");
    }

    #[test]
    fn relabeling_groups_with_contrast_is_invariant() {
        let ds = toy();
        let prop = known_e(&ds);
        let c = ContrastSpec::two_group();
        let spec = IpwGaussianProblemSpec {
            dataset: &ds,
            contrast: &c,
            propensity: &prop,
            penalty: PenaltySpec::Lasso { lambda: 0.3 },
        };
        let a = ipw_gaussian_fit(&spec, None, &SolverOptions::default()).unwrap();
        let mut swapped = ds.clone();
        swapped.t = ds.t.iter().map(|&g| 3 - g).collect();
        let probs = prop.probs();
        let prop2 = Propensity::known(DMatrix::from_fn(ds.n(), 2, |i, h| probs[(i, 1 - h)])).unwrap();
        let c2 = ContrastSpec::new(c.weights().iter().rev().copied().collect()).unwrap();
        let spec2 = IpwGaussianProblemSpec {
            dataset: &swapped,
            contrast: &c2,
            propensity: &prop2,
            penalty: PenaltySpec::Lasso { lambda: 0.3 },
        };
        let b = ipw_gaussian_fit(&spec2, None, &SolverOptions::default()).unwrap();
        assert!((a.effect(&c) - b.effect(&c2)).amax() < 1e-12);
    }

    #[test]
    fn dr_without_augmentation_equals_ipw() {
        let mut ds = toy();
        ds.h_count = 1;
        ds.t = vec![1; 6];
        let prop = Propensity::known(DMatrix::from_element(6, 1, 1.0)).unwrap();
        let fam = ModelFamily::Gaussian { sigma2: Some(1.0) };
        let out = fit_outcome_nuisance(&ds, fam, true, true).unwrap();
        let pen = PenaltySpec::Lasso { lambda: 0.05 };
        let opts = SolverOptions::default();
        let a = ipw_glm_fit(&ds, fam, &prop, pen.clone(), None, &opts).unwrap();
        let spec = DrProblemSpec { dataset: &ds, family: fam, propensity: &prop, outcome: &out, penalty: pen };
        let b = dr_glm_fit(&spec, None, &opts).unwrap();
        assert_eq!(a.coef, b.coef);
    }

    #[test]
    fn gaussian_dr_matches_normal_equations() {
        let ds = toy();
        let prop = known_e(&ds);
        let fam = ModelFamily::Gaussian { sigma2: Some(1.0) };
        let out = fit_outcome_nuisance(&ds, fam, true, true).unwrap();
        let spec = DrProblemSpec {
            dataset: &ds,
            family: fam,
            propensity: &prop,
            outcome: &out,
            penalty: PenaltySpec::Lasso { lambda: 0.0 },
        };
        let opts = SolverOptions { tol_change: 1e-13, ..Default::default() };
        let fit = dr_glm_fit(&spec, None, &opts).unwrap();
        let e = prop.probs();
        for h in 0..2 {
            let mut g = DMatrix::zeros(2, 2);
            let mut r = DVector::zeros(2);
            for i in 0..ds.n() {
                let t = if ds.group0(i) == h { 1.0 } else { 0.0 };
                let w = t / e[(i, h)];
                let mu = out.mean(&ds.z.row(i).into_owned(), h);
                let ytil = w * ds.y[i] + (1.0 - w) * mu;
                let xi = ds.x.row(i).transpose();
                g += &xi * xi.transpose();
                r += xi * ytil;
            }
            let sol = g.lu().solve(&r).unwrap();
            assert!((block(&fit.coef, 2, h) - sol).amax() < 1e-8);
        }
    }
}
