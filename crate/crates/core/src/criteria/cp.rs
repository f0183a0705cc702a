use nalgebra::DMatrix;

use super::{CriterionReport, CriterionTag};
use crate::data::{ContrastSpec, Dataset, PenaltySpec};
use crate::error::CriterionError;
use crate::estimators::{covariate_groups, group_pseudo_outcomes, pseudo_outcomes, ContrastFit};
use crate::linalg::{columns, condition_number, guarded_solve, trace_inv_mul, weighted_gram, MAX_CONDITION};
use crate::nuisance::Propensity;
use crate::solvers::{GroupLassoFit, PenalizedFit};

fn check_inputs(ds: &Dataset, contrast: Option<&ContrastSpec>, prop: &Propensity, sigma2: f64) -> Result<(), CriterionError> {
    ds.validate()?;
    prop.check_shape(ds)?;
    if let Some(c) = contrast {
        if c.len() != ds.h_count {
            return Err(CriterionError::Missing("contrast length differs from the group count"));
        }
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(CriterionError::Sigma2(format!("variance must be positive, got {sigma2}")));
    }
    Ok(())
}

fn group_rss(ds: &Dataset, prop: &Propensity, fit: &GroupLassoFit) -> f64 {
    group_pseudo_outcomes(ds, prop)
        .iter()
        .zip(&fit.fits)
        .map(|(w, f)| (w - &ds.x * &f.coef).norm_squared())
        .sum()
}

fn group_penalty_spec(fit: &GroupLassoFit, p: usize) -> PenaltySpec {
    PenaltySpec::GroupLasso {
        lambda: fit.lambda,
        groups: covariate_groups(p, fit.fits.len()),
    }
}

/// `sum_i sum_h c_h^2 / e_i^[h] x_i x_i'` restricted to `cols`.
fn contrast_weighted_gram(ds: &Dataset, contrast: &ContrastSpec, prop: &Propensity, cols: &[usize]) -> DMatrix<f64> {
    let e = prop.probs();
    let c = contrast.weights();
    let w: Vec<f64> = (0..ds.n())
        .map(|i| (0..ds.h_count).map(|h| c[h] * c[h] / e[(i, h)]).sum())
        .collect();
    weighted_gram(&columns(&ds.x, cols), &w)
}

/// QICw for the Gaussian contrast pipeline: `RSS / sigma^2 + 2 * (nonzero coefficients)`.
pub fn qicw_gaussian(
    fit: &ContrastFit,
    ds: &Dataset,
    contrast: &ContrastSpec,
    prop: &Propensity,
    sigma2: f64,
) -> Result<CriterionReport, CriterionError> {
    check_inputs(ds, Some(contrast), prop, sigma2)?;
    let (rss, spec) = match fit {
        ContrastFit::Direct(f) => {
            let w = pseudo_outcomes(ds, contrast, prop);
            ((w - &ds.x * &f.coef).norm_squared(), f.penalty.clone())
        }
        ContrastFit::Group(g) => (group_rss(ds, prop, g), group_penalty_spec(g, ds.p())),
    };
    Ok(CriterionReport::new(
        CriterionTag::Qicw,
        spec,
        rss / sigma2,
        2.0 * fit.parameter_count() as f64,
        fit.active_size(),
    ))
}

/// IPCp for whichever penalty produced `fit`.
pub fn ipcp(
    fit: &ContrastFit,
    ds: &Dataset,
    contrast: &ContrastSpec,
    prop: &Propensity,
    sigma2: f64,
) -> Result<CriterionReport, CriterionError> {
    match fit {
        ContrastFit::Direct(f) => match f.penalty {
            PenaltySpec::Lasso { .. } => ipcp_lasso(f, ds, contrast, prop, sigma2),
            PenaltySpec::ElasticNet { .. } => ipcp_enet(f, ds, contrast, prop, sigma2),
            _ => Err(CriterionError::Incompatible {
                criterion: "ipcp",
                pipeline: f.penalty.name(),
            }),
        },
        ContrastFit::Group(g) => ipcp_group(g, ds, prop, sigma2),
    }
}

/// IPCp for the lasso: `RSS + 2 sigma^2 tr[(X_A'X_A)^{-1} sum_i sum_h c_h^2/e_i^[h] x_iA x_iA']`.
pub fn ipcp_lasso(
    fit: &PenalizedFit,
    ds: &Dataset,
    contrast: &ContrastSpec,
    prop: &Propensity,
    sigma2: f64,
) -> Result<CriterionReport, CriterionError> {
    if !matches!(fit.penalty, PenaltySpec::Lasso { .. }) {
        return Err(CriterionError::Incompatible {
            criterion: "ipcp_lasso",
            pipeline: fit.penalty.name(),
        });
    }
    enet_like(fit, ds, contrast, prop, sigma2, 0.0)
}

/// IPCp for the elastic net on the rescaled coefficient:
/// `RSS + 2 sigma^2 tr[(X_A'X_A + l2 I)^{-1} sum_i sum_h (1 + l2) c_h^2/e_i^[h] x_iA x_iA']`.
pub fn ipcp_enet(
    fit: &PenalizedFit,
    ds: &Dataset,
    contrast: &ContrastSpec,
    prop: &Propensity,
    sigma2: f64,
) -> Result<CriterionReport, CriterionError> {
    let l2 = match fit.penalty {
        PenaltySpec::ElasticNet { lambda2, .. } => lambda2,
        PenaltySpec::Lasso { .. } => 0.0,
        _ => {
            return Err(CriterionError::Incompatible {
                criterion: "ipcp_enet",
                pipeline: fit.penalty.name(),
            })
        }
    };
    enet_like(fit, ds, contrast, prop, sigma2, l2)
}

fn enet_like(
    fit: &PenalizedFit,
    ds: &Dataset,
    contrast: &ContrastSpec,
    prop: &Propensity,
    sigma2: f64,
    l2: f64,
) -> Result<CriterionReport, CriterionError> {
    check_inputs(ds, Some(contrast), prop, sigma2)?;
    let w = pseudo_outcomes(ds, contrast, prop);
    let rss = (w - &ds.x * &fit.coef).norm_squared();
    let act = &fit.active;
    let xa = columns(&ds.x, act);
    let mut gram = xa.transpose() * &xa;
    for k in 0..act.len() {
        gram[(k, k)] += l2;
    }
    let m = contrast_weighted_gram(ds, contrast, prop, act) * (1.0 + l2);
    let tr = trace_inv_mul(&gram, &m, "active Gram")?;
    Ok(CriterionReport::new(
        CriterionTag::Ipcp,
        fit.penalty.clone(),
        rss,
        2.0 * sigma2 * tr,
        act.len(),
    ))
}

/// IPCp for the group lasso over per-group effects.
///
/// With `G = X_A'X_A` and the stacked active coefficients `(theta^[1]_A, ..., theta^[H]_A)`,
/// the Jacobian of the fit in `w^[h']` is `R^{-1} (e_h' (x) G^{-1} X_A')` where
/// `R = I + (lambda/2) blockdiag(G^{-1}) D` and `D` is the Hessian of `sum_j ||theta_j||`.
/// The penalty is `2 sigma^2 sum_h tr[(R^{-1})_hh G^{-1} sum_i x_iA x_iA' / e_i^[h]]`.
pub fn ipcp_group(
    fit: &GroupLassoFit,
    ds: &Dataset,
    prop: &Propensity,
    sigma2: f64,
) -> Result<CriterionReport, CriterionError> {
    check_inputs(ds, None, prop, sigma2)?;
    let hc = ds.h_count;
    if fit.fits.len() != hc {
        return Err(CriterionError::Missing("group fit count differs from the group count"));
    }
    let rss = group_rss(ds, prop, fit);
    let spec = group_penalty_spec(fit, ds.p());
    let act = &fit.active;
    let k = act.len();
    if k == 0 {
        return Ok(CriterionReport::new(CriterionTag::Ipcp, spec, rss, 0.0, 0));
    }
    let e = prop.probs();
    let weights: Vec<Vec<f64>> = (0..hc).map(|h| (0..ds.n()).map(|i| 1.0 / e[(i, h)]).collect()).collect();
    let tr = group_trace(fit, &ds.x, &weights)?;
    Ok(CriterionReport::new(CriterionTag::Ipcp, spec, rss, 2.0 * sigma2 * tr, k))
}

/// `sum_h tr[(R^{-1})_hh G^{-1} sum_i weights[h][i] x_iA x_iA']`.
fn group_trace(fit: &GroupLassoFit, x: &DMatrix<f64>, weights: &[Vec<f64>]) -> Result<f64, CriterionError> {
    let act = &fit.active;
    let k = act.len();
    let hc = fit.fits.len();
    let xa = columns(x, act);
    let gram = xa.transpose() * &xa;
    let ginv = guarded_solve(&gram, &DMatrix::identity(k, k), "active Gram")?;
    let theta = DMatrix::from_fn(hc, k, |h, a| fit.fits[h].coef[act[a]]);
    let d = hc * k;
    let mut dmat = DMatrix::zeros(d, d);
    for a in 0..k {
        let col = theta.column(a);
        let norm = col.norm();
        for h in 0..hc {
            for h2 in 0..hc {
                let delta = if h == h2 { 1.0 } else { 0.0 };
                dmat[(h * k + a, h2 * k + a)] = (delta - col[h] * col[h2] / (norm * norm)) / norm;
            }
        }
    }
    let mut r = DMatrix::identity(d, d);
    for h in 0..hc {
        let rows = &ginv * dmat.view((h * k, 0), (k, d)) * (0.5 * fit.lambda);
        let mut view = r.view_mut((h * k, 0), (k, d));
        view += rows;
    }
    let cond = condition_number(&r);
    if !(cond <= MAX_CONDITION) {
        return Err(CriterionError::Singular("group-lasso Jacobian", cond));
    }
    let rinv = guarded_solve(&r, &DMatrix::identity(d, d), "group-lasso Jacobian")?;
    let mut tr = 0.0;
    for (h, w) in weights.iter().enumerate() {
        let ah = weighted_gram(&xa, w);
        tr += (rinv.view((h * k, h * k), (k, k)) * &ginv * ah).trace();
    }
    Ok(tr)
}
