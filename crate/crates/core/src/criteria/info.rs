use nalgebra::{DMatrix, DVector};

use super::{CriterionReport, CriterionTag};
use crate::data::{Dataset, ModelFamily, PenaltySpec};
use crate::error::CriterionError;
use crate::estimators::linear_predictors;
use crate::linalg::{guarded_solve, ln_choose, sigmoid, softplus, submatrix, symmetrize, trace_inv_mul};
use crate::nuisance::{OutcomeNuisanceFit, Propensity};
use crate::solvers::penalty::{rho_d1, rho_d2};
use crate::solvers::PenalizedFit;

/// Per-observation log-likelihood `l(y; eta)` including its constant terms.
/// The gaussian variance must already be resolved (NaN otherwise).
pub fn loglik(family: &ModelFamily, y: f64, eta: f64) -> f64 {
    match *family {
        ModelFamily::Gaussian { sigma2 } => {
            let s2 = sigma2.unwrap_or(f64::NAN);
            -(y - eta).powi(2) / (2.0 * s2) - 0.5 * (2.0 * std::f64::consts::PI * s2).ln()
        }
        ModelFamily::BinomialLogit { m } => y * eta - m as f64 * softplus(eta) + ln_choose(m, y),
    }
}

/// d l / d eta.
pub fn loglik_d1(family: &ModelFamily, y: f64, eta: f64) -> f64 {
    match *family {
        ModelFamily::Gaussian { sigma2 } => (y - eta) / sigma2.unwrap_or(f64::NAN),
        ModelFamily::BinomialLogit { m } => y - m as f64 * sigmoid(eta),
    }
}

/// d^2 l / d eta^2 (free of y).
pub fn loglik_d2(family: &ModelFamily, eta: f64) -> f64 {
    match *family {
        ModelFamily::Gaussian { sigma2 } => -1.0 / sigma2.unwrap_or(f64::NAN),
        ModelFamily::BinomialLogit { m } => {
            let p = sigmoid(eta);
            -(m as f64) * p * (1.0 - p)
        }
    }
}

/// b'(eta), the mean of the outcome.
fn mean_fn(family: &ModelFamily, eta: f64) -> f64 {
    match *family {
        ModelFamily::Gaussian { .. } => eta,
        ModelFamily::BinomialLogit { m } => m as f64 * sigmoid(eta),
    }
}

fn phi(family: &ModelFamily) -> Result<f64, CriterionError> {
    match *family {
        ModelFamily::Gaussian { sigma2: Some(s) } if s > 0.0 && s.is_finite() => Ok(s),
        ModelFamily::Gaussian { .. } => Err(CriterionError::Sigma2("gaussian variance is unresolved".into())),
        ModelFamily::BinomialLogit { .. } => Ok(1.0),
    }
}

fn offset_note(family: &ModelFamily) -> &'static str {
    match family {
        ModelFamily::Gaussian { .. } => "gof includes the -log(2 pi sigma^2)/2 constant per observation",
        ModelFamily::BinomialLogit { .. } => "gof includes the log C(m, y) constant per observation",
    }
}

fn check(ds: &Dataset, family: &ModelFamily, prop: &Propensity, fit: &PenalizedFit) -> Result<(), CriterionError> {
    ds.validate()?;
    prop.check_shape(ds)?;
    phi(family)?;
    if fit.coef.len() != ds.p() * ds.h_count {
        return Err(CriterionError::Missing("coefficient length differs from p * H"));
    }
    Ok(())
}

/// `-2 sum_i sum_h (t/e) l(y_i; x_i' beta^[h])`.
pub fn weighted_gof(
    fit: &PenalizedFit,
    ds: &Dataset,
    family: &ModelFamily,
    prop: &Propensity,
) -> Result<f64, CriterionError> {
    check(ds, family, prop, fit)?;
    let eta = linear_predictors(&ds.x, &fit.coef, ds.h_count);
    let e = prop.probs();
    Ok(-2.0
        * (0..ds.n())
            .map(|i| {
                let g = ds.group0(i);
                loglik(family, ds.y[i], eta[(i, g)]) / e[(i, g)]
            })
            .sum::<f64>())
}

/// QICw for GLM fits: weighted deviance plus twice the number of nonzero coefficients.
pub fn qicw_glm(
    fit: &PenalizedFit,
    ds: &Dataset,
    family: &ModelFamily,
    prop: &Propensity,
) -> Result<CriterionReport, CriterionError> {
    let gof = weighted_gof(fit, ds, family, prop)?;
    Ok(
        CriterionReport::new(CriterionTag::Qicw, fit.penalty.clone(), gof, 2.0 * fit.active_size() as f64, fit.active_size())
            .note(offset_note(family)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixMode {
    Ipw,
    Dr,
}

/// Empirical matrices over the full coefficient vector (block-major, `h * p + j`).
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionMatrices {
    pub mode: MatrixMode,
    pub lambda: f64,
    pub active: Vec<usize>,
    pub j_hat: DMatrix<f64>,
    pub q_hat: DMatrix<f64>,
    pub r_hat: Option<DMatrix<f64>>,
    pub k_hat: Option<DMatrix<f64>>,
    pub s_hat: Option<DMatrix<f64>>,
    /// Per group, (dim alpha) x (p H); empty for known propensities.
    pub c1: Vec<DMatrix<f64>>,
    /// Per group, (dim gamma) x (p H).
    pub c2: Vec<DMatrix<f64>>,
}

fn place(v: &DVector<f64>, x: &[f64], p: usize, h: usize, scale: f64) -> DVector<f64> {
    let mut out = v.clone();
    for j in 0..p {
        out[h * p + j] = scale * x[j];
    }
    out
}

fn add_block_outer(m: &mut DMatrix<f64>, x: &[f64], p: usize, h: usize, scale: f64) {
    let off = h * p;
    for a in 0..p {
        let xa = scale * x[a];
        if xa == 0.0 {
            continue;
        }
        for b in 0..p {
            m[(off + a, off + b)] += xa * x[b];
        }
    }
}

/// Builds J, Q and, in doubly robust mode, R, K, C1, C2 and S at the fitted coefficient.
///
/// `outcome` is required in doubly robust mode. C1 is only formed for fitted propensities.
pub fn build_matrices(
    fit: &PenalizedFit,
    ds: &Dataset,
    family: &ModelFamily,
    prop: &Propensity,
    outcome: Option<&OutcomeNuisanceFit>,
    mode: MatrixMode,
) -> Result<CriterionMatrices, CriterionError> {
    check(ds, family, prop, fit)?;
    let phi = phi(family)?;
    let (n, p, hc) = (ds.n(), ds.p(), ds.h_count);
    let d = p * hc;
    let nf = n as f64;
    let eta = linear_predictors(&ds.x, &fit.coef, hc);
    let e = prop.probs();
    let sgn = fit.sign_vector();
    let lambda = fit.penalty.lambda();
    let outcome = match (mode, outcome) {
        (MatrixMode::Dr, None) => return Err(CriterionError::Missing("doubly robust matrices need an outcome model")),
        (_, o) => o,
    };
    let zero = DVector::zeros(d);
    let mut j = DMatrix::zeros(d, d);
    let mut q = DMatrix::zeros(d, d);
    let dr = mode == MatrixMode::Dr;
    let mut r = DMatrix::zeros(d, d);
    let mut k = DMatrix::zeros(d, d);
    let mut u_all = Vec::with_capacity(if dr { n } else { 0 });
    for i in 0..n {
        let xi: Vec<f64> = ds.x.row(i).iter().copied().collect();
        let g = ds.group0(i);
        let eg = e[(i, g)];
        let s = place(&zero, &xi, p, g, loglik_d1(family, ds.y[i], eta[(i, g)]));
        add_block_outer(&mut j, &xi, p, g, -loglik_d2(family, eta[(i, g)]) / eg);
        q += &s * s.transpose() / (eg * eg);
        q -= &sgn * s.transpose() * (lambda / eg);
        if dr {
            let outcome = outcome.expect("checked above");
            let zi = ds.z.row(i).into_owned();
            let u = &s / eg - &sgn * lambda;
            let mut dvec = DVector::zeros(d);
            for h in 0..hc {
                let t = if h == g { 1.0 } else { 0.0 };
                let mu = outcome.mean(&zi, h);
                let ytilde = t / e[(i, h)] * ds.y[i] + (1.0 - t / e[(i, h)]) * mu;
                let b1 = ytilde - mean_fn(family, eta[(i, h)]);
                for jj in 0..p {
                    dvec[h * p + jj] = b1 / phi * xi[jj];
                }
                add_block_outer(&mut k, &xi, p, h, -loglik_d2(family, eta[(i, h)]));
            }
            r += &u * dvec.transpose();
            u_all.push(u);
        }
    }
    j /= nf;
    q /= nf;
    symmetrize(&mut j);
    let mut out = CriterionMatrices {
        mode,
        lambda,
        active: fit.active.clone(),
        j_hat: j,
        q_hat: q,
        r_hat: None,
        k_hat: None,
        s_hat: None,
        c1: Vec::new(),
        c2: Vec::new(),
    };
    if !dr {
        return Ok(out);
    }
    let outcome = outcome.expect("checked above");
    r /= nf;
    k /= nf;
    symmetrize(&mut k);
    let rows: Vec<_> = (0..n).map(|i| ds.z.row(i).into_owned()).collect();
    let prop_fit = prop.fit();
    if let Some(pf) = prop_fit {
        let da = pf.dim();
        let info = pf.information(&ds.z);
        for h in 0..hc {
            let mut num = DMatrix::zeros(da, d);
            for i in (0..n).filter(|&i| ds.group0(i) == h) {
                let res = (ds.y[i] - outcome.mean(&rows[i], h)) / phi / e[(i, h)];
                let sa = pf.score_log_e(&rows[i], h);
                for jj in 0..p {
                    let v = res * ds.x[(i, jj)];
                    for a in 0..da {
                        num[(a, h * p + jj)] += sa[a] * v;
                    }
                }
            }
            out.c1.push(guarded_solve(&info, &(num / nf), "propensity information")?);
        }
    }
    let dg = outcome.dim();
    let info_g = outcome.information(ds);
    for h in 0..hc {
        let mut num = DMatrix::zeros(dg, d);
        for i in 0..n {
            let t = if ds.group0(i) == h { 1.0 } else { 0.0 };
            let a = 1.0 - t / e[(i, h)];
            if a == 0.0 {
                continue;
            }
            let mg = outcome.mean_grad_gamma(&rows[i], h);
            for jj in 0..p {
                let v = a * ds.x[(i, jj)] / phi;
                for c in 0..dg {
                    num[(c, h * p + jj)] += mg[c] * v;
                }
            }
        }
        out.c2.push(guarded_solve(&info_g, &(num / nf), "outcome information")?);
    }
    let mut s = DMatrix::zeros(d, d);
    for i in 0..n {
        let g = ds.group0(i);
        let mut row = outcome.score(ds.y[i], &rows[i], g).transpose() * &out.c2[g];
        if let Some(pf) = prop_fit {
            row += pf.score_log_e(&rows[i], g).transpose() * &out.c1[g];
        }
        s += &u_all[i] * row;
    }
    out.r_hat = Some(r);
    out.k_hat = Some(k);
    out.s_hat = Some(s / nf);
    Ok(out)
}

fn require_lasso(fit: &PenalizedFit, criterion: &'static str) -> Result<(), CriterionError> {
    match fit.penalty {
        PenaltySpec::Lasso { .. } => Ok(()),
        _ => Err(CriterionError::Incompatible {
            criterion,
            pipeline: fit.penalty.name(),
        }),
    }
}

fn check_active(fit: &PenalizedFit, m: &CriterionMatrices) -> Result<(), CriterionError> {
    if m.active != fit.active || m.j_hat.nrows() != fit.coef.len() {
        return Err(CriterionError::Missing("matrices were built for a different fit"));
    }
    Ok(())
}

/// IPIC: weighted deviance plus `2 tr(J_22^{-1} Q_22)`.
pub fn ipic(
    fit: &PenalizedFit,
    m: &CriterionMatrices,
    ds: &Dataset,
    prop: &Propensity,
    family: &ModelFamily,
) -> Result<CriterionReport, CriterionError> {
    require_lasso(fit, "ipic")?;
    check_active(fit, m)?;
    let gof = weighted_gof(fit, ds, family, prop)?;
    let a = &fit.active;
    let tr = trace_inv_mul(&submatrix(&m.j_hat, a), &submatrix(&m.q_hat, a), "J22")?;
    Ok(CriterionReport::new(CriterionTag::Ipic, fit.penalty.clone(), gof, 2.0 * tr, a.len()).note(offset_note(family)))
}

/// Doubly robust AIC: weighted deviance plus `2 tr(J_22^{-1} R_22)`.
pub fn dr_aic(
    fit: &PenalizedFit,
    m: &CriterionMatrices,
    ds: &Dataset,
    prop: &Propensity,
    family: &ModelFamily,
) -> Result<CriterionReport, CriterionError> {
    require_lasso(fit, "dr_aic")?;
    check_active(fit, m)?;
    let r = m.r_hat.as_ref().ok_or(CriterionError::Missing("dr_aic needs doubly robust matrices"))?;
    let gof = weighted_gof(fit, ds, family, prop)?;
    let a = &fit.active;
    let tr = trace_inv_mul(&submatrix(&m.j_hat, a), &submatrix(r, a), "J22")?;
    Ok(CriterionReport::new(CriterionTag::DrAic, fit.penalty.clone(), gof, 2.0 * tr, a.len()).note(offset_note(family)))
}

/// DRIC: weighted deviance plus `2 tr[K_22^{-1} (R_22 + S_22)]`.
pub fn dric(
    fit: &PenalizedFit,
    m: &CriterionMatrices,
    ds: &Dataset,
    prop: &Propensity,
    family: &ModelFamily,
) -> Result<CriterionReport, CriterionError> {
    require_lasso(fit, "dric")?;
    check_active(fit, m)?;
    let missing = CriterionError::Missing("dric needs doubly robust matrices");
    let r = m.r_hat.as_ref().ok_or(missing.clone())?;
    let k = m.k_hat.as_ref().ok_or(missing.clone())?;
    let s = m.s_hat.as_ref().ok_or(missing)?;
    let gof = weighted_gof(fit, ds, family, prop)?;
    let a = &fit.active;
    let tr = trace_inv_mul(&submatrix(k, a), &(submatrix(r, a) + submatrix(s, a)), "K22")?;
    let mut rep = CriterionReport::new(CriterionTag::Dric, fit.penalty.clone(), gof, 2.0 * tr, a.len()).note(offset_note(family));
    if prop.fit().is_none() {
        rep = rep.note("known propensity: the propensity part of S is zero");
    }
    Ok(rep)
}

/// IPIC for separable folded-concave penalties:
/// `2 tr{(J_22 + diag rho'')^{-1} [d rho d rho' + M_22 - (v d rho' + d rho v')_22]}` with
/// `M = (1/N) sum (t/e^2) s s'`, `v = (1/N) sum (t/e) s`, `d rho_j = rho'(|b_j|) sgn(b_j)`.
pub fn ipic_nonconvex(
    fit: &PenalizedFit,
    ds: &Dataset,
    prop: &Propensity,
    family: &ModelFamily,
) -> Result<CriterionReport, CriterionError> {
    match fit.penalty {
        PenaltySpec::Scad { .. } | PenaltySpec::McPlus { .. } | PenaltySpec::Lasso { .. } => {}
        _ => {
            return Err(CriterionError::Incompatible {
                criterion: "ipic_nonconvex",
                pipeline: fit.penalty.name(),
            })
        }
    }
    check(ds, family, prop, fit)?;
    let gof = weighted_gof(fit, ds, family, prop)?;
    let (n, p, hc) = (ds.n(), ds.p(), ds.h_count);
    let d = p * hc;
    let eta = linear_predictors(&ds.x, &fit.coef, hc);
    let e = prop.probs();
    let zero = DVector::zeros(d);
    let mut j = DMatrix::zeros(d, d);
    let mut msum = DMatrix::zeros(d, d);
    let mut v = DVector::zeros(d);
    for i in 0..n {
        let xi: Vec<f64> = ds.x.row(i).iter().copied().collect();
        let g = ds.group0(i);
        let eg = e[(i, g)];
        let s = place(&zero, &xi, p, g, loglik_d1(family, ds.y[i], eta[(i, g)]));
        add_block_outer(&mut j, &xi, p, g, -loglik_d2(family, eta[(i, g)]) / eg);
        msum += &s * s.transpose() / (eg * eg);
        v += &s / eg;
    }
    let nf = n as f64;
    j /= nf;
    msum /= nf;
    v /= nf;
    symmetrize(&mut j);
    let a = &fit.active;
    let drho = DVector::from_iterator(
        a.len(),
        a.iter().map(|&k| rho_d1(&fit.penalty, fit.coef[k]) * fit.coef[k].signum()),
    );
    let mut lhs = submatrix(&j, a);
    for (r, &k) in a.iter().enumerate() {
        lhs[(r, r)] += rho_d2(&fit.penalty, fit.coef[k]);
    }
    let va = DVector::from_iterator(a.len(), a.iter().map(|&k| v[k]));
    let rhs = &drho * drho.transpose() + submatrix(&msum, a) - (&va * drho.transpose() + &drho * va.transpose());
    let tr = trace_inv_mul(&lhs, &rhs, "regularized J22")?;
    Ok(CriterionReport::new(CriterionTag::Ipic, fit.penalty.clone(), gof, 2.0 * tr, a.len()).note(offset_note(family)))
}
