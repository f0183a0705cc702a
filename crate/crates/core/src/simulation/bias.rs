//! Bias-by-active-size protocol.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use super::{stat_row, summarize, DgpSpec, SimulationConfig, StatRow, Truth};
use crate::criteria::{loglik, CriterionTag, NoiseSpec};
use crate::data::{ContrastSpec, Dataset, ModelFamily, PenaltySpec};
use crate::estimators::linear_predictors;
use crate::nuisance::{fit_outcome_nuisance, Propensity};
use crate::selection::{evaluate, fit_path, lambda_grid, PathFit, Pipeline};

/// Terms of the squared-error risk decomposition for one contrast fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianRiskTerms {
    /// `sum_i (w_i - x_i' theta)^2`.
    pub rss: f64,
    /// `sum_i (E[w_i | t, x, z] - x_i' theta)^2`.
    pub risk: f64,
    /// `sum_i (w_i - E[w_i | t, x, z])^2`, free of the fit.
    pub constant: f64,
    /// `2 sum_i (w_i - E[w_i | t, x, z]) x_i' theta`.
    pub third: f64,
}

/// Risk terms at `theta` given the true conditional means and propensities.
pub fn gaussian_risk_terms(
    ds: &Dataset,
    truth: &Truth,
    contrast: &ContrastSpec,
    theta: &DVector<f64>,
) -> GaussianRiskTerms {
    let c = contrast.weights();
    let fitted = &ds.x * theta;
    let mut out = GaussianRiskTerms {
        rss: 0.0,
        risk: 0.0,
        constant: 0.0,
        third: 0.0,
    };
    for i in 0..ds.n() {
        let g = ds.group0(i);
        let scale = c[g] / truth.probs[(i, g)];
        let w = scale * ds.y[i];
        let ew = scale * truth.cond_mean[(i, g)];
        out.rss += (w - fitted[i]).powi(2);
        out.risk += (ew - fitted[i]).powi(2);
        out.constant += (w - ew).powi(2);
        out.third += 2.0 * (w - ew) * fitted[i];
    }
    out
}

/// `sum_i w_i {l(y_i; eta_i) - l(y_i; 0)}` at the observed group.
fn weighted_kernel(ds: &Dataset, weights: &[f64], family: &ModelFamily, coef: &DVector<f64>) -> f64 {
    let eta = linear_predictors(&ds.x, coef, ds.h_count);
    (0..ds.n())
        .map(|i| {
            let e = eta[(i, ds.group0(i))];
            weights[i] * (loglik(family, ds.y[i], e) - loglik(family, ds.y[i], 0.0))
        })
        .sum()
}

/// Row name -> value per active-set size (index = size).
pub(crate) type Buckets = BTreeMap<String, Vec<Option<f64>>>;

/// First (largest-lambda) grid index attaining each active-set size.
fn first_attainment(fits: &[Result<PathFit, crate::error::SolverError>], d: usize) -> Vec<Option<usize>> {
    let mut first = vec![None; d + 1];
    for (k, f) in fits.iter().enumerate() {
        if let Ok(f) = f {
            let a = f.active_size();
            if a <= d && first[a].is_none() {
                first[a] = Some(k);
            }
        }
    }
    first
}

pub(crate) fn replicate(cfg: &SimulationConfig, rng: &mut ChaCha8Rng) -> Result<Buckets, String> {
    match cfg.dgp {
        DgpSpec::GaussianContrast { .. } => gaussian_replicate(cfg, rng),
        _ => glm_replicate(cfg, rng),
    }
}

fn gaussian_replicate(cfg: &SimulationConfig, rng: &mut ChaCha8Rng) -> Result<Buckets, String> {
    let (ds, truth) = cfg.dgp.generate(rng);
    let contrast = ContrastSpec::two_group();
    let prop = Propensity::known(truth.probs.clone()).map_err(|e| e.to_string())?;
    let pl = Pipeline::ipw_gaussian(
        &ds,
        &contrast,
        &prop,
        NoiseSpec::Known { sigma2: 1.0 },
        PenaltySpec::Lasso { lambda: 1.0 },
    );
    let grid = lambda_grid(&pl, cfg.grid.points, cfg.grid.ratio).map_err(|e| e.to_string())?;
    let fits = fit_path(&pl, &grid);
    let d = ds.p();
    let mut out = Buckets::new();
    out.insert("true".into(), vec![None; d + 1]);
    for c in &cfg.criteria {
        out.insert(c.name().into(), vec![None; d + 1]);
    }
    for (a, k) in first_attainment(&fits, d).into_iter().enumerate() {
        let Some(k) = k else { continue };
        let fit = fits[k].as_ref().expect("attained entries are fits");
        let theta = fit.coefficients(Some(&contrast));
        out.get_mut("true").expect("row")[a] = Some(gaussian_risk_terms(&ds, &truth, &contrast, &theta).third);
        for (c, r) in cfg.criteria.iter().zip(evaluate(&pl, fit, &cfg.criteria, Some(1.0))) {
            if let Ok(r) = r {
                out.get_mut(c.name()).expect("row")[a] = Some(r.penalty);
            }
        }
    }
    Ok(out)
}

fn glm_replicate(cfg: &SimulationConfig, rng: &mut ChaCha8Rng) -> Result<Buckets, String> {
    let (ds, _) = cfg.dgp.generate(rng);
    let (copy, copy_truth) = cfg.dgp.generate(rng);
    let family = cfg.dgp.analysis_family().expect("GLM design");
    let prop = Propensity::estimate(&ds).map_err(|e| e.to_string())?;
    let outcome = fit_outcome_nuisance(&ds, family, true, false).map_err(|e| e.to_string())?;
    let pen = PenaltySpec::Lasso { lambda: 1.0 };
    let ipw = Pipeline::ipw_glm(&ds, family, &prop, pen.clone()).map_err(|e| e.to_string())?;
    let dr = Pipeline::dr_glm(&ds, family, &prop, &outcome, pen).map_err(|e| e.to_string())?;
    let train_w: Vec<f64> = prop.observed(&ds).iter().map(|e| 1.0 / e).collect();
    let copy_w: Vec<f64> = (0..copy.n())
        .map(|i| 1.0 / copy_truth.probs[(i, copy.group0(i))])
        .collect();
    let d = ds.p() * ds.h_count;
    let mut out = Buckets::new();
    let paths: [(&Pipeline, &str, Vec<CriterionTag>); 2] = [
        (
            &ipw,
            "true1",
            cfg.criteria
                .iter()
                .copied()
                .filter(|c| matches!(c, CriterionTag::Qicw | CriterionTag::Ipic))
                .collect(),
        ),
        (
            &dr,
            "true2",
            cfg.criteria
                .iter()
                .copied()
                .filter(|c| matches!(c, CriterionTag::DrAic | CriterionTag::Dric))
                .collect(),
        ),
    ];
    for (pl, true_name, crits) in paths {
        let grid = lambda_grid(pl, cfg.grid.points, cfg.grid.ratio).map_err(|e| e.to_string())?;
        let fits = fit_path(pl, &grid);
        out.insert(true_name.into(), vec![None; d + 1]);
        for c in &crits {
            out.insert(c.name().into(), vec![None; d + 1]);
        }
        for (a, k) in first_attainment(&fits, d).into_iter().enumerate() {
            let Some(k) = k else { continue };
            let fit = fits[k].as_ref().expect("attained entries are fits");
            let coef = fit.coefficients(None);
            let t = -2.0
                * (weighted_kernel(&copy, &copy_w, &family, &coef) - weighted_kernel(&ds, &train_w, &family, &coef));
            out.get_mut(true_name).expect("row")[a] = Some(t);
            for (c, r) in crits.iter().zip(evaluate(pl, fit, &crits, None)) {
                if let Ok(r) = r {
                    out.get_mut(c.name()).expect("row")[a] = Some(r.penalty);
                }
            }
        }
    }
    Ok(out)
}

/// Difference of two bucket means with its standard error; the samples may overlap.
fn increment(a: &[Option<f64>], b: &[Option<f64>]) -> (Option<f64>, Option<f64>, usize) {
    let va: Vec<f64> = a.iter().flatten().copied().collect();
    let vb: Vec<f64> = b.iter().flatten().copied().collect();
    let (Some(sa), Some(sb)) = (summarize(&va), summarize(&vb)) else {
        return (None, None, 0);
    };
    let both: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .collect();
    let value = sa.mean - sb.mean;
    let se = match (sa.sd, sb.sd) {
        (Some(da), Some(db)) => {
            let nab = both.len() as f64;
            let cov = if both.len() > 1 {
                let ma = both.iter().map(|p| p.0).sum::<f64>() / nab;
                let mb = both.iter().map(|p| p.1).sum::<f64>() / nab;
                both.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>() / (nab - 1.0)
            } else {
                0.0
            };
            let (na, nb) = (sa.n as f64, sb.n as f64);
            let var = da * da / na + db * db / nb - 2.0 * cov * nab / (na * nb);
            Some(var.max(0.0).sqrt())
        }
        _ => None,
    };
    (Some(value), se, both.len())
}

pub(crate) fn aggregate(cfg: &SimulationConfig, setting: &str, outs: &[Result<Buckets, String>]) -> Vec<StatRow> {
    let ok: Vec<&Buckets> = outs.iter().filter_map(|o| o.as_ref().ok()).collect();
    let d = match cfg.dgp {
        DgpSpec::GaussianContrast { p, .. } => p,
        _ => cfg.dgp.p() * cfg.dgp.h_count(),
    };
    let mut names: Vec<String> = match cfg.dgp {
        DgpSpec::GaussianContrast { .. } => vec!["true".into()],
        _ => vec!["true1".into(), "true2".into()],
    };
    names.extend(cfg.criteria.iter().map(|c| c.name().to_string()));
    let mut rows = Vec::new();
    for name in &names {
        let cols: Vec<Vec<Option<f64>>> = (0..=d)
            .map(|j| ok.iter().map(|b| b.get(name).and_then(|v| v[j])).collect())
            .collect();
        for (j, col) in cols.iter().enumerate() {
            let v: Vec<f64> = col.iter().flatten().copied().collect();
            rows.push(stat_row(setting, name, format!("bucket_{j}"), summarize(&v)));
        }
        for j in 1..=d {
            let (value, se, n) = increment(&cols[j], &cols[j - 1]);
            rows.push(StatRow {
                setting: setting.to_string(),
                criterion: name.clone(),
                statistic: format!("increment_{j}"),
                mean: value,
                sd: se,
                n_reps: n,
            });
        }
    }
    rows
}
