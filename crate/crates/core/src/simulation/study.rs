//! Selection-performance protocol.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use super::{stat_row, summarize, DgpSpec, SimulationConfig, StatRow};
use crate::criteria::{CriterionTag, NoiseSpec};
use crate::data::{ContrastSpec, PenaltySpec};
use crate::nuisance::{fit_outcome_nuisance, Propensity};
use crate::selection::{lambda_grid, select_many, Pipeline, SelectionPath};

/// Support counts and squared errors of one selected estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SelRecord {
    /// Selected among the true nonzero coefficients.
    pub p1: usize,
    /// Selected among the true zero coefficients.
    pub p2: usize,
    pub sq1: f64,
    pub sq2: f64,
}

/// Criterion name -> record, or the reason selection failed.
pub(crate) type SelOutcome = BTreeMap<String, Result<SelRecord, String>>;

pub(crate) fn score(coef: &[f64], truth: &DVector<f64>) -> SelRecord {
    let mut r = SelRecord {
        p1: 0,
        p2: 0,
        sq1: 0.0,
        sq2: 0.0,
    };
    for (j, &t) in truth.iter().enumerate() {
        let c = coef[j];
        let active = c.abs() > crate::solvers::EPS_ACTIVE;
        if t != 0.0 {
            r.p1 += usize::from(active);
            r.sq1 += (c - t).powi(2);
        } else {
            r.p2 += usize::from(active);
            r.sq2 += c * c;
        }
    }
    r
}

fn record_paths(out: &mut SelOutcome, crits: &[CriterionTag], res: Result<Vec<SelectionPath>, String>, truth: &DVector<f64>) {
    match res {
        Ok(paths) => {
            for p in paths {
                out.insert(p.criterion.name().into(), Ok(score(&p.chosen_entry().coef, truth)));
            }
        }
        Err(e) => {
            for c in crits {
                out.insert(c.name().into(), Err(e.clone()));
            }
        }
    }
}

pub(crate) fn replicate(cfg: &SimulationConfig, rng: &mut ChaCha8Rng) -> Result<SelOutcome, String> {
    let (ds, truth) = cfg.dgp.generate(rng);
    let mut out = SelOutcome::new();
    let pen = PenaltySpec::Lasso { lambda: 1.0 };
    let run = |pl: &Pipeline, crits: &[CriterionTag]| -> Result<Vec<SelectionPath>, String> {
        let grid = lambda_grid(pl, cfg.grid.points, cfg.grid.ratio).map_err(|e| e.to_string())?;
        select_many(pl, crits, &grid).map_err(|e| e.to_string())
    };
    match cfg.dgp {
        DgpSpec::GaussianContrast { .. } => {
            let contrast = ContrastSpec::two_group();
            let prop = Propensity::known(truth.probs.clone()).map_err(|e| e.to_string())?;
            let pl = Pipeline::ipw_gaussian(&ds, &contrast, &prop, NoiseSpec::Known { sigma2: 1.0 }, pen);
            record_paths(&mut out, &cfg.criteria, run(&pl, &cfg.criteria), &truth.coef);
        }
        _ => {
            let family = cfg.dgp.analysis_family().expect("GLM design");
            let prop = Propensity::estimate(&ds).map_err(|e| e.to_string())?;
            let ipw_c: Vec<CriterionTag> = cfg
                .criteria
                .iter()
                .copied()
                .filter(|c| matches!(c, CriterionTag::Qicw | CriterionTag::Ipic))
                .collect();
            let dr_c: Vec<CriterionTag> = cfg
                .criteria
                .iter()
                .copied()
                .filter(|c| matches!(c, CriterionTag::DrAic | CriterionTag::Dric))
                .collect();
            if !ipw_c.is_empty() {
                let pl = Pipeline::ipw_glm(&ds, family, &prop, pen.clone()).map_err(|e| e.to_string())?;
                record_paths(&mut out, &ipw_c, run(&pl, &ipw_c), &truth.coef);
            }
            if !dr_c.is_empty() {
                let outcome = fit_outcome_nuisance(&ds, family, true, false).map_err(|e| e.to_string())?;
                let pl = Pipeline::dr_glm(&ds, family, &prop, &outcome, pen).map_err(|e| e.to_string())?;
                record_paths(&mut out, &dr_c, run(&pl, &dr_c), &truth.coef);
            }
        }
    }
    Ok(out)
}

pub(crate) fn aggregate(cfg: &SimulationConfig, setting: &str, outs: &[Result<SelOutcome, String>]) -> Vec<StatRow> {
    let truth = cfg.dgp.coef_truth();
    let n_nonzero = truth.iter().filter(|v| **v != 0.0).count();
    let n_zero = truth.len() - n_nonzero;
    let mut rows = Vec::new();
    for c in &cfg.criteria {
        let recs: Vec<SelRecord> = outs
            .iter()
            .filter_map(|o| o.as_ref().ok())
            .filter_map(|m| m.get(c.name()).and_then(|r| r.as_ref().ok()).copied())
            .collect();
        let failures = cfg.replications - recs.len();
        let col = |f: &dyn Fn(&SelRecord) -> f64| -> Vec<f64> { recs.iter().map(f).collect() };
        let p1 = col(&|r| r.p1 as f64);
        let p2 = col(&|r| r.p2 as f64);
        let p = col(&|r| (r.p1 + r.p2) as f64);
        let m1 = col(&|r| 10.0 * r.sq1.sqrt());
        let m2 = col(&|r| 10.0 * r.sq2.sqrt());
        let m = col(&|r| 10.0 * (r.sq1 + r.sq2).sqrt());
        let name = c.name();
        let gate = |ok: bool, v: &[f64]| if ok { summarize(v) } else { None };
        rows.push(stat_row(setting, name, "p_hat1", gate(n_nonzero > 0, &p1)));
        rows.push(stat_row(setting, name, "rmse1", gate(n_nonzero > 0, &m1)));
        rows.push(stat_row(setting, name, "p_hat2", gate(n_zero > 0, &p2)));
        rows.push(stat_row(setting, name, "rmse2", gate(n_zero > 0, &m2)));
        rows.push(stat_row(setting, name, "p_hat", summarize(&p)));
        rows.push(stat_row(setting, name, "rmse", summarize(&m)));
        rows.push(StatRow {
            setting: setting.to_string(),
            criterion: name.to_string(),
            statistic: "failures".into(),
            mean: Some(failures as f64),
            sd: None,
            n_reps: cfg.replications,
        });
    }
    rows
}
