//! Monte Carlo studies: bias-by-active-size tables and selection-performance tables.

mod bias;
mod dgp;
mod scheduler;
mod study;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::criteria::CriterionTag;
use crate::error::DataError;

pub use bias::{gaussian_risk_terms, GaussianRiskTerms};
pub use dgp::{DgpSpec, Misspec, Truth};
pub use scheduler::{replicate_rng, run_replicates, Parallelism};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    /// Mean penalty and true bias per active-set size.
    Bias,
    /// Selected model size and estimation error per criterion.
    Selection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub points: usize,
    pub ratio: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { points: 100, ratio: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub dgp: DgpSpec,
    pub study: StudyKind,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub grid: GridConfig,
    pub criteria: Vec<CriterionTag>,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        self.dgp.validate()?;
        if self.replications == 0 {
            return Err(DataError::Invalid("replications must be at least 1".into()));
        }
        if self.grid.points < 2 || !(self.grid.ratio > 0.0 && self.grid.ratio < 1.0) {
            return Err(DataError::Invalid("grid needs >= 2 points and a ratio in (0, 1)".into()));
        }
        if self.criteria.is_empty() {
            return Err(DataError::Invalid("no criteria requested".into()));
        }
        let contrast = matches!(self.dgp, DgpSpec::GaussianContrast { .. });
        for c in &self.criteria {
            let ok = match c {
                CriterionTag::Qicw => true,
                CriterionTag::Ipcp => contrast,
                CriterionTag::Ipic | CriterionTag::DrAic | CriterionTag::Dric => !contrast,
            };
            if !ok {
                return Err(DataError::Invalid(format!("criterion {c} does not apply to {}", self.dgp.label())));
            }
        }
        Ok(())
    }
}

/// One table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub setting: String,
    pub criterion: String,
    pub statistic: String,
    /// `None` when no replicate contributes (e.g. an empty bucket).
    pub mean: Option<f64>,
    /// Standard deviation over replicates; the Monte Carlo standard error for `increment_*` rows.
    pub sd: Option<f64>,
    pub n_reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub setting: String,
    pub config: SimulationConfig,
    pub failed_replicates: usize,
    /// Distinct failure messages, in order of first occurrence.
    pub failures: Vec<String>,
    pub rows: Vec<StatRow>,
}

impl SimulationResult {
    pub fn row(&self, criterion: &str, statistic: &str) -> Option<&StatRow> {
        self.rows
            .iter()
            .find(|r| r.criterion == criterion && r.statistic == statistic)
    }

    pub fn mean(&self, criterion: &str, statistic: &str) -> Option<f64> {
        self.row(criterion, statistic).and_then(|r| r.mean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Summary {
    pub mean: f64,
    pub sd: Option<f64>,
    pub n: usize,
}

pub(crate) fn summarize(v: &[f64]) -> Option<Summary> {
    if v.is_empty() {
        return None;
    }
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Some(Summary { mean, sd, n })
}

pub(crate) fn stat_row(setting: &str, criterion: &str, statistic: impl Into<String>, s: Option<Summary>) -> StatRow {
    StatRow {
        setting: setting.to_string(),
        criterion: criterion.to_string(),
        statistic: statistic.into(),
        mean: s.map(|s| s.mean),
        sd: s.and_then(|s| s.sd),
        n_reps: s.map_or(0, |s| s.n),
    }
}

fn collect_failures<T>(outs: &[Result<T, String>]) -> (usize, Vec<String>) {
    let mut msgs: Vec<String> = Vec::new();
    let mut count = 0;
    for o in outs {
        if let Err(e) = o {
            count += 1;
            if !msgs.contains(e) {
                msgs.push(e.clone());
            }
        }
    }
    (count, msgs)
}

/// Runs one configured study. The result depends only on the configuration.
pub fn run(config: &SimulationConfig, parallelism: Parallelism) -> Result<SimulationResult, DataError> {
    config.validate()?;
    let setting = config.dgp.label();
    log::info!(
        "simulating {setting} ({:?}, {} replicates)",
        config.study,
        config.replications
    );
    let (failed, failures, rows) = match config.study {
        StudyKind::Bias => {
            let outs = run_replicates(config.seed, config.replications, parallelism, |_, rng| {
                bias::replicate(config, rng)
            });
            let (n, msgs) = collect_failures(&outs);
            (n, msgs, bias::aggregate(config, &setting, &outs))
        }
        StudyKind::Selection => {
            let outs = run_replicates(config.seed, config.replications, parallelism, |_, rng| {
                study::replicate(config, rng)
            });
            let (n, msgs) = collect_failures(&outs);
            (n, msgs, study::aggregate(config, &setting, &outs))
        }
    };
    Ok(SimulationResult {
        setting,
        config: config.clone(),
        failed_replicates: failed,
        failures,
        rows,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

/// Writes the table-cell rows of several results as one CSV.
pub fn write_csv<W: Write>(results: &[SimulationResult], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["setting", "criterion", "statistic", "mean", "sd", "n_reps"])?;
    for r in results {
        for row in &r.rows {
            wr.write_record([
                row.setting.as_str(),
                row.criterion.as_str(),
                row.statistic.as_str(),
                &fmt_opt(row.mean),
                &fmt_opt(row.sd),
                &row.n_reps.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub const PRESETS: [&str; 6] = ["table1", "table2", "table3", "table4", "table6", "table7"];

fn logit(p: usize, h: usize, n: usize, m: u32, b: f64, a: f64, g: f64, misspec: Misspec) -> DgpSpec {
    DgpSpec::LogitGlm {
        p,
        h,
        n,
        m,
        beta: b,
        alpha: a,
        gamma: g,
        misspec,
    }
}

fn gauss(p: usize, h: usize, n: usize, b: f64, a: f64, g: f64, misspec: Misspec) -> DgpSpec {
    DgpSpec::GaussianGlm {
        p,
        h,
        n,
        beta: b,
        alpha: a,
        gamma: g,
        misspec,
    }
}

/// The settings of a published table with its replicate count.
pub fn preset(name: &str, seed: u64) -> Option<Vec<SimulationConfig>> {
    use Misspec::*;
    let glm_crit = vec![CriterionTag::Qicw, CriterionTag::Ipic, CriterionTag::DrAic, CriterionTag::Dric];
    let sel_glm = vec![CriterionTag::Qicw, CriterionTag::Ipic, CriterionTag::Dric];
    let (dgps, study, reps, criteria, grid): (Vec<DgpSpec>, StudyKind, usize, Vec<CriterionTag>, GridConfig) = match name
    {
        "table1" => {
            let mut v = Vec::new();
            for p in [8, 16, 32] {
                for n in [40, 120] {
                    for (t1, t2) in [(0.2, 0.2), (0.4, 0.0)] {
                        v.push(DgpSpec::GaussianContrast {
                            p,
                            n,
                            theta1: t1,
                            theta2: t2,
                        });
                    }
                }
            }
            let grid = GridConfig { points: 100, ratio: 1e-4 };
            (v, StudyKind::Bias, 1000, vec![CriterionTag::Qicw, CriterionTag::Ipcp], grid)
        }
        "table2" => {
            let mut v = Vec::new();
            for p in [8, 16, 32] {
                for th in [0.2, 0.4] {
                    for n in [40, 80, 120] {
                        v.push(DgpSpec::GaussianContrast {
                            p,
                            n,
                            theta1: th,
                            theta2: th,
                        });
                    }
                }
            }
            (v, StudyKind::Selection, 200, vec![CriterionTag::Qicw, CriterionTag::Ipcp], GridConfig::default())
        }
        "table3" => {
            let v = vec![
                logit(2, 4, 200, 10, 0.1, 0.1, 0.2, None),
                logit(2, 4, 200, 10, 0.2, 0.1, 0.2, None),
                logit(2, 4, 200, 10, 0.1, 0.2, 0.2, None),
                logit(2, 4, 200, 10, 0.1, 0.2, 0.4, None),
                logit(2, 4, 200, 5, 0.1, 0.2, 0.2, None),
                logit(2, 4, 400, 10, 0.1, 0.1, 0.2, None),
                logit(2, 4, 200, 10, 0.1, 0.1, 0.2, Treatment),
                logit(2, 4, 200, 10, 0.1, 0.1, 0.2, Outcome),
                logit(2, 4, 200, 10, 0.1, 0.1, 0.2, Both),
            ];
            (v, StudyKind::Bias, 200, glm_crit, GridConfig { points: 100, ratio: 1e-4 })
        }
        "table4" => {
            let v = vec![
                logit(2, 4, 200, 10, 0.1, 0.1, 0.2, None),
                logit(2, 4, 200, 10, 0.2, 0.1, 0.2, None),
                logit(2, 4, 200, 10, 0.1, 0.2, 0.2, None),
                logit(2, 4, 200, 10, 0.1, 0.1, 0.4, None),
                logit(2, 4, 400, 10, 0.1, 0.1, 0.2, None),
                logit(2, 4, 200, 5, 0.1, 0.1, 0.2, None),
                logit(2, 6, 200, 10, 0.1, 0.1, 0.2, None),
                logit(2, 8, 200, 10, 0.1, 0.1, 0.2, None),
                logit(3, 4, 200, 10, 0.1, 0.1, 0.2, None),
                logit(4, 4, 200, 10, 0.1, 0.1, 0.2, None),
                logit(2, 4, 200, 10, 0.1, 0.1, 0.2, Treatment),
                logit(2, 4, 200, 10, 0.1, 0.1, 0.2, Outcome),
            ];
            (v, StudyKind::Selection, 200, sel_glm, GridConfig::default())
        }
        "table6" => {
            let v = vec![
                gauss(2, 4, 200, 0.2, 0.2, 0.5, None),
                gauss(2, 4, 200, 0.2, 0.2, 1.0, None),
                gauss(2, 4, 200, 0.2, 0.1, 1.0, None),
                gauss(2, 4, 200, 0.4, 0.2, 1.0, None),
                gauss(2, 4, 400, 0.2, 0.2, 1.0, None),
                gauss(2, 4, 200, 0.2, 0.2, 1.0, Treatment),
                gauss(2, 4, 200, 0.2, 0.2, 1.0, Outcome),
                gauss(2, 4, 200, 0.2, 0.1, 0.5, Both),
                gauss(2, 4, 200, 0.2, 0.2, 1.0, Both),
            ];
            (v, StudyKind::Bias, 200, glm_crit, GridConfig { points: 100, ratio: 1e-4 })
        }
        "table7" => {
            let v = vec![
                gauss(2, 4, 200, 0.2, 0.2, 1.0, None),
                gauss(2, 4, 200, 0.4, 0.2, 1.0, None),
                gauss(2, 4, 200, 0.2, 0.1, 1.0, None),
                gauss(2, 4, 200, 0.2, 0.2, 0.5, None),
                gauss(2, 4, 400, 0.2, 0.2, 1.0, None),
                gauss(2, 6, 200, 0.2, 0.2, 1.0, None),
                gauss(2, 8, 200, 0.2, 0.2, 1.0, None),
                gauss(4, 4, 200, 0.2, 0.2, 1.0, None),
                gauss(2, 4, 200, 0.2, 0.1, 1.0, Treatment),
                gauss(2, 4, 200, 0.2, 0.2, 1.0, Treatment),
                gauss(2, 4, 200, 0.2, 0.2, 0.5, Outcome),
                gauss(2, 4, 200, 0.2, 0.2, 1.0, Outcome),
            ];
            (v, StudyKind::Selection, 200, sel_glm, GridConfig::default())
        }
        _ => return Option::None,
    };
    Some(
        dgps.into_iter()
            .map(|dgp| SimulationConfig {
                dgp,
                study,
                replications: reps,
                seed,
                grid,
                criteria: criteria.clone(),
            })
            .collect(),
    )
}
