//! `scs analyze`: criterion comparison on a named-column observational dataset.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use nalgebra::{DMatrix, DVector};
use scs_core::criteria::{CriterionTag, NoiseSpec};
use scs_core::nuisance::{fit_outcome_nuisance, Propensity};
use scs_core::selection::{lambda_grid, select_many, Pipeline, SelectionPath};
use scs_core::{ContrastSpec, Dataset, ModelFamily, PenaltySpec, Standardizer};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{write_json, Table};
use crate::manifest::RunManifest;
use crate::model::with_constant;

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "re78")]
    pub outcome: String,
    #[arg(long, default_value = "treat")]
    pub treatment: String,
    /// Explanatory variables; every other column when absent.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Propensity confounders; the covariates when absent.
    #[arg(long, value_delimiter = ',')]
    pub confounders: Vec<String>,
    /// Keep rows with `column=value`; repeatable.
    #[arg(long)]
    pub filter: Vec<String>,
    /// Binary outcome: `nonzero` or `threshold:<v>` (1 when the outcome exceeds v).
    #[arg(long)]
    pub binarize: Option<String>,
    /// Center and scale covariates (and a continuous outcome) before fitting.
    #[arg(long)]
    pub standardize: bool,
    /// Append a constant (penalized) column to the covariates.
    #[arg(long)]
    pub intercept: bool,
    #[arg(long, value_delimiter = ',')]
    pub criteria: Vec<CriterionTag>,
    #[arg(long, default_value_t = 100)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub grid_ratio: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Table-shaped CSV of coefficients x10.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binarize {
    Nonzero,
    Threshold(f64),
}

pub fn parse_binarize(s: &str) -> CliResult<Binarize> {
    if s == "nonzero" {
        return Ok(Binarize::Nonzero);
    }
    s.strip_prefix("threshold:")
        .and_then(|v| v.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .map(Binarize::Threshold)
        .ok_or_else(|| CliError::input(format!("--binarize must be 'nonzero' or 'threshold:<v>', got '{s}'")))
}

pub fn parse_filter(s: &str) -> CliResult<(String, f64)> {
    let (col, val) = s
        .split_once('=')
        .ok_or_else(|| CliError::input(format!("--filter expects column=value, got '{s}'")))?;
    let v: f64 = val
        .trim()
        .parse()
        .map_err(|_| CliError::input(format!("--filter value is not numeric: '{val}'")))?;
    Ok((col.trim().to_string(), v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRow {
    /// `effect` for the contrast fit, otherwise `<treatment>=<value>`.
    pub group: String,
    /// Coefficient x10 per covariate, in covariate order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion: CriterionTag,
    pub pipeline: String,
    pub lambda: f64,
    pub p_hat: usize,
    pub total: f64,
    pub rows: Vec<CoefRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub manifest: RunManifest,
    pub mode: String,
    pub n: usize,
    pub group_values: Vec<f64>,
    pub group_sizes: Vec<usize>,
    pub covariates: Vec<String>,
    /// Covariates constant after filtering; reported as 0 and not fitted.
    pub degenerate: Vec<String>,
    pub scale: String,
    pub results: Vec<CriterionResult>,
}

struct Prepared {
    ds: Dataset,
    covariates: Vec<String>,
    fitted: Vec<usize>,
    degenerate: Vec<String>,
    group_values: Vec<f64>,
}

fn constant_cols(m: &DMatrix<f64>) -> BTreeSet<usize> {
    Standardizer::fit(m).constant.into_iter().collect()
}

fn prepare(args: &AnalyzeArgs, tab: &Table, binary: Option<Binarize>) -> CliResult<Prepared> {
    let mut keep = vec![true; tab.n()];
    for f in &args.filter {
        let (col, v) = parse_filter(f)?;
        for (k, x) in tab.column(&col)?.iter().enumerate() {
            keep[k] &= *x == v;
        }
    }
    let tab = tab.filter(&keep);
    if tab.n() == 0 {
        return Err(CliError::input("empty stratum"));
    }
    let reserved = [args.outcome.as_str(), args.treatment.as_str()];
    let covariates: Vec<String> = if args.covariates.is_empty() {
        tab.headers
            .iter()
            .filter(|h| !reserved.contains(&h.as_str()))
            .cloned()
            .collect()
    } else {
        args.covariates.clone()
    };
    let confounders = if args.confounders.is_empty() {
        covariates.clone()
    } else {
        args.confounders.clone()
    };
    let x_all = tab.matrix(&covariates)?;
    let z_all = tab.matrix(&confounders)?;
    let x_const = constant_cols(&x_all);
    let z_const = constant_cols(&z_all);
    let fitted: Vec<usize> = (0..covariates.len()).filter(|j| !x_const.contains(j)).collect();
    let degenerate: Vec<String> = x_const.iter().map(|&j| covariates[j].clone()).collect();
    let z_keep: Vec<usize> = (0..confounders.len()).filter(|j| !z_const.contains(j)).collect();
    let mut x = x_all.select_columns(&fitted);
    let mut z = z_all.select_columns(&z_keep);
    if args.standardize {
        x = Standardizer::fit(&x).apply(&x);
        z = Standardizer::fit(&z).apply(&z);
    }
    if args.intercept {
        x = with_constant(&x);
    }
    let z = with_constant(&z);

    let tcol = tab.column(&args.treatment)?;
    let mut group_values: Vec<f64> = tcol.to_vec();
    group_values.sort_by(f64::total_cmp);
    group_values.dedup();
    if group_values.len() < 2 {
        return Err(CliError::input("need at least two treatment groups after filtering"));
    }
    let t: Vec<usize> = tcol
        .iter()
        .map(|v| group_values.iter().position(|g| g == v).expect("value present") + 1)
        .collect();

    let raw_y = tab.column(&args.outcome)?;
    let y: Vec<f64> = match binary {
        Some(Binarize::Nonzero) => raw_y.iter().map(|v| f64::from(u8::from(*v != 0.0))).collect(),
        Some(Binarize::Threshold(c)) => raw_y.iter().map(|v| f64::from(u8::from(*v > c))).collect(),
        None if args.standardize => {
            let m = DMatrix::from_column_slice(raw_y.len(), 1, raw_y);
            Standardizer::fit(&m).apply(&m).column(0).iter().copied().collect()
        }
        None => raw_y.to_vec(),
    };
    let ds = Dataset::new(DVector::from_vec(y), t, x, z, group_values.len())?;
    let ds = if binary.is_some() { ds.with_trials(1)? } else { ds };
    Ok(Prepared {
        ds,
        covariates,
        fitted,
        degenerate,
        group_values,
    })
}

fn grid(pl: &Pipeline, points: usize, ratio: f64) -> CliResult<Vec<PenaltySpec>> {
    Ok(lambda_grid(pl, points, ratio)?)
}

/// Coefficients x10 with degenerate covariates restored as zero.
fn expand(prep: &Prepared, coef: &[f64], intercept: bool) -> Vec<f64> {
    let mut out = vec![0.0; prep.covariates.len()];
    let off = usize::from(intercept);
    for (k, &j) in prep.fitted.iter().enumerate() {
        out[j] = 10.0 * coef[k + off];
    }
    out
}

fn result_rows(prep: &Prepared, path: &SelectionPath, args: &AnalyzeArgs, contrast_fit: bool) -> CriterionResult {
    let e = path.chosen_entry();
    let width = prep.ds.p();
    let rows = if contrast_fit {
        vec![CoefRow {
            group: "effect".into(),
            values: expand(prep, &e.coef, args.intercept),
        }]
    } else {
        prep.group_values
            .iter()
            .enumerate()
            .map(|(h, g)| CoefRow {
                group: format!("{}={g}", args.treatment),
                values: expand(prep, &e.coef[h * width..(h + 1) * width], args.intercept),
            })
            .collect()
    };
    CriterionResult {
        criterion: path.criterion,
        pipeline: path.pipeline.clone(),
        lambda: e.lambda,
        p_hat: e.active_size,
        total: e.report.as_ref().map_or(f64::NAN, |r| r.total),
        rows,
    }
}

pub fn analyze(args: &AnalyzeArgs, tab: &Table, manifest: RunManifest) -> CliResult<AnalyzeReport> {
    let binary = args.binarize.as_deref().map(parse_binarize).transpose()?;
    let prep = prepare(args, tab, binary)?;
    let ds = &prep.ds;
    let prop = Propensity::estimate(ds)?;
    let pen = PenaltySpec::Lasso { lambda: 1.0 };
    let mut results = Vec::new();
    match binary {
        None => {
            let crits = if args.criteria.is_empty() {
                vec![CriterionTag::Qicw, CriterionTag::Ipcp]
            } else {
                args.criteria.clone()
            };
            if ds.h_count != 2 {
                return Err(CliError::input("continuous analysis needs exactly two treatment groups"));
            }
            let contrast = ContrastSpec::two_group();
            let pl = Pipeline::ipw_gaussian(ds, &contrast, &prop, NoiseSpec::PluginFullModel, pen);
            let g = grid(&pl, args.grid_points, args.grid_ratio)?;
            for p in select_many(&pl, &crits, &g)? {
                results.push(result_rows(&prep, &p, args, true));
            }
        }
        Some(_) => {
            let crits = if args.criteria.is_empty() {
                vec![CriterionTag::Qicw, CriterionTag::Ipic, CriterionTag::Dric]
            } else {
                args.criteria.clone()
            };
            let family = ModelFamily::BinomialLogit { m: 1 };
            let (dr, ipw): (Vec<CriterionTag>, Vec<CriterionTag>) = crits
                .iter()
                .partition(|c| matches!(c, CriterionTag::DrAic | CriterionTag::Dric));
            let mut paths = Vec::new();
            if !ipw.is_empty() {
                let pl = Pipeline::ipw_glm(ds, family, &prop, pen.clone())?;
                let g = grid(&pl, args.grid_points, args.grid_ratio)?;
                paths.extend(select_many(&pl, &ipw, &g)?);
            }
            if !dr.is_empty() {
                let outcome = fit_outcome_nuisance(ds, family, false, false)?;
                let pl = Pipeline::dr_glm(ds, family, &prop, &outcome, pen)?;
                let g = grid(&pl, args.grid_points, args.grid_ratio)?;
                paths.extend(select_many(&pl, &dr, &g)?);
            }
            for c in &crits {
                let p = paths.iter().find(|p| p.criterion == *c).expect("every criterion was selected");
                results.push(result_rows(&prep, p, args, false));
            }
        }
    }
    let group_sizes = ds.group_counts();
    Ok(AnalyzeReport {
        manifest: manifest.finish(),
        mode: if binary.is_some() { "binary" } else { "continuous" }.into(),
        n: ds.n(),
        group_values: prep.group_values.clone(),
        group_sizes,
        covariates: prep.covariates.clone(),
        degenerate: prep.degenerate.clone(),
        scale: if args.standardize { "standardized_x10" } else { "raw_x10" }.into(),
        results,
    })
}

pub fn write_table<W: Write>(r: &AnalyzeReport, w: W) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["criterion".to_string(), "group".to_string()];
    header.extend(r.covariates.iter().cloned());
    header.push("degenerate".into());
    wtr.write_record(&header)?;
    for res in &r.results {
        for row in &res.rows {
            let mut rec = vec![res.criterion.name().to_string(), row.group.clone()];
            rec.extend(row.values.iter().map(|v| format!("{v:.2}")));
            rec.push(r.degenerate.join(";"));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn run(args: &AnalyzeArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start("analyze", serde_json::to_value(args)?, None);
    manifest.add_input(&args.data)?;
    let tab = Table::read(&args.data)?;
    let report = analyze(args, &tab, manifest)?;
    if let Some(t) = &args.table {
        write_table(&report, std::fs::File::create(t)?)?;
    }
    write_json(&report, args.out.as_deref())
}
