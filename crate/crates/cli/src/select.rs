//! `scs select`: regularization path scored by one or more criteria.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use scs_core::criteria::CriterionTag;
use scs_core::selection::{lambda_grid, select_many, SelectionPath, DEFAULT_GRID_POINTS, DEFAULT_GRID_RATIO};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::write_json;
use crate::manifest::RunManifest;
use crate::model::{Inputs, ModelArgs};

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub criterion: Vec<CriterionTag>,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_RATIO)]
    pub grid_ratio: f64,
    /// JSON report path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV mirror of the path table.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectReport {
    pub manifest: RunManifest,
    pub coefficient_names: Vec<String>,
    pub paths: Vec<SelectionPath>,
}

/// Grid of `points` lambdas; a single point means lambda_max alone.
pub fn grid(inputs: &Inputs, points: usize, ratio: f64) -> CliResult<Vec<scs_core::PenaltySpec>> {
    let pl = inputs.pipeline()?;
    match points {
        0 => Err(CliError::input("--grid-points must be at least 1")),
        1 => Ok(vec![pl.penalty.with_lambda(pl.lambda_max()?)]),
        n => Ok(lambda_grid(&pl, n, ratio)?),
    }
}

pub fn select_paths(inputs: &Inputs, criteria: &[CriterionTag], points: usize, ratio: f64) -> CliResult<Vec<SelectionPath>> {
    let pl = inputs.pipeline()?;
    let g = grid(inputs, points, ratio)?;
    Ok(select_many(&pl, criteria, &g)?)
}

pub fn write_path_table<W: Write>(paths: &[SelectionPath], w: W) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["criterion", "lambda", "p_hat", "gof", "penalty", "total", "chosen"])?;
    for p in paths {
        for (k, e) in p.entries.iter().enumerate() {
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let r = e.report.as_ref();
            wtr.write_record([
                p.criterion.name().to_string(),
                e.lambda.to_string(),
                e.active_size.to_string(),
                cell(r.map(|r| r.gof)),
                cell(r.map(|r| r.penalty)),
                cell(r.map(|r| r.total)),
                u8::from(k == p.chosen).to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn run(args: &SelectArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start("select", serde_json::to_value(args)?, None);
    manifest.add_input(&args.model.data)?;
    if let Some(path) = args.model.propensity.strip_prefix("known:") {
        manifest.add_input(path.as_ref())?;
    }
    let inputs = Inputs::load(&args.model)?;
    let paths = select_paths(&inputs, &args.criterion, args.grid_points, args.grid_ratio)?;
    if let Some(t) = &args.table {
        write_path_table(&paths, std::fs::File::create(t)?)?;
    }
    let report = SelectReport {
        manifest: manifest.finish(),
        coefficient_names: inputs.coef_names(),
        paths,
    };
    write_json(&report, args.out.as_deref())
}
