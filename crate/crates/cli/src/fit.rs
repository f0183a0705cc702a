//! `scs fit`: one penalized fit at a given lambda.

use std::path::PathBuf;

use clap::Args;
use scs_core::criteria::{CriterionReport, CriterionTag};
use scs_core::selection::{evaluate, fit_path, pipeline_sigma2, PathFit};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::write_json;
use crate::manifest::RunManifest;
use crate::model::{Inputs, ModelArgs};

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Regularization level; lambda_max when absent.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Criteria to report at this fit.
    #[arg(long, value_delimiter = ',')]
    pub criterion: Vec<CriterionTag>,
    /// JSON report path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub manifest: RunManifest,
    pub pipeline: String,
    pub penalty: scs_core::PenaltySpec,
    pub lambda: f64,
    pub lambda_max: f64,
    pub coefficients: Vec<Coefficient>,
    pub active: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub flags: Vec<String>,
    pub criteria: Vec<CriterionReport>,
}

fn fit_flags(f: &PathFit) -> (usize, f64, Vec<String>) {
    let pf = match f {
        PathFit::Glm(g) => g,
        PathFit::Contrast(scs_core::estimators::ContrastFit::Direct(g)) => g,
        PathFit::Contrast(c) => return (0, c.objective_value(), Vec::new()),
    };
    let mut flags = Vec::new();
    if pf.rank_deficient {
        flags.push("rank_deficient".to_string());
    }
    if pf.eta_clipped {
        flags.push("eta_clipped".to_string());
    }
    for j in &pf.degenerate_columns {
        flags.push(format!("degenerate_column:{j}"));
    }
    (pf.iterations, pf.objective_value, flags)
}

pub fn build_report(args: &FitArgs, inputs: &Inputs, manifest: RunManifest) -> CliResult<FitReport> {
    let pl = inputs.pipeline()?;
    let lambda_max = pl.lambda_max()?;
    let lambda = args.lambda.unwrap_or(lambda_max);
    let pen = pl.penalty.with_lambda(lambda);
    pen.validate(None)?;
    let fit = fit_path(&pl, std::slice::from_ref(&pen))
        .pop()
        .expect("one grid point")?;
    let criteria = if args.criterion.is_empty() {
        Vec::new()
    } else {
        let sigma2 = pipeline_sigma2(&pl)?;
        evaluate(&pl, &fit, &args.criterion, sigma2)
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?
    };
    let contrast = matches!(pl.kind, scs_core::selection::PipelineKind::IpwGaussian { .. }).then_some(&inputs.contrast);
    let coef = fit.coefficients(contrast);
    let active = match &fit {
        PathFit::Contrast(c) => c.active().to_vec(),
        PathFit::Glm(g) => g.active.clone(),
    };
    let (iterations, objective, flags) = fit_flags(&fit);
    Ok(FitReport {
        manifest: manifest.finish(),
        pipeline: pl.name().to_string(),
        penalty: fit_penalty(&fit).unwrap_or(pen),
        lambda,
        lambda_max,
        coefficients: inputs
            .coef_names()
            .into_iter()
            .zip(coef.iter())
            .map(|(name, &value)| Coefficient { name, value })
            .collect(),
        active,
        converged: fit.converged(),
        iterations,
        objective,
        flags,
        criteria,
    })
}

fn fit_penalty(f: &PathFit) -> Option<scs_core::PenaltySpec> {
    match f {
        PathFit::Glm(g) => Some(g.penalty.clone()),
        PathFit::Contrast(scs_core::estimators::ContrastFit::Direct(g)) => Some(g.penalty.clone()),
        PathFit::Contrast(_) => None,
    }
}

pub fn run(args: &FitArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start("fit", serde_json::to_value(args)?, None);
    manifest.add_input(&args.model.data)?;
    if let Some(path) = args.model.propensity.strip_prefix("known:") {
        manifest.add_input(path.as_ref())?;
    }
    let inputs = Inputs::load(&args.model)?;
    let report = build_report(args, &inputs, manifest)?;
    if !report.converged {
        log::warn!("solver did not converge at lambda = {}", report.lambda);
    }
    if report.coefficients.iter().any(|c| !c.value.is_finite()) {
        return Err(CliError::Numerical("non-finite coefficient".into()));
    }
    write_json(&report, args.out.as_deref())
}
