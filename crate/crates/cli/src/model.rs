//! Flags shared by `fit` and `select`, and the owned inputs a pipeline borrows from.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use nalgebra::DMatrix;
use scs_core::criteria::NoiseSpec;
use scs_core::nuisance::{fit_outcome_nuisance, OutcomeNuisanceFit, Propensity};
use scs_core::selection::Pipeline;
use scs_core::{ContrastSpec, Dataset, ModelFamily, PenaltySpec};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineArg {
    IpwGaussian,
    IpwGlm,
    DrGlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    Gaussian,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyArg {
    Lasso,
    GroupLasso,
    ElasticNet,
    Scad,
    Mcplus,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Input CSV with columns y, t, x1..xp, z1..zq.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "ipw-gaussian")]
    pub pipeline: PipelineArg,
    /// Outcome family of the GLM pipelines.
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyArg,
    /// Known noise variance; estimated by the full-model plug-in when absent.
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Binomial trials per observation.
    #[arg(long, default_value_t = 1)]
    pub trials: u32,
    /// Number of treatment groups; defaults to the largest label in `t`.
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long, value_enum, default_value = "lasso")]
    pub penalty: PenaltyArg,
    /// Ridge weight of the elastic net.
    #[arg(long, default_value_t = 0.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 3.7)]
    pub scad_a: f64,
    #[arg(long, default_value_t = 3.0)]
    pub mc_gamma: f64,
    /// Comma-separated contrast weights; defaults to (-1, 1)/sqrt(2) for two groups.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub contrast: Option<Vec<f64>>,
    /// `fit` for a multinomial-logit estimate, or `known:<file>` with columns e1..eH.
    #[arg(long, default_value = "fit")]
    pub propensity: String,
    /// Add a constant column to the confounders used by the nuisance models.
    #[arg(long)]
    pub nuisance_intercept: bool,
    /// Fit one outcome nuisance model per group instead of a pooled one.
    #[arg(long)]
    pub separate_outcome: bool,
}

/// Everything a pipeline borrows.
pub struct Inputs {
    pub dataset: Dataset,
    pub names: Vec<String>,
    pub pipeline: PipelineArg,
    pub family: ModelFamily,
    pub contrast: ContrastSpec,
    pub propensity: Propensity,
    pub outcome: Option<OutcomeNuisanceFit>,
    pub noise: NoiseSpec,
    pub template: PenaltySpec,
}

pub fn with_constant(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    DMatrix::from_fn(n, z.ncols() + 1, |i, j| if j == 0 { 1.0 } else { z[(i, j - 1)] })
}

pub fn penalty_template(a: &ModelArgs) -> CliResult<PenaltySpec> {
    let p = match a.penalty {
        PenaltyArg::Lasso => PenaltySpec::Lasso { lambda: 1.0 },
        PenaltyArg::GroupLasso => PenaltySpec::GroupLasso {
            lambda: 1.0,
            groups: Vec::new(),
        },
        PenaltyArg::ElasticNet => PenaltySpec::ElasticNet {
            lambda1: 1.0,
            lambda2: a.lambda2,
        },
        PenaltyArg::Scad => PenaltySpec::Scad {
            lambda: 1.0,
            a: a.scad_a,
        },
        PenaltyArg::Mcplus => PenaltySpec::McPlus {
            lambda: 1.0,
            gamma: a.mc_gamma,
        },
    };
    p.validate(None)?;
    Ok(p)
}

pub fn resolve_contrast(given: Option<&[f64]>, h: usize) -> CliResult<ContrastSpec> {
    match given {
        Some(c) => Ok(ContrastSpec::new(c.to_vec())?),
        None if h == 2 => Ok(ContrastSpec::two_group()),
        None => Err(CliError::input(format!("--contrast is required with {h} groups"))),
    }
}

pub fn resolve_propensity(spec: &str, ds: &Dataset) -> CliResult<Propensity> {
    if spec == "fit" {
        return Ok(Propensity::estimate(ds)?);
    }
    match spec.strip_prefix("known:") {
        Some(path) => io::read_propensity(path.as_ref(), ds),
        None => Err(CliError::input(format!(
            "--propensity must be 'fit' or 'known:<file>', got '{spec}'"
        ))),
    }
}

impl Inputs {
    pub fn load(a: &ModelArgs) -> CliResult<Inputs> {
        let trials = (a.family == FamilyArg::Logit).then_some(a.trials);
        let (mut ds, names) = io::read_dataset(&a.data, a.groups, trials)?;
        if a.nuisance_intercept {
            ds.z = with_constant(&ds.z);
        }
        Self::build(a, ds, names)
    }

    pub fn build(a: &ModelArgs, ds: Dataset, names: Vec<String>) -> CliResult<Inputs> {
        let family = match a.family {
            FamilyArg::Gaussian => ModelFamily::Gaussian { sigma2: a.sigma2 },
            FamilyArg::Logit => ModelFamily::BinomialLogit { m: a.trials },
        };
        family.validate()?;
        let noise = match a.sigma2 {
            Some(s) => NoiseSpec::Known { sigma2: s },
            None => NoiseSpec::PluginFullModel,
        };
        let contrast = match a.pipeline {
            PipelineArg::IpwGaussian => resolve_contrast(a.contrast.as_deref(), ds.h_count)?,
            _ => ContrastSpec::identity(),
        };
        if a.pipeline == PipelineArg::IpwGaussian && a.family == FamilyArg::Logit {
            return Err(CliError::input("the ipw-gaussian pipeline needs --family gaussian"));
        }
        let template = penalty_template(a)?;
        let propensity = resolve_propensity(&a.propensity, &ds)?;
        let outcome = match a.pipeline {
            PipelineArg::DrGlm => Some(fit_outcome_nuisance(&ds, family, !a.separate_outcome, false)?),
            _ => None,
        };
        Ok(Inputs {
            dataset: ds,
            names,
            pipeline: a.pipeline,
            family,
            contrast,
            propensity,
            outcome,
            noise,
            template,
        })
    }

    pub fn pipeline(&self) -> CliResult<Pipeline<'_>> {
        let pen = self.template.clone();
        Ok(match self.pipeline {
            PipelineArg::IpwGaussian => {
                Pipeline::ipw_gaussian(&self.dataset, &self.contrast, &self.propensity, self.noise, pen)
            }
            PipelineArg::IpwGlm => Pipeline::ipw_glm(&self.dataset, self.family, &self.propensity, pen)?,
            PipelineArg::DrGlm => Pipeline::dr_glm(
                &self.dataset,
                self.family,
                &self.propensity,
                self.outcome.as_ref().expect("dr pipeline has an outcome model"),
                pen,
            )?,
        })
    }

    /// Labels of the reported coefficients: the contrast effect per covariate, or `name[h]` for GLM fits.
    pub fn coef_names(&self) -> Vec<String> {
        match self.pipeline {
            PipelineArg::IpwGaussian => self.names.clone(),
            _ => (1..=self.dataset.h_count)
                .flat_map(|h| self.names.iter().map(move |n| format!("{n}[{h}]")))
                .collect(),
        }
    }
}
