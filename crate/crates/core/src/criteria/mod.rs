//! Model-selection criteria for sparse causal-effect estimates.
//!
//! Gaussian contrast fits are scored by QICw and IPCp (lasso, group lasso, elastic net).
//! GLM fits are scored by QICw, IPIC, the doubly robust AIC and DRIC, built from the
//! empirical matrices in [`CriterionMatrices`].

mod cp;
mod info;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{ContrastSpec, Dataset, PenaltySpec};
use crate::error::CriterionError;
use crate::estimators::pseudo_outcomes;
use crate::nuisance::Propensity;

pub use cp::{ipcp, ipcp_enet, ipcp_group, ipcp_lasso, qicw_gaussian};
pub use info::{
    build_matrices, dr_aic, dric, ipic, ipic_nonconvex, loglik, loglik_d1, loglik_d2, qicw_glm, weighted_gof,
    CriterionMatrices, MatrixMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionTag {
    Qicw,
    Ipcp,
    Ipic,
    DrAic,
    Dric,
}

impl CriterionTag {
    pub const ALL: [CriterionTag; 5] = [
        CriterionTag::Qicw,
        CriterionTag::Ipcp,
        CriterionTag::Ipic,
        CriterionTag::DrAic,
        CriterionTag::Dric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CriterionTag::Qicw => "qicw",
            CriterionTag::Ipcp => "ipcp",
            CriterionTag::Ipic => "ipic",
            CriterionTag::DrAic => "dr_aic",
            CriterionTag::Dric => "dric",
        }
    }
}

impl fmt::Display for CriterionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CriterionTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "qicw" => Ok(CriterionTag::Qicw),
            "ipcp" => Ok(CriterionTag::Ipcp),
            "ipic" => Ok(CriterionTag::Ipic),
            "dr_aic" | "draic" => Ok(CriterionTag::DrAic),
            "dric" => Ok(CriterionTag::Dric),
            other => Err(format!("unknown criterion '{other}'")),
        }
    }
}

/// One criterion evaluated at one fit. `total == gof + penalty` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub criterion: CriterionTag,
    pub penalty_spec: PenaltySpec,
    /// Per-sample lambda for GLM fits, total-scale lambda for least-squares fits.
    pub lambda: f64,
    pub gof: f64,
    pub penalty: f64,
    pub total: f64,
    pub active_size: usize,
    pub notes: Vec<String>,
}

impl CriterionReport {
    pub(crate) fn new(
        criterion: CriterionTag,
        penalty_spec: PenaltySpec,
        gof: f64,
        penalty: f64,
        active_size: usize,
    ) -> Self {
        let lambda = penalty_spec.lambda();
        CriterionReport {
            criterion,
            penalty_spec,
            lambda,
            gof,
            penalty,
            total: gof + penalty,
            active_size,
            notes: Vec::new(),
        }
    }

    pub(crate) fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }
}

/// Outcome noise variance for the Gaussian contrast criteria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum NoiseSpec {
    Known { sigma2: f64 },
    /// Residual mean square of the unpenalized IPW least-squares fit.
    PluginFullModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub sigma2: f64,
    /// The plug-in residual variance is zero.
    pub degenerate: bool,
}

pub fn resolve_sigma2(
    noise: &NoiseSpec,
    ds: &Dataset,
    contrast: &ContrastSpec,
    propensity: &Propensity,
) -> Result<NoiseEstimate, CriterionError> {
    match *noise {
        NoiseSpec::Known { sigma2 } => {
            if !(sigma2.is_finite() && sigma2 > 0.0) {
                return Err(CriterionError::Sigma2(format!("known variance must be positive, got {sigma2}")));
            }
            Ok(NoiseEstimate { sigma2, degenerate: false })
        }
        NoiseSpec::PluginFullModel => {
            ds.validate()?;
            propensity.check_shape(ds)?;
            let (n, p) = (ds.n(), ds.p());
            if n <= p {
                return Err(CriterionError::Sigma2(format!("plug-in needs N > p, got N = {n}, p = {p}")));
            }
            let w = pseudo_outcomes(ds, contrast, propensity);
            let gram = ds.x.transpose() * &ds.x;
            let xtw = ds.x.transpose() * &w;
            let theta = crate::linalg::guarded_solve(&gram, &nalgebra::DMatrix::from_column_slice(p, 1, xtw.as_slice()), "full-model Gram")?;
            let fitted: DVector<f64> = &ds.x * theta.column(0);
            let rss = (&w - fitted).norm_squared();
            let s2 = rss / (n - p) as f64;
            let degenerate = s2 <= 1e-14 * w.norm_squared().max(f64::MIN_POSITIVE);
            if degenerate {
                log::warn!("plug-in noise variance is zero");
            }
            Ok(NoiseEstimate { sigma2: s2, degenerate })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn toy() -> (Dataset, Propensity) {
        let x = DMatrix::from_row_slice(5, 1, &[1.0, 2.0, -1.0, 0.5, 1.5]);
        let z = DMatrix::from_row_slice(5, 1, &[0.0; 5]);
        let ds = Dataset::new(DVector::from_row_slice(&[1.0, 2.5, -0.5, 0.0, 2.0]), vec![1, 2, 1, 2, 1], x, z, 2)
            .unwrap();
        let prop = Propensity::known(DMatrix::from_element(5, 2, 0.5)).unwrap();
        (ds, prop)
    }

    #[test]
    fn known_variance_passes_through() {
        let (ds, prop) = toy();
        let c = ContrastSpec::two_group();
        let e = resolve_sigma2(&NoiseSpec::Known { sigma2: 1.0 }, &ds, &c, &prop).unwrap();
        assert_eq!(e.sigma2, 1.0);
        assert!(resolve_sigma2(&NoiseSpec::Known { sigma2: 0.0 }, &ds, &c, &prop).is_err());
    }

    #[test]
    fn plugin_matches_hand_residual_variance() {
        let (ds, prop) = toy();
        let c = ContrastSpec::two_group();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // w_i = c_{t_i} y_i / 0.5
        let w: Vec<f64> = (0..5)
            .map(|i| if ds.t[i] == 1 { -s } else { s } * ds.y[i] * 2.0)
            .collect();
        let xs = [1.0, 2.0, -1.0, 0.5, 1.5];
        let sxx: f64 = xs.iter().map(|v| v * v).sum();
        let sxw: f64 = xs.iter().zip(&w).map(|(a, b)| a * b).sum();
        let th = sxw / sxx;
        let rss: f64 = xs.iter().zip(&w).map(|(a, b)| (b - a * th).powi(2)).sum();
        let e = resolve_sigma2(&NoiseSpec::PluginFullModel, &ds, &c, &prop).unwrap();
        assert!((e.sigma2 - rss / 4.0).abs() < 1e-12);
        assert!(!e.degenerate);
    }

    #[test]
    fn exact_linear_pseudo_outcomes_are_degenerate() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let z = DMatrix::zeros(3, 1);
        // c = (1) single group, e = 1: w = y = 2x
        let ds = Dataset::new(DVector::from_row_slice(&[2.0, 4.0, 6.0]), vec![1, 1, 1], x, z, 1).unwrap();
        let prop = Propensity::known(DMatrix::from_element(3, 1, 1.0)).unwrap();
        let c = ContrastSpec::identity();
        let e = resolve_sigma2(&NoiseSpec::PluginFullModel, &ds, &c, &prop).unwrap();
        assert!(e.degenerate);
    }

    #[test]
    fn plugin_requires_more_rows_than_columns() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let ds = Dataset::new(DVector::from_row_slice(&[1.0, 2.0]), vec![1, 1], x, DMatrix::zeros(2, 1), 1).unwrap();
        let prop = Propensity::known(DMatrix::from_element(2, 1, 1.0)).unwrap();
        assert!(matches!(
            resolve_sigma2(&NoiseSpec::PluginFullModel, &ds, &ContrastSpec::identity(), &prop),
            Err(CriterionError::Sigma2(_))
        ));
    }

    #[test]
    fn tags_round_trip() {
        for t in CriterionTag::ALL {
            assert_eq!(t.name().parse::<CriterionTag>().unwrap(), t);
        }
        assert!("bic".parse::<CriterionTag>().is_err());
    }
}
