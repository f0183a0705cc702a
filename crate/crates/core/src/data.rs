//! Datasets, contrasts, model families and penalty specifications.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Observed sample: outcome, assigned group, explanatory variables and confounders.
///
/// Group labels are stored 1-based in `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub t: Vec<usize>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub h_count: usize,
    pub trials: Option<u32>,
}

impl Dataset {
    /// Builds and validates a dataset.
    pub fn new(
        y: DVector<f64>,
        t: Vec<usize>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        h_count: usize,
    ) -> Result<Self, DataError> {
        let ds = Dataset {
            y,
            t,
            x,
            z,
            h_count,
            trials: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_trials(mut self, m: u32) -> Result<Self, DataError> {
        if m == 0 {
            return Err(DataError::Invalid("trials must be positive".into()));
        }
        self.trials = Some(m);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    /// Checks every structural invariant; the error names the first violation.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.y.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        if self.h_count == 0 {
            return Err(DataError::Invalid("group count must be at least 1".into()));
        }
        if self.t.len() != n {
            return Err(DataError::DimensionMismatch {
                what: "t",
                expected: n,
                found: self.t.len(),
            });
        }
        if self.x.nrows() != n {
            return Err(DataError::DimensionMismatch {
                what: "x",
                expected: n,
                found: self.x.nrows(),
            });
        }
        if self.z.nrows() != n {
            return Err(DataError::DimensionMismatch {
                what: "z",
                expected: n,
                found: self.z.nrows(),
            });
        }
        if let Some(i) = self.t.iter().position(|&g| g == 0 || g > self.h_count) {
            return Err(DataError::GroupOutOfRange {
                row: i,
                label: self.t[i],
                h_count: self.h_count,
            });
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite("outcome"));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite("x"));
        }
        if self.z.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite("z"));
        }
        if self.trials == Some(0) {
            return Err(DataError::Invalid("trials must be positive".into()));
        }
        Ok(())
    }

    /// 0/1 indicator of membership in group `h` (1-based).
    pub fn group_indicator(&self, h: usize) -> Result<DVector<f64>, DataError> {
        if h == 0 || h > self.h_count {
            return Err(DataError::GroupOutOfRange {
                row: 0,
                label: h,
                h_count: self.h_count,
            });
        }
        Ok(DVector::from_iterator(
            self.n(),
            self.t.iter().map(|&g| if g == h { 1.0 } else { 0.0 }),
        ))
    }

    /// Zero-based group index of sample `i`.
    #[inline]
    pub fn group0(&self, i: usize) -> usize {
        self.t[i] - 1
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.h_count];
        for &g in &self.t {
            c[g - 1] += 1;
        }
        c
    }

    /// Keeps the rows for which `keep` is true.
    pub fn subset(&self, keep: &[bool]) -> Result<Dataset, DataError> {
        let rows: Vec<usize> = (0..self.n()).filter(|&i| keep[i]).collect();
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        let ds = Dataset {
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])),
            t: rows.iter().map(|&i| self.t[i]).collect(),
            x: self.x.select_rows(rows.iter()),
            z: self.z.select_rows(rows.iter()),
            h_count: self.h_count,
            trials: self.trials,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Contrast weights over groups: sum zero, unit squared norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSpec {
    c: Vec<f64>,
}

impl ContrastSpec {
    pub fn new(c: Vec<f64>) -> Result<Self, DataError> {
        if c.is_empty() {
            return Err(DataError::Invalid("contrast is empty".into()));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite("contrast"));
        }
        let s: f64 = c.iter().sum();
        let s2: f64 = c.iter().map(|v| v * v).sum();
        let single = c.len() == 1 && (s2 - 1.0).abs() <= 1e-10;
        if !single && s.abs() > 1e-10 {
            return Err(DataError::Invalid(format!("contrast weights sum to {s}, not 0")));
        }
        if (s2 - 1.0).abs() > 1e-10 {
            return Err(DataError::Invalid(format!(
                "contrast weights have squared norm {s2}, not 1"
            )));
        }
        Ok(ContrastSpec { c })
    }

    /// The single-group "contrast" c = (1), used when H = 1.
    pub fn identity() -> Self {
        ContrastSpec { c: vec![1.0] }
    }

    /// (-1/sqrt 2, 1/sqrt 2): group 2 minus group 1.
    pub fn two_group() -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        ContrastSpec { c: vec![-r, r] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.c
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }
}

/// Outcome family with natural link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelFamily {
    /// Normal outcome; `sigma2 = None` means unknown, to be resolved by a plug-in.
    Gaussian { sigma2: Option<f64> },
    BinomialLogit { m: u32 },
}

impl ModelFamily {
    pub fn validate(&self) -> Result<(), DataError> {
        match *self {
            ModelFamily::Gaussian { sigma2: Some(s) } if !(s > 0.0 && s.is_finite()) => {
                Err(DataError::Invalid(format!("sigma2 must be positive, got {s}")))
            }
            ModelFamily::BinomialLogit { m: 0 } => {
                Err(DataError::Invalid("binomial trials must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Penalty kind with its tuning values. `lambda` is on the scale of the objective it is used in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltySpec {
    Lasso { lambda: f64 },
    /// `groups[k]` is the group id of coefficient `k`.
    GroupLasso { lambda: f64, groups: Vec<usize> },
    ElasticNet { lambda1: f64, lambda2: f64 },
    Scad { lambda: f64, a: f64 },
    McPlus { lambda: f64, gamma: f64 },
}

impl PenaltySpec {
    pub fn validate(&self, dim: Option<usize>) -> Result<(), DataError> {
        let bad = |s: &str| Err(DataError::Invalid(s.to_string()));
        let ok_val = |v: f64| v.is_finite() && v >= 0.0;
        match self {
            PenaltySpec::Lasso { lambda } if !ok_val(*lambda) => bad("lambda must be >= 0"),
            PenaltySpec::ElasticNet { lambda1, lambda2 } if !ok_val(*lambda1) || !ok_val(*lambda2) => {
                bad("elastic-net tuning values must be >= 0")
            }
            PenaltySpec::Scad { lambda, a } if !ok_val(*lambda) || !(*a > 2.0) => {
                bad("scad needs lambda >= 0 and a > 2")
            }
            PenaltySpec::McPlus { lambda, gamma } if !ok_val(*lambda) || !(*gamma > 1.0) => {
                bad("mc+ needs lambda >= 0 and gamma > 1")
            }
            PenaltySpec::GroupLasso { lambda, groups } => {
                if !ok_val(*lambda) {
                    return bad("lambda must be >= 0");
                }
                if let Some(d) = dim {
                    if groups.len() != d {
                        return bad("group map length differs from coefficient dimension");
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// The leading (l1-type) tuning value.
    pub fn lambda(&self) -> f64 {
        match self {
            PenaltySpec::Lasso { lambda }
            | PenaltySpec::GroupLasso { lambda, .. }
            | PenaltySpec::Scad { lambda, .. }
            | PenaltySpec::McPlus { lambda, .. } => *lambda,
            PenaltySpec::ElasticNet { lambda1, .. } => *lambda1,
        }
    }

    /// Same penalty with the leading tuning value replaced.
    pub fn with_lambda(&self, lambda: f64) -> PenaltySpec {
        let mut out = self.clone();
        match &mut out {
            PenaltySpec::Lasso { lambda: l }
            | PenaltySpec::GroupLasso { lambda: l, .. }
            | PenaltySpec::Scad { lambda: l, .. }
            | PenaltySpec::McPlus { lambda: l, .. } => *l = lambda,
            PenaltySpec::ElasticNet { lambda1, .. } => *lambda1 = lambda,
        }
        out
    }

    pub fn is_nonconvex(&self) -> bool {
        matches!(self, PenaltySpec::Scad { .. } | PenaltySpec::McPlus { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PenaltySpec::Lasso { .. } => "lasso",
            PenaltySpec::GroupLasso { .. } => "group_lasso",
            PenaltySpec::ElasticNet { .. } => "elastic_net",
            PenaltySpec::Scad { .. } => "scad",
            PenaltySpec::McPlus { .. } => "mcplus",
        }
    }
}

/// Column centering/scaling record so coefficients can be mapped back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Columns with zero spread; they are centered to zero and left unscaled.
    pub constant: Vec<usize>,
}

impl Standardizer {
    /// Population (divisor n) standard deviation per column.
    pub fn fit(m: &DMatrix<f64>) -> Self {
        let n = m.nrows().max(1) as f64;
        let mut means = Vec::with_capacity(m.ncols());
        let mut scales = Vec::with_capacity(m.ncols());
        let mut constant = Vec::new();
        for j in 0..m.ncols() {
            let col = m.column(j);
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            means.push(mu);
            if sd <= 1e-12 * (1.0 + mu.abs()) {
                scales.push(1.0);
                constant.push(j);
            } else {
                scales.push(sd);
            }
        }
        Standardizer {
            means,
            scales,
            constant,
        }
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for j in 0..out.ncols() {
            for i in 0..out.nrows() {
                out[(i, j)] = (out[(i, j)] - self.means[j]) / self.scales[j];
            }
        }
        out
    }

    /// Maps slopes estimated on the standardized scale back to raw units.
    pub fn unscale_coef(&self, coef: &[f64]) -> Vec<f64> {
        coef.iter().zip(&self.scales).map(|(b, s)| b / s).collect()
    }
}
