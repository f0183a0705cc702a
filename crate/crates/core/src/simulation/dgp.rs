//! Data-generating processes with known truth.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ContrastSpec, Dataset, ModelFamily};
use crate::error::DataError;
use crate::linalg::sigmoid;

/// Which working nuisance model is misspecified relative to the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Misspec {
    #[default]
    None,
    Treatment,
    Outcome,
    Both,
}

impl Misspec {
    pub fn name(self) -> &'static str {
        match self {
            Misspec::None => "none",
            Misspec::Treatment => "treatment",
            Misspec::Outcome => "outcome",
            Misspec::Both => "both",
        }
    }

    fn treatment(self) -> bool {
        matches!(self, Misspec::Treatment | Misspec::Both)
    }

    fn outcome(self) -> bool {
        matches!(self, Misspec::Outcome | Misspec::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dgp", rename_all = "snake_case")]
pub enum DgpSpec {
    /// Two groups, logit assignment in z, `y = x'theta^[h] + z + N(0, 1)`.
    GaussianContrast { p: usize, n: usize, theta1: f64, theta2: f64 },
    /// Binomial(m) outcomes with logit link in `x'beta^[h] + zz'gamma`.
    LogitGlm {
        p: usize,
        h: usize,
        n: usize,
        m: u32,
        beta: f64,
        alpha: f64,
        gamma: f64,
        #[serde(default)]
        misspec: Misspec,
    },
    /// Normal outcomes `x'beta^[h] + zz'gamma + N(0, 1)`.
    GaussianGlm {
        p: usize,
        h: usize,
        n: usize,
        beta: f64,
        alpha: f64,
        gamma: f64,
        #[serde(default)]
        misspec: Misspec,
    },
}

/// Ground truth for one generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// theta* for the contrast DGP, stacked beta (group-major) for the GLM DGPs.
    pub coef: DVector<f64>,
    pub group_coef: Vec<DVector<f64>>,
    /// True assignment probabilities, n x H.
    pub probs: DMatrix<f64>,
    /// E[y^[h] | x, z], n x H.
    pub cond_mean: DMatrix<f64>,
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

impl DgpSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let (p, h, n) = match *self {
            DgpSpec::GaussianContrast { p, n, .. } => {
                if p % 4 != 0 {
                    return Err(DataError::Invalid(format!("p must be a multiple of 4, got {p}")));
                }
                (p, 2, n)
            }
            DgpSpec::LogitGlm { p, h, n, m, .. } => {
                if m == 0 {
                    return Err(DataError::Invalid("m must be positive".into()));
                }
                (p, h, n)
            }
            DgpSpec::GaussianGlm { p, h, n, .. } => (p, h, n),
        };
        if p == 0 || n == 0 || h < 2 {
            return Err(DataError::Invalid(format!("need p, n > 0 and H >= 2, got p={p}, n={n}, H={h}")));
        }
        Ok(())
    }

    pub fn h_count(&self) -> usize {
        match *self {
            DgpSpec::GaussianContrast { .. } => 2,
            DgpSpec::LogitGlm { h, .. } | DgpSpec::GaussianGlm { h, .. } => h,
        }
    }

    pub fn p(&self) -> usize {
        match *self {
            DgpSpec::GaussianContrast { p, .. } | DgpSpec::LogitGlm { p, .. } | DgpSpec::GaussianGlm { p, .. } => p,
        }
    }

    pub fn n(&self) -> usize {
        match *self {
            DgpSpec::GaussianContrast { n, .. } | DgpSpec::LogitGlm { n, .. } | DgpSpec::GaussianGlm { n, .. } => n,
        }
    }

    /// Table-style label, e.g. `(8, 40, 0.2, 0.2)` or `(2, 4, 200, 10)(0.1, 0.1, 0.2)/none`.
    pub fn label(&self) -> String {
        match *self {
            DgpSpec::GaussianContrast { p, n, theta1, theta2 } => {
                format!("({p}, {n}, {}, {})", fmt_num(theta1), fmt_num(theta2))
            }
            DgpSpec::LogitGlm {
                p,
                h,
                n,
                m,
                beta,
                alpha,
                gamma,
                misspec,
            } => format!(
                "({p}, {h}, {n}, {m})({}, {}, {})/{}",
                fmt_num(beta),
                fmt_num(alpha),
                fmt_num(gamma),
                misspec.name()
            ),
            DgpSpec::GaussianGlm {
                p,
                h,
                n,
                beta,
                alpha,
                gamma,
                misspec,
            } => format!(
                "({p}, {h}, {n})({}, {}, {})/{}",
                fmt_num(beta),
                fmt_num(alpha),
                fmt_num(gamma),
                misspec.name()
            ),
        }
    }

    /// Family of the analysis model; the gaussian variance is that of y given x with zz integrated out.
    pub fn analysis_family(&self) -> Option<ModelFamily> {
        match *self {
            DgpSpec::GaussianContrast { .. } => None,
            DgpSpec::LogitGlm { m, .. } => Some(ModelFamily::BinomialLogit { m }),
            DgpSpec::GaussianGlm { gamma, misspec, .. } => {
                let g2 = if misspec.outcome() { 2.0 } else { 1.0 } * gamma * gamma;
                Some(ModelFamily::Gaussian { sigma2: Some(1.0 + g2) })
            }
        }
    }

    pub fn contrast(&self) -> Option<ContrastSpec> {
        match self {
            DgpSpec::GaussianContrast { .. } => Some(ContrastSpec::two_group()),
            _ => None,
        }
    }

    /// Per-group true coefficients.
    pub fn group_coef(&self) -> Vec<DVector<f64>> {
        match *self {
            DgpSpec::GaussianContrast { p, theta1, theta2, .. } => {
                let q = p / 4;
                let t1 = DVector::from_fn(p, |j, _| {
                    if j < q {
                        theta1
                    } else if j < 2 * q {
                        theta2
                    } else {
                        0.0
                    }
                });
                vec![t1.clone(), -t1]
            }
            DgpSpec::LogitGlm { p, h, beta, .. } => (0..h)
                .map(|g| {
                    let base = base_pattern(g, beta);
                    DVector::from_fn(p, |j, _| base[j % 2])
                })
                .collect(),
            DgpSpec::GaussianGlm { p, h, beta, .. } => (0..h)
                .map(|g| {
                    let base = base_pattern(g, beta);
                    let rep = p.div_ceil(2);
                    DVector::from_fn(p, |j, _| base[(j / rep).min(1)])
                })
                .collect(),
        }
    }

    /// Coefficient the estimators target: the contrast effect or the stacked beta.
    pub fn coef_truth(&self) -> DVector<f64> {
        let g = self.group_coef();
        match self {
            DgpSpec::GaussianContrast { .. } => {
                let c = ContrastSpec::two_group();
                &g[0] * c.weights()[0] + &g[1] * c.weights()[1]
            }
            _ => DVector::from_iterator(g.len() * g[0].len(), g.iter().flat_map(|v| v.iter().copied())),
        }
    }

    /// Draws one sample and its truth record.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> (Dataset, Truth) {
        let (p, n, h) = (self.p(), self.n(), self.h_count());
        let group_coef = self.group_coef();
        let coef = self.coef_truth();
        let mut x = DMatrix::zeros(n, p);
        let mut zcol = DMatrix::zeros(n, 1);
        let mut y = DVector::zeros(n);
        let mut t = vec![0usize; n];
        let mut probs = DMatrix::zeros(n, h);
        let mut cond_mean = DMatrix::zeros(n, h);
        for i in 0..n {
            for j in 0..p {
                x[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
            let z: f64 = rng.sample(StandardNormal);
            zcol[(i, 0)] = z;
            let zz2 = (z * z - 1.0) * std::f64::consts::FRAC_1_SQRT_2;
            let xi = x.row(i).transpose();
            let e = match *self {
                DgpSpec::GaussianContrast { .. } => {
                    let e1 = sigmoid(z);
                    vec![e1, 1.0 - e1]
                }
                DgpSpec::LogitGlm { alpha, misspec, .. } | DgpSpec::GaussianGlm { alpha, misspec, .. } => {
                    let a2 = if misspec.treatment() { alpha } else { 0.0 };
                    softmax_ref_group(z * alpha + zz2 * a2, h)
                }
            };
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut g = h - 1;
            for (k, &ek) in e.iter().enumerate() {
                acc += ek;
                if u < acc {
                    g = k;
                    break;
                }
            }
            t[i] = g + 1;
            for k in 0..h {
                probs[(i, k)] = e[k];
            }
            let offset = match *self {
                DgpSpec::GaussianContrast { .. } => z,
                DgpSpec::LogitGlm { gamma, misspec, .. } | DgpSpec::GaussianGlm { gamma, misspec, .. } => {
                    let g2 = if misspec.outcome() { gamma } else { 0.0 };
                    z * gamma + zz2 * g2
                }
            };
            for k in 0..h {
                let lin = xi.dot(&group_coef[k]) + offset;
                cond_mean[(i, k)] = match *self {
                    DgpSpec::LogitGlm { m, .. } => m as f64 * sigmoid(lin),
                    _ => lin,
                };
            }
            y[i] = match *self {
                DgpSpec::LogitGlm { m, .. } => {
                    let pr = cond_mean[(i, g)] / m as f64;
                    Binomial::new(m as u64, pr).expect("valid binomial").sample(rng) as f64
                }
                _ => cond_mean[(i, g)] + rng.sample::<f64, _>(StandardNormal),
            };
        }
        let mut ds = Dataset {
            y,
            t,
            x,
            z: zcol,
            h_count: h,
            trials: None,
        };
        if let DgpSpec::LogitGlm { m, .. } = *self {
            ds.trials = Some(m);
        }
        (
            ds,
            Truth {
                coef,
                group_coef,
                probs,
                cond_mean,
            },
        )
    }
}

/// Group g (0-based) pattern of the two leading components, cycling every four groups.
fn base_pattern(g: usize, b: f64) -> [f64; 2] {
    match g % 4 {
        0 => [2.0 * b, 0.0],
        1 => [0.0, b],
        2 => [-b, 0.0],
        _ => [0.0, -2.0 * b],
    }
}

/// Softmax with score `s` for groups 1..H-1 and 0 for the reference group H.
fn softmax_ref_group(s: f64, h: usize) -> Vec<f64> {
    let m = s.max(0.0);
    let es = (s - m).exp();
    let e0 = (-m).exp();
    let denom = (h - 1) as f64 * es + e0;
    (0..h).map(|k| if k + 1 < h { es / denom } else { e0 / denom }).collect()
}
