//! Assignment (propensity) and outcome-given-confounder models.
//!
//! The propensity model is a multinomial logit with reference group H. The outcome model
//! is a GLM in the confounders, pooled across groups by default. Conditional expected
//! log-likelihoods drop every beta-free additive constant.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::data::{Dataset, ModelFamily};
use crate::error::{DataError, NuisanceError};
use crate::linalg::{sigmoid, softplus};

/// Propensity clip level.
pub const EPS_PROP: f64 = 1e-3;
const ETA_SEPARATION: f64 = 30.0;
/// A converged fit with a linear predictor beyond this is treated as separated.
const ETA_DIVERGED: f64 = 20.0;
const NEWTON_MAX: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    /// (H-1) x q; row k holds the coefficients of group k+1 against group H.
    pub alpha: DMatrix<f64>,
    pub h_count: usize,
    pub separated: bool,
    pub iterations: usize,
    pub loglik: f64,
}

impl PropensityFit {
    pub fn from_alpha(alpha: DMatrix<f64>, h_count: usize) -> Self {
        PropensityFit {
            alpha,
            h_count,
            separated: false,
            iterations: 0,
            loglik: f64::NAN,
        }
    }

    pub fn q(&self) -> usize {
        self.alpha.ncols()
    }

    /// Length of the stacked parameter vector (group-major).
    pub fn dim(&self) -> usize {
        (self.h_count - 1) * self.q()
    }

    /// Unclipped softmax probabilities for one confounder row.
    pub fn raw_probs(&self, z: &RowDVector<f64>) -> Vec<f64> {
        softmax_ref(&self.alpha, z, self.h_count)
    }

    /// Clipped probabilities, n x H.
    pub fn probs(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(z.nrows(), self.h_count);
        for i in 0..z.nrows() {
            let e = clip_simplex(&self.raw_probs(&z.row(i).into_owned()), EPS_PROP);
            for h in 0..self.h_count {
                out[(i, h)] = e[h];
            }
        }
        out
    }

    /// d log e^[h] / d alpha for zero-based group `h`.
    pub fn score_log_e(&self, z: &RowDVector<f64>, h: usize) -> DVector<f64> {
        let e = self.raw_probs(z);
        let q = self.q();
        let mut s = DVector::zeros(self.dim());
        for k in 0..self.h_count - 1 {
            let coef = if k == h { 1.0 } else { 0.0 } - e[k];
            for l in 0..q {
                s[k * q + l] = coef * z[l];
            }
        }
        s
    }

    /// d^2 (sum_h t^[h] log e^[h]) / d alpha d alpha'; free of t because the indicators sum to one.
    pub fn hessian_t_log_e(&self, z: &RowDVector<f64>) -> DMatrix<f64> {
        let e = self.raw_probs(z);
        let q = self.q();
        let d = self.dim();
        let mut hm = DMatrix::zeros(d, d);
        for k in 0..self.h_count - 1 {
            for k2 in 0..self.h_count - 1 {
                let c = if k == k2 { e[k] } else { 0.0 } - e[k] * e[k2];
                for l in 0..q {
                    for l2 in 0..q {
                        hm[(k * q + l, k2 * q + l2)] = -c * z[l] * z[l2];
                    }
                }
            }
        }
        hm
    }

    /// Mean Fisher information `-(1/N) sum_i Hessian_i`.
    pub fn information(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let mut acc = DMatrix::zeros(d, d);
        for i in 0..z.nrows() {
            acc -= self.hessian_t_log_e(&z.row(i).into_owned());
        }
        acc / z.nrows() as f64
    }
}

fn softmax_ref(alpha: &DMatrix<f64>, z: &RowDVector<f64>, h_count: usize) -> Vec<f64> {
    let mut eta: Vec<f64> = (0..h_count - 1).map(|k| alpha.row(k).dot(z)).collect();
    eta.push(0.0);
    let mx = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = eta.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.iter().map(|v| v / s).collect()
}

/// Clips each probability into [eps, 1-eps] while keeping the total at one; unclipped
/// entries are rescaled proportionally.
pub fn clip_simplex(p: &[f64], eps: f64) -> Vec<f64> {
    let h = p.len();
    if h == 1 {
        return vec![1.0];
    }
    if p.iter().all(|&v| v >= eps && v <= 1.0 - eps) {
        return p.to_vec();
    }
    let free = 1.0 - h as f64 * eps;
    let excess: Vec<f64> = p.iter().map(|&v| (v - eps).max(0.0)).collect();
    let total: f64 = excess.iter().sum();
    if free <= 0.0 || total <= 0.0 {
        return vec![1.0 / h as f64; h];
    }
    excess.iter().map(|&x| eps + free * x / total).collect()
}

/// Multinomial-logit maximum likelihood by damped Newton.
pub fn fit_propensity(ds: &Dataset) -> Result<PropensityFit, NuisanceError> {
    ds.validate()?;
    let q = ds.q();
    let h = ds.h_count;
    if q == 0 {
        return Err(NuisanceError::NoConfounders);
    }
    if let Some(g) = ds.group_counts().iter().position(|&c| c == 0) {
        return Err(NuisanceError::EmptyGroup(g + 1));
    }
    let n = ds.n();
    if h == 1 {
        return Ok(PropensityFit {
            alpha: DMatrix::zeros(0, q),
            h_count: 1,
            separated: false,
            iterations: 0,
            loglik: 0.0,
        });
    }
    let d = (h - 1) * q;
    let rows: Vec<RowDVector<f64>> = (0..n).map(|i| ds.z.row(i).into_owned()).collect();
    let loglik = |a: &DMatrix<f64>| -> f64 {
        (0..n)
            .map(|i| softmax_ref(a, &rows[i], h)[ds.group0(i)].max(1e-300).ln())
            .sum()
    };
    let to_mat = |v: &DVector<f64>| DMatrix::from_fn(h - 1, q, |k, l| v[k * q + l]);
    let mut a = DVector::zeros(d);
    let mut ll = loglik(&to_mat(&a));
    let mut separated = false;
    let mut iters = 0;
    let mut converged = false;
    while iters < NEWTON_MAX {
        iters += 1;
        let am = to_mat(&a);
        let fit = PropensityFit::from_alpha(am.clone(), h);
        let mut g = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        for (i, z) in rows.iter().enumerate() {
            g += fit.score_log_e(z, ds.group0(i));
            hess += fit.hessian_t_log_e(z);
        }
        if g.amax() < 1e-10 * n as f64 {
            converged = true;
            break;
        }
        let step = match (-&hess).cholesky() {
            Some(ch) => ch.solve(&g),
            None => match hess.clone().lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    separated = true;
                    break;
                }
            },
        };
        let mut t = 1.0;
        let mut cand = &a + &step * t;
        let mut ll_new = loglik(&to_mat(&cand));
        while ll_new < ll - 1e-12 * ll.abs() && t > 1e-10 {
            t *= 0.5;
            cand = &a + &step * t;
            ll_new = loglik(&to_mat(&cand));
        }
        a = cand;
        ll = ll_new;
        let eta_max = rows
            .iter()
            .map(|z| to_mat(&a).rows(0, h - 1).clone_owned() * z.transpose())
            .map(|v| v.amax())
            .fold(0.0, f64::max);
        if eta_max > ETA_SEPARATION {
            separated = true;
            a *= ETA_SEPARATION / eta_max;
            ll = loglik(&to_mat(&a));
            break;
        }
        if (&step * t).amax() < 1e-13 {
            converged = true;
            break;
        }
    }
    let eta_max = rows
        .iter()
        .map(|z| (to_mat(&a) * z.transpose()).amax())
        .fold(0.0, f64::max);
    if eta_max > ETA_DIVERGED {
        separated = true;
    }
    if separated {
        log::warn!("propensity model shows separation; coefficients clipped");
    } else if !converged {
        return Err(NuisanceError::NotConverged("propensity"));
    }
    Ok(PropensityFit {
        alpha: to_mat(&a),
        h_count: h,
        separated,
        iterations: iters,
        loglik: ll,
    })
}

/// Propensities either known exactly or from a fitted model; stored clipped.
#[derive(Debug, Clone, PartialEq)]
pub enum Propensity {
    Known(DMatrix<f64>),
    Fitted { fit: PropensityFit, probs: DMatrix<f64> },
}

impl Propensity {
    /// Known n x H probabilities; rows must sum to one within 1e-6.
    pub fn known(probs: DMatrix<f64>) -> Result<Self, DataError> {
        for i in 0..probs.nrows() {
            let row = probs.row(i);
            if row.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                return Err(DataError::Invalid(format!("propensity row {i} outside [0, 1]")));
            }
            if (row.sum() - 1.0).abs() > 1e-6 {
                return Err(DataError::Invalid(format!("propensity row {i} does not sum to 1")));
            }
        }
        let mut clipped = probs.clone();
        for i in 0..probs.nrows() {
            let row: Vec<f64> = probs.row(i).iter().copied().collect();
            let c = clip_simplex(&row, EPS_PROP);
            for h in 0..c.len() {
                clipped[(i, h)] = c[h];
            }
        }
        Ok(Propensity::Known(clipped))
    }

    pub fn fitted(fit: PropensityFit, ds: &Dataset) -> Self {
        let probs = fit.probs(&ds.z);
        Propensity::Fitted { fit, probs }
    }

    /// Fits the multinomial logit on `ds`.
    pub fn estimate(ds: &Dataset) -> Result<Self, NuisanceError> {
        Ok(Self::fitted(fit_propensity(ds)?, ds))
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        match self {
            Propensity::Known(p) => p,
            Propensity::Fitted { probs, .. } => probs,
        }
    }

    pub fn fit(&self) -> Option<&PropensityFit> {
        match self {
            Propensity::Known(_) => None,
            Propensity::Fitted { fit, .. } => Some(fit),
        }
    }

    pub fn check_shape(&self, ds: &Dataset) -> Result<(), DataError> {
        let p = self.probs();
        if p.nrows() != ds.n() || p.ncols() != ds.h_count {
            return Err(DataError::Invalid(format!(
                "propensity matrix is {}x{}, expected {}x{}",
                p.nrows(),
                p.ncols(),
                ds.n(),
                ds.h_count
            )));
        }
        Ok(())
    }

    /// e of the observed group of each sample.
    pub fn observed(&self, ds: &Dataset) -> Vec<f64> {
        (0..ds.n()).map(|i| self.probs()[(i, ds.group0(i))]).collect()
    }
}

/// Outcome model f(y | z; gamma) for the conditional expectations used in DR estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeNuisanceFit {
    pub family: ModelFamily,
    pub pooled: bool,
    pub intercept: bool,
    /// One coefficient vector (pooled) or one per group.
    pub gamma: Vec<DVector<f64>>,
    /// Residual variance per coefficient set (gaussian only, divisor n).
    pub sigma2_gamma: Vec<f64>,
    pub h_count: usize,
}

impl OutcomeNuisanceFit {
    /// Coefficients per set.
    pub fn r0(&self) -> usize {
        self.gamma.first().map_or(0, |g| g.len())
    }

    /// Length of the stacked gamma vector.
    pub fn dim(&self) -> usize {
        self.r0() * self.gamma.len()
    }

    #[inline]
    pub fn set_of(&self, h: usize) -> usize {
        if self.pooled {
            0
        } else {
            h
        }
    }

    pub fn design_row(&self, z: &RowDVector<f64>) -> DVector<f64> {
        design_row(z, self.intercept)
    }

    fn lin(&self, z: &RowDVector<f64>, h: usize) -> f64 {
        self.design_row(z).dot(&self.gamma[self.set_of(h)])
    }

    /// E[y | z; gamma] for zero-based group h.
    pub fn mean(&self, z: &RowDVector<f64>, h: usize) -> f64 {
        let l = self.lin(z, h);
        match self.family {
            ModelFamily::Gaussian { .. } => l,
            ModelFamily::BinomialLogit { m } => m as f64 * sigmoid(l),
        }
    }

    /// d E[y | z; gamma] / d gamma over the stacked gamma.
    pub fn mean_grad_gamma(&self, z: &RowDVector<f64>, h: usize) -> DVector<f64> {
        let zt = self.design_row(z);
        let r0 = self.r0();
        let s = self.set_of(h);
        let factor = match self.family {
            ModelFamily::Gaussian { .. } => 1.0,
            ModelFamily::BinomialLogit { m } => {
                let p = sigmoid(self.lin(z, h));
                m as f64 * p * (1.0 - p)
            }
        };
        let mut g = DVector::zeros(self.dim());
        g.rows_mut(s * r0, r0).copy_from(&(zt * factor));
        g
    }

    /// d log f^[h](y | z; gamma) / d gamma.
    pub fn score(&self, y: f64, z: &RowDVector<f64>, h: usize) -> DVector<f64> {
        let zt = self.design_row(z);
        let r0 = self.r0();
        let s = self.set_of(h);
        let factor = match self.family {
            ModelFamily::Gaussian { .. } => (y - self.lin(z, h)) / self.sigma2_gamma[s],
            ModelFamily::BinomialLogit { .. } => y - self.mean(z, h),
        };
        let mut g = DVector::zeros(self.dim());
        g.rows_mut(s * r0, r0).copy_from(&(zt * factor));
        g
    }

    /// d^2 log f^[h] / d gamma d gamma' (free of y for both families).
    pub fn hessian(&self, z: &RowDVector<f64>, h: usize) -> DMatrix<f64> {
        let zt = self.design_row(z);
        let r0 = self.r0();
        let s = self.set_of(h);
        let factor = match self.family {
            ModelFamily::Gaussian { .. } => -1.0 / self.sigma2_gamma[s],
            ModelFamily::BinomialLogit { m } => {
                let p = sigmoid(self.lin(z, h));
                -(m as f64) * p * (1.0 - p)
            }
        };
        let mut hm = DMatrix::zeros(self.dim(), self.dim());
        hm.view_mut((s * r0, s * r0), (r0, r0)).copy_from(&(&zt * zt.transpose() * factor));
        hm
    }

    /// Mean information over observed groups: `-(1/N) sum_i Hessian_i^[t_i]`.
    pub fn information(&self, ds: &Dataset) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.dim(), self.dim());
        for i in 0..ds.n() {
            acc -= self.hessian(&ds.z.row(i).into_owned(), ds.group0(i));
        }
        acc / ds.n() as f64
    }

    /// Conditional expected log-likelihood oracle for sample `z` in group `h` under the
    /// analysis family `analysis` (which supplies sigma^2 for gaussian outcomes).
    pub fn oracle(&self, z: &RowDVector<f64>, h: usize, analysis: &ModelFamily) -> CondLoglikOracle {
        let s = self.set_of(h);
        CondLoglikOracle {
            family: *analysis,
            mean: self.mean(z, h),
            mean_grad_gamma: self.mean_grad_gamma(z, h),
            sigma2_gamma: self.sigma2_gamma.get(s).copied().unwrap_or(0.0),
        }
    }
}

fn design_row(z: &RowDVector<f64>, intercept: bool) -> DVector<f64> {
    if intercept {
        let mut v = DVector::zeros(z.len() + 1);
        v[0] = 1.0;
        for (k, val) in z.iter().enumerate() {
            v[k + 1] = *val;
        }
        v
    } else {
        z.transpose()
    }
}

/// Maximizes `sum_i log f^[t_i](y_i | z_i; gamma)`.
pub fn fit_outcome_nuisance(
    ds: &Dataset,
    family: ModelFamily,
    pooled: bool,
    intercept: bool,
) -> Result<OutcomeNuisanceFit, NuisanceError> {
    ds.validate()?;
    family.validate()?;
    let r0 = ds.q() + usize::from(intercept);
    if r0 == 0 {
        return Err(NuisanceError::NoConfounders);
    }
    let sets = if pooled { 1 } else { ds.h_count };
    let mut gamma = Vec::with_capacity(sets);
    let mut sigma2 = Vec::new();
    for s in 0..sets {
        let rows: Vec<usize> = (0..ds.n()).filter(|&i| pooled || ds.group0(i) == s).collect();
        if rows.is_empty() {
            return Err(NuisanceError::EmptyGroup(s + 1));
        }
        let zt = DMatrix::from_fn(rows.len(), r0, |r, c| {
            design_row(&ds.z.row(rows[r]).into_owned(), intercept)[c]
        });
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| ds.y[i]));
        match family {
            ModelFamily::Gaussian { .. } => {
                let g = zt.transpose() * &zt;
                let rhs = zt.transpose() * &y;
                let sol = g
                    .cholesky()
                    .map(|c| c.solve(&rhs))
                    .ok_or(NuisanceError::RankDeficient("outcome"))?;
                let rss = (&y - &zt * &sol).norm_squared();
                let s2 = rss / rows.len() as f64;
                gamma.push(sol);
                sigma2.push(if s2 > 0.0 { s2 } else { f64::MIN_POSITIVE });
            }
            ModelFamily::BinomialLogit { m } => {
                gamma.push(logistic_mle(&zt, &y, m as f64)?);
            }
        }
    }
    Ok(OutcomeNuisanceFit {
        family,
        pooled,
        intercept,
        gamma,
        sigma2_gamma: sigma2,
        h_count: ds.h_count,
    })
}

fn logistic_mle(zt: &DMatrix<f64>, y: &DVector<f64>, m: f64) -> Result<DVector<f64>, NuisanceError> {
    let r = zt.ncols();
    let ll = |g: &DVector<f64>| -> f64 {
        let eta = zt * g;
        eta.iter().zip(y.iter()).map(|(e, yy)| yy * e - m * softplus(*e)).sum()
    };
    let mut g = DVector::zeros(r);
    let mut cur = ll(&g);
    for _ in 0..NEWTON_MAX {
        let eta = zt * &g;
        let mut grad = DVector::zeros(r);
        let mut info = DMatrix::zeros(r, r);
        for i in 0..zt.nrows() {
            let p = sigmoid(eta[i]);
            let zi = zt.row(i).transpose();
            grad += &zi * (y[i] - m * p);
            info += &zi * zi.transpose() * (m * p * (1.0 - p));
        }
        if grad.amax() < 1e-10 * zt.nrows() as f64 {
            return Ok(g);
        }
        let step = info
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or(NuisanceError::RankDeficient("outcome"))?;
        let mut t = 1.0;
        let mut cand = &g + &step;
        let mut next = ll(&cand);
        while next < cur - 1e-12 * cur.abs() && t > 1e-10 {
            t *= 0.5;
            cand = &g + &step * t;
            next = ll(&cand);
        }
        g = cand;
        cur = next;
        if (&step * t).amax() < 1e-13 {
            return Ok(g);
        }
        if (zt * &g).amax() > ETA_SEPARATION {
            log::warn!("outcome nuisance model shows separation");
            return Ok(g);
        }
    }
    Err(NuisanceError::NotConverged("outcome"))
}

/// `E{ l(beta) | gamma }` as a function of the linear predictor `x'beta`, with its derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct CondLoglikOracle {
    pub family: ModelFamily,
    /// E[y | z; gamma].
    pub mean: f64,
    pub mean_grad_gamma: DVector<f64>,
    pub sigma2_gamma: f64,
}

impl CondLoglikOracle {
    fn sigma2(&self) -> f64 {
        match self.family {
            ModelFamily::Gaussian { sigma2 } => sigma2.unwrap_or(1.0),
            ModelFamily::BinomialLogit { .. } => 1.0,
        }
    }

    pub fn cond_loglik(&self, eta: f64) -> f64 {
        match self.family {
            ModelFamily::Gaussian { .. } => {
                -((self.mean - eta).powi(2) + self.sigma2_gamma) / (2.0 * self.sigma2())
            }
            ModelFamily::BinomialLogit { m } => self.mean * eta - m as f64 * softplus(eta),
        }
    }

    /// d/d eta.
    pub fn grad_eta(&self, eta: f64) -> f64 {
        match self.family {
            ModelFamily::Gaussian { .. } => (self.mean - eta) / self.sigma2(),
            ModelFamily::BinomialLogit { m } => self.mean - m as f64 * sigmoid(eta),
        }
    }

    /// d^2/d eta^2.
    pub fn hess_eta(&self, eta: f64) -> f64 {
        match self.family {
            ModelFamily::Gaussian { .. } => -1.0 / self.sigma2(),
            ModelFamily::BinomialLogit { m } => {
                let p = sigmoid(eta);
                -(m as f64) * p * (1.0 - p)
            }
        }
    }

    pub fn cond_loglik_grad_beta(&self, x: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
        x * self.grad_eta(x.dot(beta))
    }

    pub fn cond_loglik_hess_beta(&self, x: &DVector<f64>, beta: &DVector<f64>) -> DMatrix<f64> {
        x * x.transpose() * self.hess_eta(x.dot(beta))
    }

    /// d^2 E{l} / d gamma d beta' (rows gamma, columns beta).
    pub fn cond_loglik_cross_grad_gamma_beta(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let scale = match self.family {
            ModelFamily::Gaussian { .. } => 1.0 / self.sigma2(),
            ModelFamily::BinomialLogit { .. } => 1.0,
        };
        &self.mean_grad_gamma * x.transpose() * scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(y: Vec<f64>, t: Vec<usize>, z: Vec<f64>, q: usize, h: usize) -> Dataset {
        let n = y.len();
        Dataset::new(
            DVector::from_vec(y),
            t,
            DMatrix::zeros(n, 1),
            DMatrix::from_row_slice(n, q, &z),
            h,
        )
        .unwrap()
    }

    #[test]
    fn separation_flagged() {
        let d = ds(vec![0.0; 4], vec![1, 1, 2, 2], vec![1.0, 1.0, -1.0, -1.0], 1, 2);
        let fit = fit_propensity(&d).unwrap();
        assert!(fit.separated);
        let e = fit.probs(&d.z);
        assert!(e.iter().all(|v| *v >= EPS_PROP - 1e-15 && *v <= 1.0 - EPS_PROP + 1e-15));
    }

    #[test]
    fn balanced_labels_give_half() {
        let d = ds(vec![0.0; 4], vec![1, 2, 1, 2], vec![1.0, 1.0, -1.0, -1.0], 1, 2);
        let fit = fit_propensity(&d).unwrap();
        assert!(fit.alpha[(0, 0)].abs() < 1e-10);
        assert!((fit.probs(&d.z)[(0, 0)] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn closed_form_derivatives_at_zero() {
        let fit = PropensityFit::from_alpha(DMatrix::zeros(1, 1), 2);
        let z = RowDVector::from_row_slice(&[1.0]);
        assert!((fit.score_log_e(&z, 0)[0] - 0.5).abs() < 1e-15);
        assert!((fit.score_log_e(&z, 1)[0] + 0.5).abs() < 1e-15);
        assert!((fit.hessian_t_log_e(&z)[(0, 0)] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn gaussian_intercept_only_nuisance() {
        let d = ds(vec![1.0, 3.0], vec![1, 2], vec![], 0, 2);
        let fit = fit_outcome_nuisance(&d, ModelFamily::Gaussian { sigma2: None }, true, true).unwrap();
        assert!((fit.gamma[0][0] - 2.0).abs() < 1e-14);
        assert!((fit.sigma2_gamma[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn binomial_half_proportions_give_zero() {
        let d = ds(vec![2.0; 5], vec![1, 2, 1, 2, 1], vec![], 0, 2);
        let fit = fit_outcome_nuisance(&d, ModelFamily::BinomialLogit { m: 4 }, true, true).unwrap();
        assert!(fit.gamma[0][0].abs() < 1e-12);
    }

    #[test]
    fn clipping_keeps_simplex() {
        let c = clip_simplex(&[0.9995, 0.0004, 0.0001], 1e-3);
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(c.iter().all(|v| *v >= 1e-3 - 1e-15 && *v <= 1.0 - 1e-3 + 1e-15));
        assert_eq!(clip_simplex(&[0.3, 0.7], 1e-3), vec![0.3, 0.7]);
    }

    #[test]
    fn oracle_closed_forms() {
        let o = CondLoglikOracle {
            family: ModelFamily::Gaussian { sigma2: Some(2.0) },
            mean: 0.7,
            mean_grad_gamma: DVector::from_element(1, 1.0),
            sigma2_gamma: 0.5,
        };
        assert_eq!(o.grad_eta(0.7), 0.0);
        let o = CondLoglikOracle {
            family: ModelFamily::BinomialLogit { m: 3 },
            mean: 3.0 * 0.8,
            mean_grad_gamma: DVector::from_element(1, 1.0),
            sigma2_gamma: 0.0,
        };
        let x = DVector::from_row_slice(&[1.0, -2.0]);
        let g = o.cond_loglik_grad_beta(&x, &DVector::zeros(2));
        assert!((g - &x * (2.4 - 1.5)).amax() < 1e-14);
    }
}
