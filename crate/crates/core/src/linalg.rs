//! Small dense helpers shared by solvers and criteria.

use nalgebra::{DMatrix, DVector};

use crate::error::CriterionError;

/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// 2-norm condition number via singular values; infinite when singular.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `a x = b` after checking the condition number of `a`.
pub fn guarded_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    name: &'static str,
) -> Result<DMatrix<f64>, CriterionError> {
    let cond = condition_number(a);
    if !(cond <= MAX_CONDITION) {
        return Err(CriterionError::Singular(name, cond));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or(CriterionError::Singular(name, cond))
}

/// tr(a^{-1} b) with the condition guard; zero for empty blocks.
pub fn trace_inv_mul(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    name: &'static str,
) -> Result<f64, CriterionError> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(guarded_solve(a, b, name)?.trace())
}

pub fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

pub fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&k| v[k]))
}

/// Columns `idx` of `m`.
pub fn columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_columns(idx.iter())
}

/// Sum over rows of `w_i x_i x_i'`.
pub fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let p = x.ncols();
    let mut g = DMatrix::zeros(p, p);
    for i in 0..x.nrows() {
        if w[i] == 0.0 {
            continue;
        }
        for a in 0..p {
            let xa = w[i] * x[(i, a)];
            if xa == 0.0 {
                continue;
            }
            for b in 0..p {
                g[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    g
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone().symmetric_eigenvalues().max()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// log of the binomial coefficient C(m, y) for integer-valued y.
pub fn ln_choose(m: u32, y: f64) -> f64 {
    let k = y.round().clamp(0.0, m as f64) as u32;
    let k = k.min(m - k);
    (0..k).map(|i| ((m - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}
