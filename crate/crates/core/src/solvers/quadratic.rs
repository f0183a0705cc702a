//! Coordinate descent on penalized quadratics `0.5 x'Ax - b'x + pen(x)`.
//!
//! Every least-squares solver and the inner loop of the GLM solver reduce to this form.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{max_eigenvalue, soft_threshold};

pub(crate) enum QuadPenalty<'a> {
    /// Separable l1 with per-coordinate levels.
    L1(&'a [f64]),
    /// Sum of unsquared l2 norms over index sets.
    Group { lambda: f64, groups: &'a [Vec<usize>] },
}

pub(crate) struct QuadOutcome {
    pub x: DVector<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub history: Vec<f64>,
    pub degenerate: Vec<usize>,
}

const TINY: f64 = 1e-300;

pub(crate) fn quad_penalty_value(pen: &QuadPenalty, x: &DVector<f64>) -> f64 {
    match pen {
        QuadPenalty::L1(w) => x.iter().zip(w.iter()).map(|(v, l)| l * v.abs()).sum(),
        QuadPenalty::Group { lambda, groups } => {
            lambda
                * groups
                    .iter()
                    .map(|g| g.iter().map(|&k| x[k] * x[k]).sum::<f64>().sqrt())
                    .sum::<f64>()
        }
    }
}

pub(crate) fn quad_objective(a: &DMatrix<f64>, b: &DVector<f64>, pen: &QuadPenalty, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(a * x)) - b.dot(x) + quad_penalty_value(pen, x)
}

/// Cyclic (block) coordinate descent in ascending index order.
pub(crate) fn minimize_quadratic(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    pen: &QuadPenalty,
    init: &DVector<f64>,
    tol_change: f64,
    max_sweeps: usize,
) -> QuadOutcome {
    let d = b.len();
    let mut x = init.clone();
    let mut degenerate = Vec::new();
    for j in 0..d {
        if a[(j, j)] <= TINY {
            x[j] = 0.0;
            degenerate.push(j);
        }
    }
    let mut ax = a * &x;
    let mut history = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;

    match pen {
        QuadPenalty::L1(w) => {
            while sweeps < max_sweeps {
                sweeps += 1;
                let mut max_delta: f64 = 0.0;
                for j in 0..d {
                    let ajj = a[(j, j)];
                    if ajj <= TINY {
                        continue;
                    }
                    let rho = b[j] - ax[j] + ajj * x[j];
                    let new = soft_threshold(rho, w[j]) / ajj;
                    let delta = new - x[j];
                    if delta != 0.0 {
                        x[j] = new;
                        ax.axpy(delta, &a.column(j), 1.0);
                        max_delta = max_delta.max(delta.abs());
                    }
                }
                history.push(quad_objective(a, b, pen, &x));
                if max_delta < tol_change {
                    converged = true;
                    break;
                }
            }
        }
        QuadPenalty::Group { lambda, groups } => {
            let lips: Vec<f64> = groups
                .iter()
                .map(|g| {
                    let sub = DMatrix::from_fn(g.len(), g.len(), |r, c| a[(g[r], g[c])]);
                    max_eigenvalue(&sub)
                })
                .collect();
            let isotropic: Vec<bool> = groups
                .iter()
                .zip(&lips)
                .map(|(g, &l)| {
                    g.iter().enumerate().all(|(r, &kr)| {
                        g.iter().enumerate().all(|(c, &kc)| {
                            let target = if r == c { l } else { 0.0 };
                            (a[(kr, kc)] - target).abs() <= 1e-14 * l.abs().max(1.0)
                        })
                    })
                })
                .collect();
            while sweeps < max_sweeps {
                sweeps += 1;
                let mut max_delta: f64 = 0.0;
                for (gi, g) in groups.iter().enumerate() {
                    let l = lips[gi];
                    if l <= TINY {
                        for &k in g {
                            if x[k] != 0.0 {
                                let delta = -x[k];
                                x[k] = 0.0;
                                ax.axpy(delta, &a.column(k), 1.0);
                            }
                            if !degenerate.contains(&k) {
                                degenerate.push(k);
                            }
                        }
                        continue;
                    }
                    // Majorized block steps; a single step is exact for isotropic blocks.
                    let inner = if isotropic[gi] { 1 } else { 200 };
                    for _ in 0..inner {
                        let v: Vec<f64> = g.iter().map(|&k| x[k] - (ax[k] - b[k]) / l).collect();
                        let norm = v.iter().map(|u| u * u).sum::<f64>().sqrt();
                        let shrink = if norm > 0.0 {
                            (1.0 - lambda / (l * norm)).max(0.0)
                        } else {
                            0.0
                        };
                        let mut step: f64 = 0.0;
                        for (r, &k) in g.iter().enumerate() {
                            let new = shrink * v[r];
                            let delta = new - x[k];
                            if delta != 0.0 {
                                x[k] = new;
                                ax.axpy(delta, &a.column(k), 1.0);
                                step = step.max(delta.abs());
                            }
                        }
                        max_delta = max_delta.max(step);
                        if step < 0.1 * tol_change {
                            break;
                        }
                    }
                }
                history.push(quad_objective(a, b, pen, &x));
                if max_delta < tol_change {
                    converged = true;
                    break;
                }
            }
        }
    }
    degenerate.sort_unstable();
    QuadOutcome {
        x,
        sweeps,
        converged,
        history,
        degenerate,
    }
}
