//! Penalty values and the derivatives of the folded-concave penalties.

use nalgebra::DVector;

use crate::data::PenaltySpec;

/// rho(t) for t >= 0 (per coordinate, separable penalties only).
pub fn rho(spec: &PenaltySpec, t: f64) -> f64 {
    let t = t.abs();
    match *spec {
        PenaltySpec::Lasso { lambda } => lambda * t,
        PenaltySpec::ElasticNet { lambda1, lambda2 } => lambda1 * t + lambda2 * t * t,
        PenaltySpec::Scad { lambda, a } => {
            if t <= lambda {
                lambda * t
            } else if t <= a * lambda {
                (2.0 * a * lambda * t - t * t - lambda * lambda) / (2.0 * (a - 1.0))
            } else {
                lambda * lambda * (a + 1.0) / 2.0
            }
        }
        PenaltySpec::McPlus { lambda, gamma } => {
            if t <= gamma * lambda {
                lambda * t - t * t / (2.0 * gamma)
            } else {
                gamma * lambda * lambda / 2.0
            }
        }
        PenaltySpec::GroupLasso { lambda, .. } => lambda * t,
    }
}

/// rho'(t) for t >= 0, right derivative at 0.
pub fn rho_d1(spec: &PenaltySpec, t: f64) -> f64 {
    let t = t.abs();
    match *spec {
        PenaltySpec::Lasso { lambda } | PenaltySpec::GroupLasso { lambda, .. } => lambda,
        PenaltySpec::ElasticNet { lambda1, lambda2 } => lambda1 + 2.0 * lambda2 * t,
        PenaltySpec::Scad { lambda, a } => {
            if t <= lambda {
                lambda
            } else if t <= a * lambda {
                (a * lambda - t) / (a - 1.0)
            } else {
                0.0
            }
        }
        PenaltySpec::McPlus { lambda, gamma } => (lambda - t / gamma).max(0.0),
    }
}

/// rho''(t) for t > 0.
pub fn rho_d2(spec: &PenaltySpec, t: f64) -> f64 {
    let t = t.abs();
    match *spec {
        PenaltySpec::Lasso { .. } | PenaltySpec::GroupLasso { .. } => 0.0,
        PenaltySpec::ElasticNet { lambda2, .. } => 2.0 * lambda2,
        PenaltySpec::Scad { lambda, a } => {
            if t > lambda && t <= a * lambda {
                -1.0 / (a - 1.0)
            } else {
                0.0
            }
        }
        PenaltySpec::McPlus { lambda, gamma } => {
            if t < gamma * lambda {
                -1.0 / gamma
            } else {
                0.0
            }
        }
    }
}

/// Full penalty value of a coefficient vector.
pub fn penalty_value(spec: &PenaltySpec, coef: &DVector<f64>) -> f64 {
    match spec {
        PenaltySpec::GroupLasso { lambda, groups } => {
            let ids = group_index_sets(groups);
            lambda
                * ids
                    .iter()
                    .map(|g| g.iter().map(|&k| coef[k] * coef[k]).sum::<f64>().sqrt())
                    .sum::<f64>()
        }
        _ => coef.iter().map(|&b| rho(spec, b)).sum(),
    }
}

/// Index sets of each group, ordered by group id.
pub fn group_index_sets(groups: &[usize]) -> Vec<Vec<usize>> {
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.iter()
        .map(|&g| (0..groups.len()).filter(|&k| groups[k] == g).collect())
        .collect()
}
