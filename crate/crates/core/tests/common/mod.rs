//! Shared oracle suites for the integration tests.
//!
//! Each suite draws its own random problems, runs the library and an
//! independent reference computation, and reports the worst discrepancy so
//! that callers can assert on it and print it.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pmsm::glm::{
    cox_log_partial_likelihood, cox_score, expit, fit_weighted_cox, fit_weighted_logistic, fit_wls, logistic_gradient,
    logistic_loglik, CoxData, Design,
};
use pmsm::oracle::{enumerable_dgp, exact_limits, EnumerableSpec, Logit, ProbabilityTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// How the covariate process and outcome model of a random DGP are built.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    /// Covariates follow their own past but not treatment; all γ random.
    Exogenous,
    /// Covariates iid and γ_k = 0 before the window `K − m`, so the early
    /// treatments carry no information about the outcome beyond the window.
    EarlyIgnorable { m: usize },
    /// `L(0)` drives both `A(0)` and the outcome directly.
    EarlyConfounded,
}

/// A random enumerable DGP with non-negative ψ and positively autocorrelated
/// treatment.
pub fn random_spec(rng: &mut impl Rng, horizon: usize, structure: Structure) -> EnumerableSpec {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let covariate = match structure {
        Structure::Exogenous | Structure::EarlyConfounded => Logit::new(u(-1.0, 1.0), u(-1.5, 1.5), 0.0),
        Structure::EarlyIgnorable { .. } => Logit::new(u(-1.0, 1.0), 0.0, 0.0),
    };
    let treatment = Logit::new(u(-1.0, 0.5), u(0.3, 1.5), u(0.5, 2.0));
    let mut psi = vec![u(-1.0, 1.0)];
    psi.extend((0..horizon).map(|_| u(0.1, 1.5)));
    let mut gamma: Vec<f64> = (0..horizon).map(|_| u(-1.5, 1.5)).collect();
    match structure {
        Structure::EarlyIgnorable { m } => gamma[..horizon - m].iter_mut().for_each(|g| *g = 0.0),
        Structure::EarlyConfounded => gamma[0] = 2.0 * gamma[0].signum() + gamma[0],
        Structure::Exogenous => {}
    }
    EnumerableSpec::from_logits(horizon, covariate, treatment, psi, gamma)
}

#[derive(Clone, Debug, Default)]
pub struct OracleSuite {
    pub dgps: usize,
    /// max |θ_sw − θ_rsw − Σ_{j>m} ψ_j q_j|.
    pub identity_error: f64,
    /// Number of (DGP, m) cases violating θ_rsw ≤ θ_sw ≤ θ^(K) (or its strictness).
    pub ordering_violations: usize,
    pub ordering_cases: usize,
    /// max |θ_psw − θ_sw| over early-ignorable DGPs.
    pub psw_equality_error: f64,
    /// min |θ_psw − θ_sw| over early-confounded DGPs.
    pub psw_violation_gap: f64,
    /// max spread of (θ_sw, θ_rsw, θ_psw) at m = K.
    pub full_window_spread: f64,
}

impl OracleSuite {
    pub fn passes(&self) -> bool {
        self.dgps >= 20
            && self.identity_error <= 1e-10
            && self.ordering_violations == 0
            && self.psw_equality_error <= 1e-10
            && self.psw_violation_gap > 1e-3
            && self.full_window_spread <= 1e-12
    }
}

fn table(spec: &EnumerableSpec) -> ProbabilityTable {
    enumerable_dgp(spec).expect("random specs have logits bounded away from ±∞")
}

/// Runs the exact-population checks on `n_dgps` random DGPs of each structure
/// with horizons alternating between 2 and 3.
pub fn oracle_suite(n_dgps: usize, seed: u64) -> OracleSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = OracleSuite { psw_violation_gap: f64::INFINITY, ..Default::default() };
    for i in 0..n_dgps {
        let k = 2 + i % 2;
        s.dgps += 1;

        let spec = random_spec(&mut rng, k, Structure::Exogenous);
        let t = table(&spec);
        for m in 1..=k {
            let lim = exact_limits(&t, m).unwrap();
            let bias: f64 = lim.q.iter().enumerate().map(|(i, q)| spec.psi[m + 1 + i] * q).sum();
            s.identity_error = s.identity_error.max((lim.sw - lim.rsw - bias).abs());
            if lim.q.iter().all(|q| *q > 0.0 && *q < 1.0) {
                s.ordering_cases += 1;
                let tol = 1e-12;
                let ordered = lim.rsw <= lim.sw + tol && lim.sw <= spec.theta() + tol;
                let strict = bias <= tol || lim.rsw < lim.sw;
                if !(ordered && strict) {
                    s.ordering_violations += 1;
                }
            }
            if m == k {
                let hi = lim.sw.max(lim.rsw).max(lim.psw);
                let lo = lim.sw.min(lim.rsw).min(lim.psw);
                s.full_window_spread = s.full_window_spread.max(hi - lo);
            }
        }

        let m = rng.random_range(1..k);
        let spec = random_spec(&mut rng, k, Structure::EarlyIgnorable { m });
        let lim = exact_limits(&table(&spec), m).unwrap();
        s.psw_equality_error = s.psw_equality_error.max((lim.psw - lim.sw).abs());

        let spec = random_spec(&mut rng, k, Structure::EarlyConfounded);
        let lim = exact_limits(&table(&spec), 1).unwrap();
        s.psw_violation_gap = s.psw_violation_gap.min((lim.psw - lim.sw).abs());
    }
    s
}

// ---------------------------------------------------------------------------
// Numeric core
// ---------------------------------------------------------------------------

/// Random logistic data with an intercept and `p − 1` covariates.
pub fn logistic_data(rng: &mut impl Rng, n: usize, p: usize) -> (Design, Vec<f64>, Vec<f64>, Vec<f64>) {
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut x = Design::with_capacity(p, n);
    let mut y = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = vec![1.0];
        row.extend((1..p).map(|_| rng.random_range(-2.0..2.0)));
        let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        y.push(f64::from(rng.random::<f64>() < expit(eta)));
        w.push(rng.random_range(0.2..3.0));
        x.push_row(&row);
    }
    (x, y, w, beta)
}

fn dense(x: &Design) -> DMatrix<f64> {
    DMatrix::from_fn(x.n_rows(), x.n_cols(), |i, j| x.row(i)[j])
}

/// Plain Newton-Raphson on dense matrices with an LU solve, from zero.
pub fn reference_logistic(x: &Design, y: &[f64], w: &[f64]) -> Vec<f64> {
    let xm = dense(x);
    let mut beta = DVector::zeros(x.n_cols());
    for _ in 0..50 {
        let eta = &xm * &beta;
        let mu = eta.map(expit);
        let grad = xm.transpose() * DVector::from_fn(y.len(), |i, _| w[i] * (y[i] - mu[i]));
        let wd = DMatrix::from_diagonal(&DVector::from_fn(y.len(), |i, _| w[i] * mu[i] * (1.0 - mu[i])));
        let info = xm.transpose() * wd * &xm;
        let step = info.lu().solve(&grad).expect("information is invertible");
        beta += &step;
        if step.amax() < 1e-13 {
            break;
        }
    }
    beta.iter().copied().collect()
}

/// `(XᵀWX)⁻¹XᵀWy` through the SVD pseudo-inverse of `W^{1/2}X`.
pub fn reference_wls(x: &Design, y: &[f64], w: &[f64]) -> Vec<f64> {
    let xm = dense(x);
    let sw = DVector::from_fn(y.len(), |i, _| w[i].sqrt());
    let xw = DMatrix::from_fn(xm.nrows(), xm.ncols(), |i, j| sw[i] * xm[(i, j)]);
    let yw = DVector::from_fn(y.len(), |i, _| sw[i] * y[i]);
    let pinv = xw.pseudo_inverse(1e-12).expect("SVD converges");
    (pinv * yw).iter().copied().collect()
}

/// Discrete-time survival data with one binary and one continuous covariate,
/// tied event times and sampling weights.
pub fn cox_data(rng: &mut impl Rng, n: usize, beta: &[f64; 2], horizon: usize) -> CoxData {
    let mut data = CoxData::new(2, n);
    for i in 0..n {
        let a = f64::from(rng.random::<bool>());
        let w = rng.random_range(0.5..2.0);
        for t in 0..horizon {
            let z = rng.random_range(-1.0..1.0);
            let hazard = 0.08 * (beta[0] * a + beta[1] * z).exp();
            let event = rng.random::<f64>() < hazard.min(0.9);
            data.push(i, t, &[a, z], w, event);
            if event {
                break;
            }
        }
    }
    data
}

/// Weighted Breslow log partial likelihood written from its definition.
pub fn reference_cox_loglik(data: &CoxData, beta: &[f64]) -> f64 {
    let t_max = data.time.iter().copied().max().unwrap_or(0);
    let mut ll = 0.0;
    for t in 0..=t_max {
        let at_risk: Vec<usize> = (0..data.len()).filter(|&r| data.time[r] == t).collect();
        let denom: f64 =
            at_risk.iter().map(|&r| data.weight[r] * data.design.row(r).iter().zip(beta).map(|(x, b)| x * b).sum::<f64>().exp()).sum();
        for &r in at_risk.iter().filter(|&&r| data.event[r]) {
            let eta: f64 = data.design.row(r).iter().zip(beta).map(|(x, b)| x * b).sum();
            ll += data.weight[r] * (eta - denom.ln());
        }
    }
    ll
}

/// Maximiser of `f` over a square grid around `centre`, refined four times.
pub fn grid_maximise(f: impl Fn(&[f64]) -> f64, centre: [f64; 2], mut half_width: f64) -> [f64; 2] {
    let mut best = centre;
    for _ in 0..4 {
        let step = half_width / 20.0;
        let c = best;
        let mut best_val = f64::NEG_INFINITY;
        for i in -20..=20 {
            for j in -20..=20 {
                let b = [c[0] + i as f64 * step, c[1] + j as f64 * step];
                let v = f(&b);
                if v > best_val {
                    best_val = v;
                    best = b;
                }
            }
        }
        half_width = 2.0 * step;
    }
    best
}

/// Largest relative error of an analytic gradient against central differences.
pub fn finite_difference_error(f: impl Fn(&[f64]) -> f64, grad: &[f64], at: &[f64]) -> f64 {
    let scale = grad.iter().fold(1.0f64, |m, g| m.max(g.abs()));
    (0..at.len())
        .map(|j| {
            let h = 1e-5 * at[j].abs().max(1.0);
            let mut up = at.to_vec();
            let mut down = at.to_vec();
            up[j] += h;
            down[j] -= h;
            let numeric = (f(&up) - f(&down)) / (2.0 * h);
            (numeric - grad[j]).abs() / scale
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Default)]
pub struct GlmSuite {
    pub cases: usize,
    /// Worst coefficient gap between IRLS and the dense Newton reference.
    pub logistic_error: f64,
    /// Gap to the closed-form log-odds of a saturated binary design.
    pub saturated_error: f64,
    pub wls_error: f64,
    /// Gap between the Cox fit and the grid-search maximiser.
    pub cox_grid_error: f64,
    /// Gap to a fine 1-D grid search on a hand-built six-subject dataset.
    pub cox_small_error: f64,
    /// Gap between library and reference Cox log partial likelihoods.
    pub cox_loglik_error: f64,
    pub logistic_fd_error: f64,
    pub cox_fd_error: f64,
}

impl GlmSuite {
    pub fn passes(&self) -> bool {
        self.cases > 0
            && self.logistic_error <= 1e-8
            && self.saturated_error <= 1e-8
            && self.wls_error <= 1e-10
            && self.cox_grid_error <= 1e-4
            && self.cox_small_error <= 1e-6
            && self.cox_loglik_error <= 1e-9
            && self.logistic_fd_error <= 1e-5
            && self.cox_fd_error <= 1e-5
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Six subjects with a binary covariate; `(covariate, last time, event)`.
pub fn six_subjects() -> CoxData {
    let subjects = [(1.0, 1, true), (1.0, 3, true), (1.0, 2, false), (0.0, 1, true), (0.0, 2, true), (0.0, 4, false)];
    let mut data = CoxData::new(1, subjects.len());
    for (i, &(a, last, event)) in subjects.iter().enumerate() {
        for t in 0..=last {
            data.push(i, t, &[a], 1.0, event && t == last);
        }
    }
    data
}

/// Maximiser of a concave `f` on `[lo, hi]` by repeated grid refinement.
pub fn grid_maximise_1d(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    while hi - lo > 1e-9 {
        let step = (hi - lo) / 100.0;
        let best = (0..=100).map(|i| lo + i as f64 * step).max_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
        lo = best - step;
        hi = best + step;
    }
    0.5 * (lo + hi)
}

pub fn glm_suite(cases: usize, seed: u64) -> GlmSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = GlmSuite::default();
    let data = six_subjects();
    let fit = fit_weighted_cox(&data).unwrap();
    let grid = grid_maximise_1d(|b| reference_cox_loglik(&data, &[b]), -10.0, 10.0);
    s.cox_small_error = (fit.coefficients[0] - grid).abs();
    for _ in 0..cases {
        s.cases += 1;

        let (x, y, w, _) = logistic_data(&mut rng, 400, 4);
        let fit = fit_weighted_logistic(&x, &y, &w).unwrap();
        s.logistic_error = s.logistic_error.max(max_gap(&fit.coefficients, &reference_logistic(&x, &y, &w)));
        let at: Vec<f64> = fit.coefficients.iter().map(|b| b + rng.random_range(-0.5..0.5)).collect();
        let fd = finite_difference_error(|b| logistic_loglik(&x, &y, &w, b), &logistic_gradient(&x, &y, &w, &at), &at);
        s.logistic_fd_error = s.logistic_fd_error.max(fd);

        // Saturated binary design: the fit reproduces the weighted log-odds per cell.
        let mut xs = Design::new(2);
        let (mut ys, mut ws) = (Vec::new(), Vec::new());
        let mut cell = [[0.0; 2]; 2];
        for _ in 0..300 {
            let a = rng.random::<bool>();
            let yi = rng.random::<f64>() < if a { 0.7 } else { 0.35 };
            let wi = rng.random_range(0.5..2.0);
            xs.push_row(&[1.0, f64::from(a)]);
            ys.push(f64::from(yi));
            ws.push(wi);
            cell[usize::from(a)][usize::from(yi)] += wi;
        }
        let fit = fit_weighted_logistic(&xs, &ys, &ws).unwrap();
        let logit = |c: [f64; 2]| (c[1] / c[0]).ln();
        let expected = [logit(cell[0]), logit(cell[1]) - logit(cell[0])];
        s.saturated_error = s.saturated_error.max(max_gap(&fit.coefficients, &expected));

        let (x, _, w, _) = logistic_data(&mut rng, 200, 3);
        let yw: Vec<f64> = x.rows().map(|r| 1.0 + 2.0 * r[1] - r[2] + rng.random_range(-1.0..1.0)).collect();
        let fit = fit_wls(&x, &yw, &w).unwrap();
        s.wls_error = s.wls_error.max(max_gap(&fit.coefficients, &reference_wls(&x, &yw, &w)));

        let data = cox_data(&mut rng, 500, &[-0.7, 0.5], 8);
        let fit = fit_weighted_cox(&data).unwrap();
        let grid = grid_maximise(|b| reference_cox_loglik(&data, b), [0.0, 0.0], 2.0);
        s.cox_grid_error = s.cox_grid_error.max(max_gap(&fit.coefficients, &grid));
        let at = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        s.cox_loglik_error =
            s.cox_loglik_error.max((cox_log_partial_likelihood(&data, &at) - reference_cox_loglik(&data, &at)).abs());
        let fd = finite_difference_error(|b| cox_log_partial_likelihood(&data, b), &cox_score(&data, &at), &at);
        s.cox_fd_error = s.cox_fd_error.max(fd);
    }
    s
}
