//! Numeric core: weighted logistic regression (IRLS), weighted least squares
//! and the weighted Breslow Cox partial likelihood (Newton-Raphson).
//!
//! Every fitter returns the coefficient vector, the inverse information
//! ("bread"), and per-unit score contributions so that sandwich variances and
//! influence functions can be assembled downstream.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Row-major dense design matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    n_cols: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn new(n_cols: usize) -> Self {
        Self { n_cols, data: Vec::new() }
    }

    pub fn with_capacity(n_cols: usize, n_rows: usize) -> Self {
        Self { n_cols, data: Vec::with_capacity(n_cols * n_rows) }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut d = Self::with_capacity(n_cols, rows.len());
        for r in rows {
            d.push_row(r);
        }
        d
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n_cols, "row length must match the design width");
        self.data.extend_from_slice(row);
    }

    pub fn n_rows(&self) -> usize {
        self.data.len().checked_div(self.n_cols).unwrap_or(0)
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols.max(1))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub max_gradient: f64,
    pub condition_warning: bool,
}

#[derive(Clone, Debug)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    /// Inverse of the (weighted) information matrix at the estimate.
    pub bread: DMatrix<f64>,
    /// Score contributions, one row per observation (per subject for Cox).
    pub scores: Design,
    pub diagnostics: FitDiagnostics,
}

impl GlmFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        dot(&self.coefficients, row)
    }

    /// `expit(x'β)` for logistic fits.
    pub fn probability(&self, row: &[f64]) -> f64 {
        expit(self.linear_predictor(row))
    }

    /// Influence contributions `n · c' bread · U_i` for a linear contrast `c`.
    pub fn contrast_influence(&self, contrast: &[f64]) -> Vec<f64> {
        let c = DVector::from_column_slice(contrast);
        let v = &self.bread * c;
        let n = self.scores.n_rows() as f64;
        self.scores.rows().map(|u| n * dot(u, v.as_slice())).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the weighted score.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 100, tolerance: 1e-8 }
    }
}

impl FitOptions {
    /// The score is a sum over rows, so below `ε·Σw` (times a safety factor)
    /// its value is rounding noise; on very large samples the threshold is
    /// raised to that floor instead of iterating forever.
    fn threshold(&self, weights: &[f64]) -> f64 {
        let total: f64 = weights.iter().map(|w| w.abs()).sum();
        self.tolerance.max(ROUNDOFF_FACTOR * f64::EPSILON * total)
    }
}

/// Multiple of `ε·Σw` treated as the rounding floor of a score sum.
const ROUNDOFF_FACTOR: f64 = 64.0;

/// Pivots below this fraction of the largest one are treated as rank loss.
const RANK_TOLERANCE: f64 = 1e-12;
const CONDITION_WARNING: f64 = 1e10;
/// Linear predictors beyond this magnitude indicate (quasi-)separation.
const SEPARATION_ETA: f64 = 35.0;

/// Inverts a symmetric positive (semi-)definite matrix: Cholesky first, QR
/// as fallback. Returns the inverse and a conditioning flag.
pub fn spd_inverse(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let p = h.nrows();
    if p == 0 {
        return Ok((DMatrix::zeros(0, 0), false));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Rank("information matrix has non-finite entries".into()));
    }
    if let Some(chol) = h.clone().cholesky() {
        let diag: Vec<f64> = (0..p).map(|i| chol.l_dirty()[(i, i)].powi(2)).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > 0.0 && min > RANK_TOLERANCE * max {
            return Ok((chol.inverse(), max / min > CONDITION_WARNING));
        }
        return Err(Error::Rank(format!("pivot ratio {:.3e} below tolerance", min / max)));
    }
    let qr = h.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..p).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 || min <= RANK_TOLERANCE.sqrt() * max {
        return Err(Error::Rank(format!("{p}x{p} information matrix is singular")));
    }
    let inv = qr
        .solve(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Rank("QR solve failed".into()))?;
    Ok((inv, true))
}

fn check_inputs(x: &Design, y: &[f64], w: &[f64]) -> Result<()> {
    if x.n_rows() != y.len() || y.len() != w.len() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {} rows, {} responses, {} weights",
            x.n_rows(),
            y.len(),
            w.len()
        )));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    Ok(())
}

fn symmetric_from_upper(p: usize, upper: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            m[(a, b)] = upper[a * p + b];
            m[(b, a)] = upper[a * p + b];
        }
    }
    m
}

#[inline]
fn add_outer(upper: &mut [f64], p: usize, x: &[f64], s: f64) {
    for a in 0..p {
        let sa = s * x[a];
        if sa == 0.0 {
            continue;
        }
        let row = &mut upper[a * p..(a + 1) * p];
        for b in a..p {
            row[b] += sa * x[b];
        }
    }
}

/// Weighted Bernoulli log-likelihood `Σ w [y η − log(1 + e^η)]`.
pub fn logistic_loglik(x: &Design, y: &[f64], w: &[f64], beta: &[f64]) -> f64 {
    x.rows()
        .zip(y.iter().zip(w))
        .map(|(r, (&yi, &wi))| {
            if wi == 0.0 {
                0.0
            } else {
                let eta = dot(r, beta);
                wi * (yi * eta - log1pexp(eta))
            }
        })
        .sum()
}

/// Analytic gradient `Σ w (y − p) x`.
pub fn logistic_gradient(x: &Design, y: &[f64], w: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.n_cols()];
    for (r, (&yi, &wi)) in x.rows().zip(y.iter().zip(w)) {
        let resid = wi * (yi - expit(dot(r, beta)));
        for (gj, xj) in g.iter_mut().zip(r) {
            *gj += resid * xj;
        }
    }
    g
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn fit_weighted_logistic(x: &Design, y: &[f64], w: &[f64]) -> Result<GlmFit> {
    fit_weighted_logistic_with(x, y, w, &FitOptions::default())
}

/// IRLS (Newton-Raphson on the weighted log-likelihood) with step-halving.
pub fn fit_weighted_logistic_with(x: &Design, y: &[f64], w: &[f64], opts: &FitOptions) -> Result<GlmFit> {
    check_inputs(x, y, w)?;
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidArgument("logistic response must be binary".into()));
    }
    let p = x.n_cols();
    let mut beta = warm_start(x, y, w);
    let mut upper = vec![0.0; p * p];
    let mut grad = vec![0.0; p];
    let mut ll = logistic_pass(x, y, w, &beta, &mut upper, &mut grad);
    let mut iterations = 0;
    let threshold = opts.threshold(w);

    loop {
        let info = symmetric_from_upper(p, &upper);
        let (inv, condition_warning) = spd_inverse(&info)?;
        let g_norm = max_abs(&grad);
        let diag = |converged| FitDiagnostics { converged, iterations, max_gradient: g_norm, condition_warning };

        if g_norm <= threshold {
            let max_eta = x
                .rows()
                .zip(w)
                .filter(|(_, wi)| **wi > 0.0)
                .fold(0.0_f64, |m, (r, _)| m.max(dot(r, &beta).abs()));
            if max_eta > SEPARATION_ETA {
                return Err(Error::NonConvergence(diag(false)));
            }
            let mut scores = Design::with_capacity(p, x.n_rows());
            let mut buf = vec![0.0; p];
            for (r, (&yi, &wi)) in x.rows().zip(y.iter().zip(w)) {
                let resid = wi * (yi - expit(dot(r, &beta)));
                buf.iter_mut().zip(r).for_each(|(b, xj)| *b = resid * xj);
                scores.push_row(&buf);
            }
            return Ok(GlmFit { coefficients: beta, bread: inv, scores, diagnostics: diag(true) });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence(diag(false)));
        }
        iterations += 1;

        let step = &inv * DVector::from_column_slice(&grad);
        let mut scale = 1.0;
        let mut accepted = false;
        let mut trial_upper = vec![0.0; p * p];
        let mut trial_grad = vec![0.0; p];
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let trial_ll = logistic_pass(x, y, w, &trial, &mut trial_upper, &mut trial_grad);
            if trial_ll.is_finite() && trial_ll >= ll - 1e-10 * ll.abs().max(1.0) {
                beta = trial;
                ll = trial_ll;
                std::mem::swap(&mut upper, &mut trial_upper);
                std::mem::swap(&mut grad, &mut trial_grad);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || max_abs(&beta) > 1e4 {
            return Err(Error::NonConvergence(FitDiagnostics {
                converged: false,
                iterations,
                max_gradient: g_norm,
                condition_warning,
            }));
        }
    }
}

/// Log-likelihood, score and (upper triangle of the) information in one pass.
fn logistic_pass(x: &Design, y: &[f64], w: &[f64], beta: &[f64], upper: &mut [f64], grad: &mut [f64]) -> f64 {
    let p = grad.len();
    upper.iter_mut().for_each(|v| *v = 0.0);
    grad.iter_mut().for_each(|v| *v = 0.0);
    let mut ll = 0.0;
    for (r, (&yi, &wi)) in x.rows().zip(y.iter().zip(w)) {
        if wi == 0.0 {
            continue;
        }
        let eta = dot(r, beta);
        // With e = exp(−|η|): log(1 + exp(η)) and expit(η) share one exponential.
        let e = (-eta.abs()).exp();
        let (softplus, pi) = if eta > 0.0 { (eta + e.ln_1p(), 1.0 / (1.0 + e)) } else { (e.ln_1p(), e / (1.0 + e)) };
        ll += wi * (yi * eta - softplus);
        let resid = wi * (yi - pi);
        for (gj, xj) in grad.iter_mut().zip(r) {
            *gj += resid * xj;
        }
        add_outer(upper, p, r, wi * pi * (1.0 - pi));
    }
    ll
}

/// Starts at the logit of the weighted mean response when the first column
/// is a constant intercept, and at zero otherwise.
fn warm_start(x: &Design, y: &[f64], w: &[f64]) -> Vec<f64> {
    let mut beta = vec![0.0; x.n_cols()];
    if x.n_cols() == 0 || !x.rows().all(|r| r[0] == 1.0) {
        return beta;
    }
    let (sw, swy) = y.iter().zip(w).fold((0.0, 0.0), |(a, b), (yi, wi)| (a + wi, b + wi * yi));
    if sw > 0.0 && swy > 0.0 && swy < sw {
        let mean = swy / sw;
        beta[0] = (mean / (1.0 - mean)).ln();
    }
    beta
}

/// Weighted least squares by a direct solve of the normal equations.
pub fn fit_wls(x: &Design, y: &[f64], w: &[f64]) -> Result<GlmFit> {
    check_inputs(x, y, w)?;
    let p = x.n_cols();
    let mut upper = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for (r, (&yi, &wi)) in x.rows().zip(y.iter().zip(w)) {
        if wi == 0.0 {
            continue;
        }
        add_outer(&mut upper, p, r, wi);
        for (v, xj) in xty.iter_mut().zip(r) {
            *v += wi * yi * xj;
        }
    }
    let xtwx = symmetric_from_upper(p, &upper);
    let (inv, condition_warning) = spd_inverse(&xtwx)?;
    let beta: Vec<f64> = (&inv * DVector::from_column_slice(&xty)).iter().copied().collect();

    let mut scores = Design::with_capacity(p, x.n_rows());
    let mut grad = vec![0.0; p];
    let mut buf = vec![0.0; p];
    for (r, (&yi, &wi)) in x.rows().zip(y.iter().zip(w)) {
        let resid = wi * (yi - dot(r, &beta));
        buf.iter_mut().zip(r).for_each(|(b, xj)| *b = resid * xj);
        grad.iter_mut().zip(&buf).for_each(|(g, b)| *g += b);
        scores.push_row(&buf);
    }
    Ok(GlmFit {
        coefficients: beta,
        bread: inv,
        scores,
        diagnostics: FitDiagnostics { converged: true, iterations: 0, max_gradient: max_abs(&grad), condition_warning },
    })
}

/// Risk-set data for the discrete-time Cox model: one row per at-risk
/// subject-time with time-varying covariates and weights.
#[derive(Clone, Debug)]
pub struct CoxData {
    pub design: Design,
    /// Discrete event time `t` (risk set index) of each row.
    pub time: Vec<usize>,
    /// Subject index `0..n_subjects` used to aggregate score residuals.
    pub subject: Vec<usize>,
    pub weight: Vec<f64>,
    pub event: Vec<bool>,
    pub n_subjects: usize,
}

impl CoxData {
    pub fn new(n_cols: usize, n_subjects: usize) -> Self {
        Self {
            design: Design::new(n_cols),
            time: Vec::new(),
            subject: Vec::new(),
            weight: Vec::new(),
            event: Vec::new(),
            n_subjects,
        }
    }

    pub fn push(&mut self, subject: usize, time: usize, x: &[f64], weight: f64, event: bool) {
        self.design.push_row(x);
        self.subject.push(subject);
        self.time.push(time);
        self.weight.push(weight);
        self.event.push(event);
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Row indices grouped by risk-set time, ascending.
    fn risk_sets(&self) -> Vec<Vec<usize>> {
        let t_max = self.time.iter().copied().max().unwrap_or(0);
        let mut sets = vec![Vec::new(); t_max + 1];
        for (row, &t) in self.time.iter().enumerate() {
            sets[t].push(row);
        }
        sets.retain(|s| !s.is_empty());
        sets
    }
}

struct CoxEval {
    loglik: f64,
    score: Vec<f64>,
    information: Vec<f64>,
}

fn cox_evaluate(data: &CoxData, sets: &[Vec<usize>], beta: &[f64], with_information: bool) -> CoxEval {
    let p = data.design.n_cols();
    let mut loglik = 0.0;
    let mut score = vec![0.0; p];
    let mut information = vec![0.0; if with_information { p * p } else { 0 }];
    let mut s1 = vec![0.0; p];
    let mut s2 = vec![0.0; p * p];
    let mut sx = vec![0.0; p];
    for set in sets {
        let d_w: f64 = set.iter().filter(|&&r| data.event[r]).map(|&r| data.weight[r]).sum();
        if d_w == 0.0 {
            continue;
        }
        let shift = set.iter().map(|&r| dot(data.design.row(r), beta)).fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        s1.iter_mut().for_each(|v| *v = 0.0);
        sx.iter_mut().for_each(|v| *v = 0.0);
        if with_information {
            s2.iter_mut().for_each(|v| *v = 0.0);
        }
        for &r in set {
            let x = data.design.row(r);
            let eta = dot(x, beta);
            let wr = data.weight[r] * (eta - shift).exp();
            s0 += wr;
            for (a, xa) in s1.iter_mut().zip(x) {
                *a += wr * xa;
            }
            if with_information {
                add_outer(&mut s2, p, x, wr);
            }
            if data.event[r] {
                loglik += data.weight[r] * eta;
                for (a, xa) in sx.iter_mut().zip(x) {
                    *a += data.weight[r] * xa;
                }
            }
        }
        loglik -= d_w * (s0.ln() + shift);
        for a in 0..p {
            score[a] += sx[a] - d_w * s1[a] / s0;
        }
        if with_information {
            for a in 0..p {
                for b in a..p {
                    information[a * p + b] += d_w * (s2[a * p + b] / s0 - s1[a] * s1[b] / (s0 * s0));
                }
            }
        }
    }
    CoxEval { loglik, score, information }
}

/// Weighted Breslow log partial likelihood.
pub fn cox_log_partial_likelihood(data: &CoxData, beta: &[f64]) -> f64 {
    cox_evaluate(data, &data.risk_sets(), beta, false).loglik
}

/// Analytic score of the weighted Breslow log partial likelihood.
pub fn cox_score(data: &CoxData, beta: &[f64]) -> Vec<f64> {
    cox_evaluate(data, &data.risk_sets(), beta, false).score
}

pub fn fit_weighted_cox(data: &CoxData) -> Result<GlmFit> {
    fit_weighted_cox_with(data, &FitOptions::default())
}

/// Newton-Raphson with step-halving on the weighted Breslow partial
/// likelihood. Score contributions are robust score residuals aggregated
/// per subject.
pub fn fit_weighted_cox_with(data: &CoxData, opts: &FitOptions) -> Result<GlmFit> {
    let p = data.design.n_cols();
    if data.weight.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    if !data.event.iter().zip(&data.weight).any(|(&e, &w)| e && w > 0.0) {
        return Err(Error::Degenerate("no events in the risk-set data".into()));
    }
    let sets = data.risk_sets();
    let mut beta = vec![0.0; p];
    let mut eval = cox_evaluate(data, &sets, &beta, true);
    let mut iterations = 0;
    let threshold = opts.threshold(&data.weight);
    loop {
        let info = symmetric_from_upper(p, &eval.information);
        let (inv, condition_warning) = spd_inverse(&info)?;
        let g_norm = max_abs(&eval.score);
        let diag = |converged, iterations| FitDiagnostics { converged, iterations, max_gradient: g_norm, condition_warning };
        if g_norm <= threshold {
            let scores = cox_score_residuals(data, &sets, &beta);
            return Ok(GlmFit { coefficients: beta, bread: inv, scores, diagnostics: diag(true, iterations) });
        }
        if iterations >= opts.max_iterations || max_abs(&beta) > 50.0 {
            return Err(Error::NonConvergence(diag(false, iterations)));
        }
        iterations += 1;
        let step = &inv * DVector::from_column_slice(&eval.score);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let trial_eval = cox_evaluate(data, &sets, &trial, true);
            if trial_eval.loglik.is_finite() && trial_eval.loglik >= eval.loglik - 1e-10 * eval.loglik.abs().max(1.0) {
                beta = trial;
                eval = trial_eval;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence(diag(false, iterations)));
        }
    }
}

fn cox_score_residuals(data: &CoxData, sets: &[Vec<usize>], beta: &[f64]) -> Design {
    let p = data.design.n_cols();
    let mut per_subject = vec![0.0; data.n_subjects * p];
    let mut s1 = vec![0.0; p];
    for set in sets {
        let d_w: f64 = set.iter().filter(|&&r| data.event[r]).map(|&r| data.weight[r]).sum();
        if d_w == 0.0 {
            continue;
        }
        let shift = set.iter().map(|&r| dot(data.design.row(r), beta)).fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        s1.iter_mut().for_each(|v| *v = 0.0);
        for &r in set {
            let x = data.design.row(r);
            let wr = data.weight[r] * (dot(x, beta) - shift).exp();
            s0 += wr;
            for (a, xa) in s1.iter_mut().zip(x) {
                *a += wr * xa;
            }
        }
        let d_lambda = d_w / s0;
        for &r in set {
            let x = data.design.row(r);
            let risk = (dot(x, beta) - shift).exp() * d_lambda;
            let d = if data.event[r] { 1.0 } else { 0.0 };
            let w = data.weight[r];
            let dst = &mut per_subject[data.subject[r] * p..(data.subject[r] + 1) * p];
            for a in 0..p {
                dst[a] += w * (d - risk) * (x[a] - s1[a] / s0);
            }
        }
    }
    Design { n_cols: p, data: per_subject }
}
