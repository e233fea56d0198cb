//! Point estimators with influence functions: the weighted (Hájek) contrast,
//! main-effect weighted least squares, the L(0)-adjusted variant, the
//! weighted Cox model, and the adaptive combined estimators.
//!
//! Influence contributions are scaled so that the naive sandwich variance is
//! `Σ φ_i² / n²`, with `n` the number of subjects in the panel.

use crate::dgp::TruthRecord;
use crate::error::{Error, Result};
use crate::glm::{fit_weighted_cox, fit_wls, CoxData, Design, GlmFit};
use crate::infer::{pair_test, PairTest};
use crate::ipw::{FittedWeightModels, WeightKind, WeightModelSpec, WeightSet};
use crate::panel::LongPanel;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Sw,
    Rsw,
    Psw,
    /// PSW unless it differs significantly from SW.
    SwPsw,
    /// PSW unless it differs significantly from RSW.
    RswPsw,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Sw => "SW",
            EstimatorKind::Rsw => "RSW",
            EstimatorKind::Psw => "PSW",
            EstimatorKind::SwPsw => "PSW_SW",
            EstimatorKind::RswPsw => "PSW_RSW",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl From<WeightKind> for EstimatorKind {
    fn from(k: WeightKind) -> Self {
        match k {
            WeightKind::Sw => EstimatorKind::Sw,
            WeightKind::Rsw => EstimatorKind::Rsw,
            WeightKind::Psw => EstimatorKind::Psw,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelForm {
    /// Always-treated versus never-treated cell means over the last `m` times.
    Saturated,
    /// `ψ0 + Σ_j ψ_j A(K−j)`; the estimate is `Σ_j ψ_j`.
    Main,
    /// Main-effect model plus `L(0)`, with numerators conditioned on `L(0)`.
    MainAdjusted,
}

impl fmt::Display for ModelForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelForm::Saturated => "saturated",
            ModelForm::Main => "main",
            ModelForm::MainAdjusted => "main_adjusted",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimate: f64,
    /// Per-subject influence contributions `φ_i`.
    pub influence: Vec<f64>,
    /// Naive sandwich variance `Σ φ_i² / n²`.
    pub variance: f64,
    pub kind: EstimatorKind,
    pub m: usize,
    pub model_form: ModelForm,
    /// Kish effective sample size of the (treated, control) arms, saturated form only.
    pub n_effective: Option<[f64; 2]>,
    /// For combined estimators: the weight kind whose estimate was returned.
    pub branch: Option<WeightKind>,
    /// For combined estimators: the pretest that chose the branch. The
    /// reported variance ignores this pretest.
    pub pretest: Option<PairTest>,
}

impl EstimateResult {
    pub fn from_influence(estimate: f64, influence: Vec<f64>, kind: EstimatorKind, m: usize, model_form: ModelForm) -> Self {
        let n = influence.len() as f64;
        let variance = influence.iter().map(|v| v * v).sum::<f64>() / (n * n);
        Self { estimate, influence, variance, kind, m, model_form, n_effective: None, branch: None, pretest: None }
    }

    pub fn se(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// Membership in the always-treated (`1_m`) and never-treated (`0_m`) arms
/// over the last `m` treatment times.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastArms {
    pub treated: Vec<bool>,
    pub control: Vec<bool>,
}

pub fn contrast_arms(panel: &LongPanel, m: usize) -> ContrastArms {
    let k = panel.horizon();
    let (treated, control) = (0..panel.n())
        .map(|i| {
            let window = &panel.treatment_history(i)[k - m..];
            (window.iter().all(|&a| a == 1.0), window.iter().all(|&a| a == 0.0))
        })
        .unzip();
    ContrastArms { treated, control }
}

fn check_window(panel: &LongPanel, ws: &WeightSet, m: usize) -> Result<()> {
    if m == 0 || m > panel.horizon() {
        return Err(Error::InvalidArgument(format!("m = {m} outside 1..={}", panel.horizon())));
    }
    if ws.survival {
        return Err(Error::InvalidArgument("time-specific weights need the Cox estimator".into()));
    }
    if ws.values.len() != panel.n() {
        return Err(Error::InvalidArgument("weight set does not match the panel".into()));
    }
    if ws.m != m && ws.kind != WeightKind::Sw {
        return Err(Error::InvalidArgument(format!("{} weights built for m = {}, requested m = {m}", ws.kind, ws.m)));
    }
    Ok(())
}

/// Subjects that contribute to an outcome regression: outcome observed and weight finite.
fn contributing(panel: &LongPanel, ws: &WeightSet, i: usize) -> Option<(f64, f64)> {
    let y = panel.outcome_value(i)?;
    let w = ws.values[i];
    (w.is_finite() && panel.uncensored_at_end(i)).then_some((y, w))
}

/// Hájek contrast of weighted arm means.
pub fn contrast_estimate(panel: &LongPanel, ws: &WeightSet, m: usize) -> Result<EstimateResult> {
    check_window(panel, ws, m)?;
    let arms = contrast_arms(panel, m);
    let n = panel.n();
    let nf = n as f64;
    let mut sums = [[0.0; 3]; 2]; // per arm: Σw, Σw y, Σw²
    for i in 0..n {
        if let Some((y, w)) = contributing(panel, ws, i) {
            for (a, member) in [(1, arms.treated[i]), (0, arms.control[i])] {
                if member {
                    sums[a][0] += w;
                    sums[a][1] += w * y;
                    sums[a][2] += w * w;
                }
            }
        }
    }
    for (a, name) in [(1, "treated"), (0, "control")] {
        if sums[a][0] <= 0.0 {
            return Err(Error::Estimability { arm: name, m });
        }
    }
    let mu = [sums[0][1] / sums[0][0], sums[1][1] / sums[1][0]];
    let p = [sums[0][0] / nf, sums[1][0] / nf];
    let influence = (0..n)
        .map(|i| match contributing(panel, ws, i) {
            Some((y, w)) => {
                let mut phi = 0.0;
                if arms.treated[i] {
                    phi += w * (y - mu[1]) / p[1];
                }
                if arms.control[i] {
                    phi -= w * (y - mu[0]) / p[0];
                }
                phi
            }
            None => 0.0,
        })
        .collect();
    let mut r = EstimateResult::from_influence(mu[1] - mu[0], influence, ws.kind.into(), m, ModelForm::Saturated);
    r.n_effective = Some([sums[1][0].powi(2) / sums[1][2], sums[0][0].powi(2) / sums[0][2]]);
    Ok(r)
}

fn wls_influence(fit: &GlmFit, contrast: &[f64], rows: &[usize], n: usize) -> Vec<f64> {
    let v = &fit.bread * DVector::from_column_slice(contrast);
    let mut phi = vec![0.0; n];
    for (r, &i) in rows.iter().enumerate() {
        phi[i] = n as f64 * crate::glm::dot(fit.scores.row(r), v.as_slice());
    }
    phi
}

/// Weighted regression of `Y` on the last `m` treatments (plus `L(0)` for
/// the adjusted form); the estimate is the sum of the treatment coefficients.
pub fn wls_estimate(panel: &LongPanel, ws: &WeightSet, m: usize, model_form: ModelForm) -> Result<EstimateResult> {
    if model_form == ModelForm::Saturated {
        return saturated_wls_estimate(panel, ws, m);
    }
    check_window(panel, ws, m)?;
    let k = panel.horizon();
    let adjusted = model_form == ModelForm::MainAdjusted;
    let width = 1 + m + if adjusted { panel.n_baseline() + panel.n_covariates() } else { 0 };
    let mut x = Design::with_capacity(width, panel.n());
    let (mut y, mut w, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    let mut buf = Vec::with_capacity(width);
    for i in 0..panel.n() {
        if let Some((yi, wi)) = contributing(panel, ws, i) {
            buf.clear();
            buf.push(1.0);
            buf.extend((1..=m).map(|j| panel.treatment(i, k - j)));
            if adjusted {
                buf.extend(panel.initial_covariates(i));
            }
            x.push_row(&buf);
            y.push(yi);
            w.push(wi);
            rows.push(i);
        }
    }
    let fit = fit_wls(&x, &y, &w)?;
    let mut c = vec![0.0; width];
    c[1..=m].iter_mut().for_each(|v| *v = 1.0);
    let estimate = fit.coefficients[1..=m].iter().sum();
    let influence = wls_influence(&fit, &c, &rows, panel.n());
    Ok(EstimateResult::from_influence(estimate, influence, ws.kind.into(), m, model_form))
}

/// L(0)-adjusted main-effect estimator.
pub fn wls_estimate_adjusted(panel: &LongPanel, ws: &WeightSet, m: usize) -> Result<EstimateResult> {
    wls_estimate(panel, ws, m, ModelForm::MainAdjusted)
}

/// Weighted least squares on all `2^m` cell indicators of the last `m`
/// treatments; algebraically identical to [`contrast_estimate`].
pub fn saturated_wls_estimate(panel: &LongPanel, ws: &WeightSet, m: usize) -> Result<EstimateResult> {
    check_window(panel, ws, m)?;
    if m > 16 {
        return Err(Error::InvalidArgument("saturated design limited to m <= 16".into()));
    }
    let k = panel.horizon();
    let cells = 1usize << m;
    let mut x = Design::with_capacity(cells, panel.n());
    let (mut y, mut w, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    let mut buf = vec![0.0; cells];
    for i in 0..panel.n() {
        if let Some((yi, wi)) = contributing(panel, ws, i) {
            let cell = (1..=m).fold(0, |acc, j| acc | ((panel.treatment(i, k - j) as usize) << (j - 1)));
            buf.iter_mut().for_each(|v| *v = 0.0);
            buf[cell] = 1.0;
            x.push_row(&buf);
            y.push(yi);
            w.push(wi);
            rows.push(i);
        }
    }
    let fit = fit_wls(&x, &y, &w)?;
    let mut c = vec![0.0; cells];
    c[cells - 1] = 1.0;
    c[0] = -1.0;
    let estimate = fit.coefficients[cells - 1] - fit.coefficients[0];
    let influence = wls_influence(&fit, &c, &rows, panel.n());
    Ok(EstimateResult::from_influence(estimate, influence, ws.kind.into(), m, ModelForm::Saturated))
}

/// Weighted Cox model on `A(t−1), ..., A(t−m)` with time-specific weights;
/// the estimate is the sum of the `m` log hazard ratios.
pub fn cox_estimate(panel: &LongPanel, models: &FittedWeightModels, ws: &WeightSet, m: usize) -> Result<EstimateResult> {
    if !ws.survival || !panel.is_survival() {
        return Err(Error::InvalidArgument("the Cox estimator needs a survival panel and time-specific weights".into()));
    }
    if m == 0 || m > panel.horizon() {
        return Err(Error::InvalidArgument(format!("m = {m} outside 1..={}", panel.horizon())));
    }
    let rows = models.person_periods();
    if rows.len() != ws.values.len() {
        return Err(Error::InvalidArgument("weight set does not match the person-period rows".into()));
    }
    let mut data = CoxData::new(m, panel.n());
    let mut x = vec![0.0; m];
    for (row, &w) in rows.iter().zip(&ws.values) {
        if row.censored_next == Some(true) {
            continue;
        }
        for (j, v) in x.iter_mut().enumerate() {
            *v = panel.lagged_treatment(row.subject, row.t, j);
        }
        data.push(row.subject, row.t + 1, &x, w, row.event_next == Some(true));
    }
    let fit = fit_weighted_cox(&data)?;
    let c = vec![1.0; m];
    let subjects: Vec<usize> = (0..panel.n()).collect();
    let influence = wls_influence(&fit, &c, &subjects, panel.n());
    let estimate = fit.coefficients.iter().sum();
    Ok(EstimateResult::from_influence(estimate, influence, ws.kind.into(), m, ModelForm::Main))
}

/// Returns the base estimate when the PSW-versus-base test rejects at
/// level `alpha`, and the PSW estimate otherwise.
pub fn combine(psw: &EstimateResult, base: &EstimateResult, alpha: f64) -> Result<EstimateResult> {
    let kind = match base.kind {
        EstimatorKind::Sw => EstimatorKind::SwPsw,
        EstimatorKind::Rsw => EstimatorKind::RswPsw,
        other => return Err(Error::InvalidArgument(format!("{other} cannot serve as the base estimator"))),
    };
    let test = pair_test(psw, base, alpha)?;
    let (chosen, branch) = if test.rejected { (base, base.kind) } else { (psw, EstimatorKind::Psw) };
    let mut out = chosen.clone();
    out.kind = kind;
    out.branch = Some(match branch {
        EstimatorKind::Sw => WeightKind::Sw,
        EstimatorKind::Rsw => WeightKind::Rsw,
        _ => WeightKind::Psw,
    });
    out.pretest = Some(test);
    Ok(out)
}

/// One dataset's fitted weight models plus memoized estimates.
///
/// The outcome mode follows the panel (scalar outcome with or without
/// censoring, or survival); the model form selects the outcome regression.
pub struct Analysis<'a> {
    panel: &'a LongPanel,
    models: FittedWeightModels,
    form: ModelForm,
    cache: RefCell<HashMap<(WeightKind, usize), EstimateResult>>,
}

impl<'a> Analysis<'a> {
    pub fn new(panel: &'a LongPanel, spec: &WeightModelSpec, form: ModelForm) -> Result<Self> {
        Self::build(panel, spec, form, None)
    }

    /// Uses the generating probabilities as weight denominators.
    pub fn with_truth(panel: &'a LongPanel, spec: &WeightModelSpec, form: ModelForm, truth: &TruthRecord) -> Result<Self> {
        Self::build(panel, spec, form, Some(truth))
    }

    fn build(panel: &'a LongPanel, spec: &WeightModelSpec, form: ModelForm, truth: Option<&TruthRecord>) -> Result<Self> {
        if panel.is_survival() && form != ModelForm::Main {
            return Err(Error::InvalidArgument("survival panels support the main-effect Cox model only".into()));
        }
        let mut spec = spec.clone();
        if form == ModelForm::MainAdjusted {
            spec.numerator_initial = true;
        }
        let models = match truth {
            Some(t) => FittedWeightModels::fit_with_truth(panel, &spec, t)?,
            None => FittedWeightModels::fit(panel, &spec)?,
        };
        Ok(Self { panel, models, form, cache: RefCell::new(HashMap::new()) })
    }

    pub fn panel(&self) -> &LongPanel {
        self.panel
    }

    pub fn models(&self) -> &FittedWeightModels {
        &self.models
    }

    pub fn form(&self) -> ModelForm {
        self.form
    }

    pub fn horizon(&self) -> usize {
        self.panel.horizon()
    }

    pub fn weights(&self, kind: WeightKind, m: usize) -> Result<WeightSet> {
        if self.panel.is_survival() {
            self.models.survival_weights(kind, m)
        } else {
            self.models.mean_weights(self.panel, kind, m)
        }
    }

    /// Estimate for a single weight kind at window length `m` (memoized).
    pub fn estimate(&self, kind: WeightKind, m: usize) -> Result<EstimateResult> {
        if let Some(hit) = self.cache.borrow().get(&(kind, m)) {
            return Ok(hit.clone());
        }
        let ws = self.weights(kind, m)?;
        let result = if self.panel.is_survival() {
            cox_estimate(self.panel, &self.models, &ws, m)?
        } else {
            match self.form {
                ModelForm::Saturated => contrast_estimate(self.panel, &ws, m)?,
                form => wls_estimate(self.panel, &ws, m, form)?,
            }
        };
        self.cache.borrow_mut().insert((kind, m), result.clone());
        Ok(result)
    }

    /// Estimator of any kind, including the combined ones.
    pub fn estimate_kind(&self, kind: EstimatorKind, m: usize, alpha: f64) -> Result<EstimateResult> {
        match kind {
            EstimatorKind::Sw => self.estimate(WeightKind::Sw, m),
            EstimatorKind::Rsw => self.estimate(WeightKind::Rsw, m),
            EstimatorKind::Psw => self.estimate(WeightKind::Psw, m),
            EstimatorKind::SwPsw => self.combined(m, alpha, WeightKind::Sw),
            EstimatorKind::RswPsw => self.combined(m, alpha, WeightKind::Rsw),
        }
    }

    /// Combined estimator with base SW or RSW at an already-selected `m`.
    pub fn combined(&self, m: usize, alpha: f64, base: WeightKind) -> Result<EstimateResult> {
        let psw = self.estimate(WeightKind::Psw, m)?;
        let base = self.estimate(base, m)?;
        combine(&psw, &base, alpha)
    }
}

/// Convenience wrapper: fit weight models on `panel` and return the combined estimator.
pub fn combined_estimate(
    panel: &LongPanel,
    spec: &WeightModelSpec,
    form: ModelForm,
    m: usize,
    alpha: f64,
    base: WeightKind,
) -> Result<EstimateResult> {
    Analysis::new(panel, spec, form)?.combined(m, alpha, base)
}
