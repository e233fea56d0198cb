//! Inverse-probability weights: full-history stabilized (SW), restricted
//! (RSW) and partial (PSW) weights, for scalar outcomes (with or without
//! censoring) and for the time-specific weights of the discrete-time Cox
//! model.
//!
//! Numerator models are pooled logistic "lag models": `LagModel(j)` regresses
//! `A(k)` on the time terms and `A(k-1), ..., A(k-j)`, fitted on rows with
//! `k >= j`. The factor at time `k` for a product whose window starts at `s`
//! uses `LagModel(min(k - s, depth))`; SW and PSW use `s = 0`, RSW uses the
//! window start. Consequently RSW and PSW at `m = K` reproduce SW exactly.

use crate::dgp::TruthRecord;
use crate::error::{Error, Result};
use crate::glm::{fit_weighted_logistic, Design};
use crate::panel::{LongPanel, PersonPeriod};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;

/// Probabilities are clamped to `[FLOOR, 1 - FLOOR]` before ratios are formed.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Sw,
    Rsw,
    Psw,
}

impl WeightKind {
    pub const ALL: [WeightKind; 3] = [WeightKind::Sw, WeightKind::Rsw, WeightKind::Psw];

    pub fn label(self) -> &'static str {
        match self {
            WeightKind::Sw => "SW",
            WeightKind::Rsw => "RSW",
            WeightKind::Psw => "PSW",
        }
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeTerms {
    None,
    /// One indicator per time point after the first one in the fitting rows.
    Dummies,
    /// Powers of `k / K` up to the given degree.
    Polynomial(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// One logistic fit across all time points, with time terms.
    Pooled,
    /// A separate logistic fit at every time point.
    PerTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Clamp weights into `[lo, hi]`.
    Bounds { lo: f64, hi: f64 },
    /// Clamp weights into their empirical `lo` and `hi` quantiles (fractions in `[0, 1]`).
    Percentiles { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightModelSpec {
    pub time_terms: TimeTerms,
    pub pooling: Pooling,
    /// Denominators include the current covariates `L(k)`.
    pub denominator_current: bool,
    /// Denominators include the initial covariates `L(0)`.
    pub denominator_initial: bool,
    /// Number of treatment lags `A(k-1), ...` in denominators.
    pub denominator_lags: usize,
    /// Maximum number of treatment lags in numerator models.
    pub numerator_depth: usize,
    /// Numerators additionally condition on `L(0)`.
    pub numerator_initial: bool,
    pub truncation: Option<Truncation>,
}

impl WeightModelSpec {
    /// Defaults: time dummies and full-depth numerators for short panels,
    /// a quadratic time trend and two-lag numerators for long ones.
    pub fn for_horizon(horizon: usize) -> Self {
        let short = horizon <= 6;
        Self {
            time_terms: if short { TimeTerms::Dummies } else { TimeTerms::Polynomial(2) },
            pooling: Pooling::Pooled,
            denominator_current: true,
            denominator_initial: true,
            denominator_lags: 1,
            numerator_depth: if short { horizon.saturating_sub(1) } else { 2 },
            numerator_initial: false,
            truncation: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TruncationReport {
    pub applied: bool,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// IP-weights of one kind and window length.
///
/// Mean mode: one value per subject (`NaN` for subjects censored by `K`).
/// Survival mode: one value per person-period row, aligned with
/// [`LongPanel::expand_person_periods`]; the row at time `k` carries `W(k+1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightSet {
    pub kind: WeightKind,
    pub m: usize,
    pub survival: bool,
    pub values: Vec<f64>,
    pub truncation: TruncationReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightSummary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub truncated: usize,
}

impl fmt::Display for WeightSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} mean={:.4} sd={:.4} min={:.4} max={:.4} truncated={}",
            self.count, self.mean, self.sd, self.min, self.max, self.truncated
        )
    }
}

/// Descriptive statistics over contributing (finite) weights.
pub fn weight_summary(ws: &WeightSet) -> WeightSummary {
    let vals: Vec<f64> = ws.values.iter().copied().filter(|v| v.is_finite()).collect();
    let count = vals.len();
    let mean = if count > 0 { vals.iter().sum::<f64>() / count as f64 } else { f64::NAN };
    let sd = if count > 1 {
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    WeightSummary {
        count,
        mean,
        sd,
        min: vals.iter().copied().fold(f64::INFINITY, f64::min),
        max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        truncated: ws.truncation.count,
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Clamps finite weights in place and reports what was changed.
pub fn truncate_weights(values: &mut [f64], rule: Truncation) -> TruncationReport {
    let (lower, upper) = match rule {
        Truncation::Bounds { lo, hi } => (lo, hi),
        Truncation::Percentiles { lo, hi } => {
            let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
            sorted.sort_by(f64::total_cmp);
            (quantile(&sorted, lo), quantile(&sorted, hi))
        }
    };
    let mut count = 0;
    for v in values.iter_mut().filter(|v| v.is_finite()) {
        if *v < lower {
            *v = lower;
            count += 1;
        } else if *v > upper {
            *v = upper;
            count += 1;
        }
    }
    TruncationReport { applied: true, lower, upper, count }
}

/// Fitted treatment (and censoring) models evaluated on every person-period row.
#[derive(Clone, Debug)]
pub struct FittedWeightModels {
    horizon: usize,
    depth: usize,
    rows: Vec<PersonPeriod>,
    row_offset: Vec<usize>,
    den_treatment: Vec<f64>,
    num_treatment: Vec<f64>,
    den_censoring: Option<Vec<f64>>,
    num_censoring: Option<Vec<f64>>,
    floor_hits: usize,
    truncation: Option<Truncation>,
}

struct RoleFit<'a> {
    panel: &'a LongPanel,
    rows: &'a [PersonPeriod],
    spec: &'a WeightModelSpec,
}

impl RoleFit<'_> {
    fn time_columns(&self, min_time: usize) -> impl Fn(usize, &mut Vec<f64>) {
        let k_total = self.panel.horizon();
        let max_time = self.rows.iter().map(|r| r.t).max().unwrap_or(0);
        let n_times = (max_time + 1).saturating_sub(min_time);
        let terms = self.spec.time_terms;
        move |t: usize, out: &mut Vec<f64>| match terms {
            TimeTerms::None => {}
            TimeTerms::Dummies => {
                for tt in (min_time + 1)..=max_time {
                    out.push(if t == tt { 1.0 } else { 0.0 });
                }
            }
            TimeTerms::Polynomial(deg) => {
                let u = t as f64 / k_total as f64;
                let mut pw = 1.0;
                for _ in 0..deg.min(n_times.saturating_sub(1)) {
                    pw *= u;
                    out.push(pw);
                }
            }
        }
    }

    /// Fits `P[response = 1]` on rows with `t >= min_time` and returns the
    /// prediction for each such row (`NaN` elsewhere).
    fn fit(
        &self,
        min_time: usize,
        response: impl Fn(&PersonPeriod) -> Option<bool>,
        features: impl Fn(&PersonPeriod, &mut Vec<f64>),
    ) -> Result<Vec<f64>> {
        let mut pred = vec![f64::NAN; self.rows.len()];
        let groups: Vec<(usize, Vec<usize>)> = match self.spec.pooling {
            Pooling::Pooled => vec![(min_time, (0..self.rows.len()).filter(|&r| self.rows[r].t >= min_time).collect())],
            Pooling::PerTime => {
                let max_time = self.rows.iter().map(|r| r.t).max().unwrap_or(0);
                (min_time..=max_time)
                    .map(|k| (k, (0..self.rows.len()).filter(|&r| self.rows[r].t == k).collect()))
                    .collect()
            }
        };
        let pooled = self.spec.pooling == Pooling::Pooled;
        for (start, members) in groups {
            if members.is_empty() {
                continue;
            }
            let time_cols = self.time_columns(start);
            let mut buf = Vec::new();
            let mut build = |r: &PersonPeriod| {
                buf.clear();
                buf.push(1.0);
                if pooled {
                    time_cols(r.t, &mut buf);
                }
                features(r, &mut buf);
                buf.clone()
            };
            let width = build(&self.rows[members[0]]).len();
            let mut x = Design::with_capacity(width, members.len());
            let mut y = Vec::with_capacity(members.len());
            for &r in &members {
                if let Some(v) = response(&self.rows[r]) {
                    x.push_row(&build(&self.rows[r]));
                    y.push(if v { 1.0 } else { 0.0 });
                }
            }
            let w = vec![1.0; y.len()];
            let fit = fit_weighted_logistic(&x, &y, &w)?;
            for &r in &members {
                pred[r] = fit.probability(&build(&self.rows[r]));
            }
        }
        Ok(pred)
    }
}

fn clamp_probabilities(values: &mut [f64], hits: &mut usize) {
    for p in values.iter_mut().filter(|p| !p.is_nan()) {
        if *p < PROBABILITY_FLOOR {
            *p = PROBABILITY_FLOOR;
            *hits += 1;
        } else if *p > 1.0 - PROBABILITY_FLOOR {
            *p = 1.0 - PROBABILITY_FLOOR;
            *hits += 1;
        }
    }
}

impl FittedWeightModels {
    /// Fits denominator and numerator models on the panel's person-period rows.
    pub fn fit(panel: &LongPanel, spec: &WeightModelSpec) -> Result<Self> {
        Self::fit_inner(panel, spec, None)
    }

    /// Uses the generating treatment/censoring probabilities as denominators;
    /// numerators are still fitted.
    pub fn fit_with_truth(panel: &LongPanel, spec: &WeightModelSpec, truth: &TruthRecord) -> Result<Self> {
        Self::fit_inner(panel, spec, Some(truth))
    }

    fn fit_inner(panel: &LongPanel, spec: &WeightModelSpec, truth: Option<&TruthRecord>) -> Result<Self> {
        let rows = panel.expand_person_periods()?;
        if rows.is_empty() {
            return Err(Error::Degenerate("panel has no person-period rows".into()));
        }
        let k_total = panel.horizon();
        let depth = spec.numerator_depth.min(k_total.saturating_sub(1));
        let mut row_offset = vec![0; panel.n() + 1];
        for r in &rows {
            row_offset[r.subject + 1] += 1;
        }
        for i in 0..panel.n() {
            row_offset[i + 1] += row_offset[i];
        }

        let role = RoleFit { panel, rows: &rows, spec };
        let per_time = spec.pooling == Pooling::PerTime;
        let use_initial = spec.denominator_initial && k_total > 1;
        let lag = |r: &PersonPeriod, l: usize| panel.lagged_treatment(r.subject, r.t, l);
        let push_initial = |r: &PersonPeriod, out: &mut Vec<f64>| {
            out.extend_from_slice(panel.baseline(r.subject));
            out.extend_from_slice(panel.covariates_at(r.subject, 0));
        };
        let den_lags = |r: &PersonPeriod| if per_time { spec.denominator_lags.min(r.t) } else { spec.denominator_lags };

        let den_features = |with_current_a: bool| {
            move |r: &PersonPeriod, out: &mut Vec<f64>| {
                if spec.denominator_current {
                    out.extend_from_slice(panel.covariates_at(r.subject, r.t));
                }
                if use_initial && !(per_time && r.t == 0) {
                    push_initial(r, out);
                }
                if with_current_a {
                    out.push(lag(r, 0));
                }
                for l in 1..=den_lags(r) {
                    out.push(lag(r, l));
                }
            }
        };
        let treatment_response = |r: &PersonPeriod| Some(r.treatment == 1);
        let censor_response = |r: &PersonPeriod| r.censored_next;

        let (den_treatment, den_censoring) = match truth {
            Some(truth) => {
                let dt = rows.iter().map(|r| truth.treatment(r.subject, r.t)).collect();
                let dc = if panel.has_censoring() {
                    let probs: Vec<f64> = rows.iter().filter_map(|r| truth.censoring(r.subject, r.t)).collect();
                    if probs.len() != rows.len() {
                        return Err(Error::InvalidArgument("truth record lacks censoring probabilities".into()));
                    }
                    Some(probs)
                } else {
                    None
                };
                (dt, dc)
            }
            None => {
                let dt = role.fit(0, treatment_response, den_features(false))?;
                let dc = if panel.has_censoring() { Some(role.fit(0, censor_response, den_features(true))?) } else { None };
                (dt, dc)
            }
        };

        let width = depth + 1;
        let mut num_treatment = vec![f64::NAN; rows.len() * width];
        let mut num_censoring = panel.has_censoring().then(|| vec![f64::NAN; rows.len() * width]);
        for j in 0..=depth {
            let features = |first_lag: usize| {
                move |r: &PersonPeriod, out: &mut Vec<f64>| {
                    for l in first_lag..=j {
                        out.push(lag(r, l));
                    }
                    if spec.numerator_initial {
                        push_initial(r, out);
                    }
                }
            };
            let pred = role.fit(j, treatment_response, features(1))?;
            for (r, p) in pred.into_iter().enumerate() {
                num_treatment[r * width + j] = p;
            }
            if let Some(nc) = num_censoring.as_mut() {
                let pred = role.fit(j, censor_response, features(0))?;
                for (r, p) in pred.into_iter().enumerate() {
                    nc[r * width + j] = p;
                }
            }
        }

        let mut floor_hits = 0;
        let mut den_treatment: Vec<f64> = den_treatment;
        let mut den_censoring = den_censoring;
        clamp_probabilities(&mut den_treatment, &mut floor_hits);
        if let Some(dc) = den_censoring.as_mut() {
            clamp_probabilities(dc, &mut floor_hits);
        }
        clamp_probabilities(&mut num_treatment, &mut floor_hits);
        if let Some(nc) = num_censoring.as_mut() {
            clamp_probabilities(nc, &mut floor_hits);
        }
        if floor_hits > 0 {
            log::warn!("{floor_hits} fitted probabilities hit the floor {PROBABILITY_FLOOR:e}; positivity is in doubt");
        }

        Ok(Self {
            horizon: k_total,
            depth,
            rows,
            row_offset,
            den_treatment,
            num_treatment,
            den_censoring,
            num_censoring,
            floor_hits,
            truncation: spec.truncation,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn person_periods(&self) -> &[PersonPeriod] {
        &self.rows
    }

    /// Number of probabilities clamped at the positivity floor.
    pub fn floor_hits(&self) -> usize {
        self.floor_hits
    }

    /// Row index of subject `i` at time `k`.
    pub fn row_index(&self, i: usize, k: usize) -> usize {
        debug_assert!(self.row_offset[i] + k < self.row_offset[i + 1]);
        self.row_offset[i] + k
    }

    /// Treatment-by-censoring ratio at row `r` when the numerator
    /// conditions on `lags` past treatments.
    #[inline]
    pub fn factor(&self, r: usize, lags: usize) -> f64 {
        let j = lags.min(self.depth);
        let w = self.depth + 1;
        let a = self.rows[r].treatment;
        let f = |p: f64| if a == 1 { p } else { 1.0 - p };
        let mut ratio = f(self.num_treatment[r * w + j]) / f(self.den_treatment[r]);
        if let (Some(nc), Some(dc)) = (&self.num_censoring, &self.den_censoring) {
            ratio *= (1.0 - nc[r * w + j]) / (1.0 - dc[r]);
        }
        ratio
    }

    fn check_m(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.horizon {
            return Err(Error::InvalidArgument(format!("m = {m} outside 1..={}", self.horizon)));
        }
        Ok(())
    }

    fn finish(&self, kind: WeightKind, m: usize, survival: bool, mut values: Vec<f64>) -> WeightSet {
        let truncation = match self.truncation {
            Some(rule) => truncate_weights(&mut values, rule),
            None => TruncationReport::default(),
        };
        let m = if kind == WeightKind::Sw { self.horizon } else { m };
        WeightSet { kind, m, survival, values, truncation }
    }

    /// Subject-level weights for a scalar outcome.
    pub fn mean_weights(&self, panel: &LongPanel, kind: WeightKind, m: usize) -> Result<WeightSet> {
        self.check_m(m)?;
        let k_total = self.horizon;
        let first = if kind == WeightKind::Sw { 0 } else { k_total - m };
        let start = if kind == WeightKind::Rsw { first } else { 0 };
        let values = (0..panel.n())
            .map(|i| {
                if !panel.uncensored_at_end(i) || panel.follow_up(i) < k_total {
                    return f64::NAN;
                }
                (first..k_total).map(|k| self.factor(self.row_index(i, k), k - start)).product()
            })
            .collect();
        Ok(self.finish(kind, m, false, values))
    }

    /// Time-specific weights `W(t)` on every person-period row.
    pub fn survival_weights(&self, kind: WeightKind, m: usize) -> Result<WeightSet> {
        self.check_m(m)?;
        let values = self
            .rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let t = row.t + 1;
                let first = if kind == WeightKind::Sw { 0 } else { t.saturating_sub(m) };
                let start = if kind == WeightKind::Rsw { first } else { 0 };
                let base = r - row.t;
                (first..t).map(|k| self.factor(base + k, k - start)).product()
            })
            .collect();
        Ok(self.finish(kind, m, true, values))
    }
}

/// Fits the weight models and builds subject-level weights.
pub fn build_weights(panel: &LongPanel, spec: &WeightModelSpec, kind: WeightKind, m: usize) -> Result<WeightSet> {
    FittedWeightModels::fit(panel, spec)?.mean_weights(panel, kind, m)
}

/// Fits the weight models and builds time-specific survival weights.
pub fn build_survival_weights(panel: &LongPanel, spec: &WeightModelSpec, kind: WeightKind, m: usize) -> Result<WeightSet> {
    if !panel.is_survival() {
        return Err(Error::InvalidArgument("survival weights need event indicators".into()));
    }
    FittedWeightModels::fit(panel, spec)?.survival_weights(kind, m)
}

/// Writes `id,[t,]kind,m,weight` rows.
pub fn write_weights_csv<W: Write>(panel: &LongPanel, ws: &WeightSet, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    if ws.survival {
        w.write_record(["id", "t", "kind", "m", "weight"])?;
        let rows = panel.expand_person_periods()?;
        for (row, v) in rows.iter().zip(&ws.values) {
            w.write_record([row.id.to_string(), (row.t + 1).to_string(), ws.kind.to_string(), ws.m.to_string(), v.to_string()])?;
        }
    } else {
        w.write_record(["id", "kind", "m", "weight"])?;
        for (i, v) in ws.values.iter().enumerate() {
            w.write_record([panel.id(i).to_string(), ws.kind.to_string(), ws.m.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate_normal, generate_survival, NormalDgpConfig, SurvivalDgpConfig};

    #[test]
    fn full_window_identities_are_exact() {
        let (panel, _) = generate_normal(&NormalDgpConfig::scenario1(2000, 5));
        let models = FittedWeightModels::fit(&panel, &WeightModelSpec::for_horizon(4)).unwrap();
        let sw = models.mean_weights(&panel, WeightKind::Sw, 4).unwrap();
        let rsw = models.mean_weights(&panel, WeightKind::Rsw, 4).unwrap();
        let psw = models.mean_weights(&panel, WeightKind::Psw, 4).unwrap();
        assert_eq!(sw.values, rsw.values);
        assert_eq!(sw.values, psw.values);
        assert!(sw.values.iter().all(|w| w.is_finite() && *w > 0.0));
    }

    #[test]
    fn identical_numerator_and_denominator_give_unit_weights() {
        // Treatment independent of L: denominators without L reduce to the numerator model.
        let (panel, _) = generate_normal(&NormalDgpConfig::scenario1(500, 2));
        let spec = WeightModelSpec {
            denominator_current: false,
            denominator_initial: false,
            denominator_lags: 0,
            numerator_depth: 0,
            ..WeightModelSpec::for_horizon(4)
        };
        let ws = build_weights(&panel, &spec, WeightKind::Sw, 4).unwrap();
        assert!(ws.values.iter().all(|w| (*w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn survival_single_factor_window() {
        let (panel, truth) = generate_survival(&SurvivalDgpConfig::new(300, 1));
        let spec = WeightModelSpec::for_horizon(36);
        let models = FittedWeightModels::fit_with_truth(&panel, &spec, &truth).unwrap();
        let ws = models.survival_weights(WeightKind::Psw, 1).unwrap();
        for (r, row) in models.person_periods().iter().enumerate().take(200) {
            assert_eq!(ws.values[r], models.factor(r, row.t));
        }
    }

    #[test]
    fn percentile_truncation_reports_counts() {
        let mut v: Vec<f64> = (1..=100).map(|x| x as f64).collect();
        let rep = truncate_weights(&mut v, Truncation::Percentiles { lo: 0.05, hi: 0.95 });
        assert!(rep.count > 0);
        assert!(v.iter().all(|x| *x >= rep.lower && *x <= rep.upper));
    }

    #[test]
    fn summary_of_unit_weights() {
        let ws = WeightSet { kind: WeightKind::Sw, m: 4, survival: false, values: vec![1.0; 10], truncation: Default::default() };
        let s = weight_summary(&ws);
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.sd, 0.0);
    }
}
