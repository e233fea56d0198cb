//! Longitudinal panel data model.
//!
//! Each subject is observed in the order `L(0), A(0), C(1), [Y(1)], L(1), A(1), C(2), ...`
//! until censoring or (in survival mode) the event. Everything recorded after
//! that point is stored as an explicit sentinel (`NaN` for reals, [`MISSING`]
//! for indicators) so that an accidental read never looks like a real zero.
//!
//! Time-fixed covariates `B` are stored once per subject and prepended to the
//! time-varying covariates `Z(0)` when `L(0)` is requested.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

/// Sentinel for indicator slots that are never observed.
pub const MISSING: u8 = u8::MAX;

/// How the outcome is recorded and which weight flavour applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeMode {
    /// Scalar outcome at the end of follow-up, no censoring.
    Mean,
    /// Scalar outcome with monotone censoring `C(t)`.
    Censor,
    /// Discrete-time event indicators `Y(t)` with optional censoring.
    Survival,
}

impl fmt::Display for OutcomeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutcomeMode::Mean => "mean",
            OutcomeMode::Censor => "censor",
            OutcomeMode::Survival => "survival",
        })
    }
}

#[derive(Clone, Debug)]
pub enum Outcome {
    /// One value per subject; `NaN` when the subject is censored before `K`.
    Continuous(Vec<f64>),
    /// `n * K` indicators, slot `t - 1` holds `Y(t)`.
    Events(Vec<u8>),
}

/// One subject's full record, used to assemble a [`LongPanel`].
///
/// Vectors are indexed by time and have length `K`; unobserved slots carry
/// the sentinels described in the module docs.
#[derive(Clone, Debug)]
pub struct SubjectRecord {
    pub id: u64,
    pub baseline: Vec<f64>,
    /// `covariates[t][j]` is `Z_j(t)`.
    pub covariates: Vec<Vec<f64>>,
    pub treatments: Vec<f64>,
    /// `censoring[t - 1]` is `C(t)`.
    pub censoring: Option<Vec<u8>>,
    pub outcome: SubjectOutcome,
}

#[derive(Clone, Debug)]
pub enum SubjectOutcome {
    Continuous(f64),
    /// `events[t - 1]` is `Y(t)`.
    Events(Vec<u8>),
}

#[derive(Clone, Debug)]
pub struct LongPanel {
    ids: Vec<u64>,
    horizon: usize,
    n_covariates: usize,
    n_baseline: usize,
    baseline: Vec<f64>,
    covariates: Vec<f64>,
    treatments: Vec<f64>,
    censoring: Option<Vec<u8>>,
    outcome: Outcome,
    follow_up: Vec<usize>,
}

fn same_f64(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || a == b
}

fn same_f64_slice(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| same_f64(*x, *y))
}

impl PartialEq for LongPanel {
    fn eq(&self, other: &Self) -> bool {
        let outcome_eq = match (&self.outcome, &other.outcome) {
            (Outcome::Continuous(a), Outcome::Continuous(b)) => same_f64_slice(a, b),
            (Outcome::Events(a), Outcome::Events(b)) => a == b,
            _ => false,
        };
        self.ids == other.ids
            && self.horizon == other.horizon
            && self.n_covariates == other.n_covariates
            && self.n_baseline == other.n_baseline
            && same_f64_slice(&self.baseline, &other.baseline)
            && same_f64_slice(&self.covariates, &other.covariates)
            && same_f64_slice(&self.treatments, &other.treatments)
            && self.censoring == other.censoring
            && outcome_eq
    }
}

/// A single rule violation reported by [`LongPanel::validate`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub subject: u64,
    pub time: Option<usize>,
    pub rule: Rule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    TreatmentNotBinary,
    TreatmentMissing,
    CovariateMissing,
    BaselineMissing,
    DataAfterFollowUp,
    CensoringNotBinary,
    CensoringNotAbsorbing,
    EventNotBinary,
    EventNotAbsorbing,
    EventWhileCensored,
    OutcomePresence,
    ShapeMismatch,
}

impl Rule {
    pub fn message(self) -> &'static str {
        match self {
            Rule::TreatmentNotBinary => "treatment not binary",
            Rule::TreatmentMissing => "treatment missing during follow-up",
            Rule::CovariateMissing => "covariate missing during follow-up",
            Rule::BaselineMissing => "time-fixed covariate missing",
            Rule::DataAfterFollowUp => "data recorded after censoring or event",
            Rule::CensoringNotBinary => "censoring indicator not binary",
            Rule::CensoringNotAbsorbing => "censoring not absorbing",
            Rule::EventNotBinary => "event indicator not binary",
            Rule::EventNotAbsorbing => "event not absorbing",
            Rule::EventWhileCensored => "event recorded at a censored time",
            Rule::OutcomePresence => "outcome must be present iff uncensored at K",
            Rule::ShapeMismatch => "record shape does not match the panel",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.time {
            Some(t) => write!(f, "subject {} at t={}: {}", self.subject, t, self.rule.message()),
            None => write!(f, "subject {}: {}", self.subject, self.rule.message()),
        }
    }
}

/// One at-risk subject-time: the row used by pooled logistic and Cox fits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PersonPeriod {
    /// Row index of the subject inside the panel.
    pub subject: usize,
    pub id: u64,
    pub t: usize,
    pub treatment: u8,
    /// `C(t + 1)` when the panel has a censoring process.
    pub censored_next: Option<bool>,
    /// `Y(t + 1)` in survival mode, `None` when censored at `t + 1`.
    pub event_next: Option<bool>,
}

impl PersonPeriod {
    /// Lagged treatment `A(t - lag)`, zero before baseline.
    pub fn treatment_lag(&self, panel: &LongPanel, lag: usize) -> f64 {
        panel.lagged_treatment(self.subject, self.t, lag)
    }

    /// Current covariate vector `Z(t)`.
    pub fn covariates<'a>(&self, panel: &'a LongPanel) -> &'a [f64] {
        panel.covariates_at(self.subject, self.t)
    }
}

fn first_one(slots: &[u8]) -> Option<usize> {
    slots.iter().position(|&v| v == 1).map(|p| p + 1)
}

impl LongPanel {
    /// Assembles a panel from per-subject records without validating it.
    ///
    /// Shape problems (wrong vector lengths) are reported by [`validate`](Self::validate)
    /// after padding; use [`LongPanel::new`] for the checked constructor.
    pub fn from_records(horizon: usize, records: &[SubjectRecord]) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        let n = records.len();
        let q = records.first().map(|r| r.covariates.first().map_or(0, Vec::len)).unwrap_or(0);
        let p = records.first().map(|r| r.baseline.len()).unwrap_or(0);
        let has_censoring = records.first().is_some_and(|r| r.censoring.is_some());
        let survival = records.first().is_some_and(|r| matches!(r.outcome, SubjectOutcome::Events(_)));

        let mut ids = Vec::with_capacity(n);
        let mut baseline = Vec::with_capacity(n * p);
        let mut covariates = Vec::with_capacity(n * horizon * q);
        let mut treatments = Vec::with_capacity(n * horizon);
        let mut censoring = has_censoring.then(|| Vec::with_capacity(n * horizon));
        let mut continuous = Vec::new();
        let mut events = Vec::new();

        for r in records {
            let shape_ok = r.baseline.len() == p
                && r.covariates.len() == horizon
                && r.covariates.iter().all(|z| z.len() == q)
                && r.treatments.len() == horizon
                && r.censoring.as_ref().map(Vec::len) == has_censoring.then_some(horizon)
                && match &r.outcome {
                    SubjectOutcome::Continuous(_) => !survival,
                    SubjectOutcome::Events(e) => survival && e.len() == horizon,
                };
            if !shape_ok {
                return Err(Error::InvalidArgument(format!(
                    "subject {}: {}",
                    r.id,
                    Rule::ShapeMismatch.message()
                )));
            }
            ids.push(r.id);
            baseline.extend_from_slice(&r.baseline);
            for z in &r.covariates {
                covariates.extend_from_slice(z);
            }
            treatments.extend_from_slice(&r.treatments);
            if let (Some(dst), Some(src)) = (censoring.as_mut(), r.censoring.as_ref()) {
                dst.extend_from_slice(src);
            }
            match &r.outcome {
                SubjectOutcome::Continuous(y) => continuous.push(*y),
                SubjectOutcome::Events(e) => events.extend_from_slice(e),
            }
        }
        let outcome = if survival { Outcome::Events(events) } else { Outcome::Continuous(continuous) };
        Ok(Self::from_parts(ids, horizon, q, p, baseline, covariates, treatments, censoring, outcome))
    }

    /// Checked constructor: assembles and validates.
    pub fn new(horizon: usize, records: &[SubjectRecord]) -> Result<Self> {
        let panel = Self::from_records(horizon, records)?;
        panel.ensure_valid()?;
        Ok(panel)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        ids: Vec<u64>,
        horizon: usize,
        n_covariates: usize,
        n_baseline: usize,
        baseline: Vec<f64>,
        covariates: Vec<f64>,
        treatments: Vec<f64>,
        censoring: Option<Vec<u8>>,
        outcome: Outcome,
    ) -> Self {
        let n = ids.len();
        let follow_up = (0..n)
            .map(|i| {
                let slots = |v: &[u8]| v[i * horizon..(i + 1) * horizon].to_vec();
                let c = censoring.as_deref().and_then(|c| first_one(&slots(c)));
                let y = match &outcome {
                    Outcome::Events(e) => first_one(&slots(e)),
                    Outcome::Continuous(_) => None,
                };
                match (c, y) {
                    (Some(a), Some(b)) => a.min(b),
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => horizon,
                }
            })
            .collect();
        Self {
            ids,
            horizon,
            n_covariates,
            n_baseline,
            baseline,
            covariates,
            treatments,
            censoring,
            outcome,
            follow_up,
        }
    }

    /// New panel made of the given subjects (repeats allowed, e.g. for bootstrap resamples).
    pub fn subset(&self, indices: &[usize]) -> Self {
        let (k, q, p) = (self.horizon, self.n_covariates, self.n_baseline);
        let pick = |v: &[f64], width: usize| -> Vec<f64> {
            indices.iter().flat_map(|&i| v[i * width..(i + 1) * width].iter().copied()).collect()
        };
        let censoring = self.censoring.as_ref().map(|c| {
            indices.iter().flat_map(|&i| c[i * k..(i + 1) * k].iter().copied()).collect()
        });
        let outcome = match &self.outcome {
            Outcome::Continuous(y) => Outcome::Continuous(indices.iter().map(|&i| y[i]).collect()),
            Outcome::Events(e) => {
                Outcome::Events(indices.iter().flat_map(|&i| e[i * k..(i + 1) * k].iter().copied()).collect())
            }
        };
        Self::from_parts(
            indices.iter().map(|&i| self.ids[i]).collect(),
            k,
            q,
            p,
            pick(&self.baseline, p),
            pick(&self.covariates, k * q),
            pick(&self.treatments, k),
            censoring,
            outcome,
        )
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    /// Number of treatment time points `K`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Dimension of the time-varying covariate `Z(t)`.
    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    /// Dimension of the time-fixed covariate `B`.
    pub fn n_baseline(&self) -> usize {
        self.n_baseline
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> u64 {
        self.ids[i]
    }

    pub fn outcome(&self) -> &Outcome {
        &self.outcome
    }

    pub fn has_censoring(&self) -> bool {
        self.censoring.is_some()
    }

    pub fn is_survival(&self) -> bool {
        matches!(self.outcome, Outcome::Events(_))
    }

    /// The mode implied by the stored outcome and censoring process.
    pub fn mode(&self) -> OutcomeMode {
        match (&self.outcome, self.has_censoring()) {
            (Outcome::Events(_), _) => OutcomeMode::Survival,
            (Outcome::Continuous(_), true) => OutcomeMode::Censor,
            (Outcome::Continuous(_), false) => OutcomeMode::Mean,
        }
    }

    /// Number of observed treatment rows: the first `t` with `C(t) = 1` or
    /// `Y(t) = 1`, otherwise `K`.
    pub fn follow_up(&self, i: usize) -> usize {
        self.follow_up[i]
    }

    /// Raw treatment value (may be `NaN` after follow-up).
    pub fn treatment(&self, i: usize, t: usize) -> f64 {
        self.treatments[i * self.horizon + t]
    }

    /// `A(t - lag)` with the convention `A(-1) = A(-2) = ... = 0`.
    #[inline]
    pub fn lagged_treatment(&self, i: usize, t: usize, lag: usize) -> f64 {
        if lag > t {
            0.0
        } else {
            self.treatments[i * self.horizon + t - lag]
        }
    }

    pub fn treatment_history(&self, i: usize) -> &[f64] {
        &self.treatments[i * self.horizon..(i + 1) * self.horizon]
    }

    /// `Z(t)`.
    #[inline]
    pub fn covariates_at(&self, i: usize, t: usize) -> &[f64] {
        let q = self.n_covariates;
        let start = (i * self.horizon + t) * q;
        &self.covariates[start..start + q]
    }

    pub fn baseline(&self, i: usize) -> &[f64] {
        &self.baseline[i * self.n_baseline..(i + 1) * self.n_baseline]
    }

    /// `L(0) = (B, Z(0))`, materialized on access.
    pub fn initial_covariates(&self, i: usize) -> Vec<f64> {
        let mut l0 = self.baseline(i).to_vec();
        l0.extend_from_slice(self.covariates_at(i, 0));
        l0
    }

    /// `C(t)` for `t` in `1..=K`; `None` without a censoring process or when unobserved.
    pub fn censored_at(&self, i: usize, t: usize) -> Option<bool> {
        let c = self.censoring.as_ref()?;
        if t == 0 {
            return Some(false);
        }
        match c[i * self.horizon + t - 1] {
            MISSING => None,
            v => Some(v == 1),
        }
    }

    /// `Y(t)` for `t` in `1..=K` in survival mode.
    pub fn event_at(&self, i: usize, t: usize) -> Option<bool> {
        match &self.outcome {
            Outcome::Events(e) => {
                if t == 0 {
                    return Some(false);
                }
                match e[i * self.horizon + t - 1] {
                    MISSING => None,
                    v => Some(v == 1),
                }
            }
            Outcome::Continuous(_) => None,
        }
    }

    /// `I(C(K) = 0)`; always true without censoring.
    pub fn uncensored_at_end(&self, i: usize) -> bool {
        self.censored_at(i, self.horizon) != Some(true)
    }

    /// Scalar outcome if observed.
    pub fn outcome_value(&self, i: usize) -> Option<f64> {
        match &self.outcome {
            Outcome::Continuous(y) => Some(y[i]).filter(|v| !v.is_nan()),
            Outcome::Events(_) => None,
        }
    }

    /// Checks every panel invariant and reports all violations.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let k = self.horizon;
        for i in 0..self.n() {
            let id = self.ids[i];
            let mut push = |time: Option<usize>, rule: Rule| out.push(Violation { subject: id, time, rule });

            if self.baseline(i).iter().any(|b| !b.is_finite()) {
                push(None, Rule::BaselineMissing);
            }

            // Indicator processes: binary, absorbing, censoring precedes events.
            let mut end = k;
            if let Some(c) = &self.censoring {
                let slots = &c[i * k..(i + 1) * k];
                let mut seen_one = false;
                for (s, &v) in slots.iter().enumerate() {
                    match v {
                        0 if seen_one => push(Some(s + 1), Rule::CensoringNotAbsorbing),
                        0 | MISSING => {}
                        1 => seen_one = true,
                        _ => push(Some(s + 1), Rule::CensoringNotBinary),
                    }
                }
                if let Some(t) = first_one(slots) {
                    end = end.min(t);
                }
            }
            if let Outcome::Events(e) = &self.outcome {
                let slots = &e[i * k..(i + 1) * k];
                let mut seen_one = false;
                for (s, &v) in slots.iter().enumerate() {
                    match v {
                        0 if seen_one => push(Some(s + 1), Rule::EventNotAbsorbing),
                        0 | MISSING => {}
                        1 => seen_one = true,
                        _ => push(Some(s + 1), Rule::EventNotBinary),
                    }
                    if v == 1 && self.censored_at(i, s + 1) == Some(true) {
                        push(Some(s + 1), Rule::EventWhileCensored);
                    }
                }
                let c_end = self.censoring.as_ref().and_then(|c| first_one(&c[i * k..(i + 1) * k]));
                if let Some(t) = first_one(slots) {
                    end = end.min(t);
                }
                // Before censoring, every event slot must be observed.
                let observed_until = c_end.map_or(end, |c| end.min(c - 1));
                for (s, _) in slots.iter().enumerate().take(observed_until).filter(|(_, v)| **v == MISSING) {
                    push(Some(s + 1), Rule::EventNotBinary);
                }
            }

            for t in 0..k {
                let a = self.treatment(i, t);
                let z = self.covariates_at(i, t);
                if t < end {
                    if a.is_nan() {
                        push(Some(t), Rule::TreatmentMissing);
                    } else if a != 0.0 && a != 1.0 {
                        push(Some(t), Rule::TreatmentNotBinary);
                    }
                    if z.iter().any(|v| !v.is_finite()) {
                        push(Some(t), Rule::CovariateMissing);
                    }
                } else if !a.is_nan() || z.iter().any(|v| !v.is_nan()) {
                    push(Some(t), Rule::DataAfterFollowUp);
                }
            }

            if let Outcome::Continuous(y) = &self.outcome {
                let uncensored = self.censoring.as_ref().is_none_or(|c| c[i * k + k - 1] == 0);
                let present = y[i].is_finite();
                if uncensored != present {
                    push(None, Rule::OutcomePresence);
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// One row per at-risk subject-time, ordered by subject then time.
    pub fn expand_person_periods(&self) -> Result<Vec<PersonPeriod>> {
        self.ensure_valid()?;
        Ok(self.person_periods_unchecked())
    }

    pub(crate) fn person_periods_unchecked(&self) -> Vec<PersonPeriod> {
        let mut rows = Vec::with_capacity(self.follow_up.iter().sum());
        for i in 0..self.n() {
            for t in 0..self.follow_up[i] {
                let censored_next = self.censored_at(i, t + 1);
                let event_next = if censored_next == Some(true) { None } else { self.event_at(i, t + 1) };
                rows.push(PersonPeriod {
                    subject: i,
                    id: self.ids[i],
                    t,
                    treatment: self.treatment(i, t) as u8,
                    censored_next,
                    event_next,
                });
            }
        }
        rows
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv_to(std::io::BufWriter::new(file))
    }

    /// Long format: `id,t,L1..Lq,[B1..Bp],A,[C],Y|Yt`, one row per observed
    /// subject-time. Row `t` carries `C(t+1)` and, in survival mode, `Y(t+1)`.
    pub fn write_csv_to<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header: Vec<String> = vec!["id".into(), "t".into()];
        header.extend((1..=self.n_covariates).map(|j| format!("L{j}")));
        header.extend((1..=self.n_baseline).map(|j| format!("B{j}")));
        header.push("A".into());
        if self.has_censoring() {
            header.push("C".into());
        }
        header.push(if self.is_survival() { "Yt".into() } else { "Y".into() });
        w.write_record(&header)?;

        let flag = |v: Option<bool>| v.map_or(String::new(), |b| u8::from(b).to_string());
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            for t in 0..self.follow_up[i] {
                row.clear();
                row.push(self.ids[i].to_string());
                row.push(t.to_string());
                row.extend(self.covariates_at(i, t).iter().map(|v| v.to_string()));
                row.extend(self.baseline(i).iter().map(|v| v.to_string()));
                row.push(self.treatment(i, t).to_string());
                if self.has_censoring() {
                    row.push(flag(self.censored_at(i, t + 1)));
                }
                match &self.outcome {
                    Outcome::Events(_) => {
                        let y = if self.censored_at(i, t + 1) == Some(true) { None } else { self.event_at(i, t + 1) };
                        row.push(flag(y));
                    }
                    Outcome::Continuous(_) => {
                        let y = if t + 1 == self.horizon { self.outcome_value(i) } else { None };
                        row.push(y.map_or(String::new(), |v| v.to_string()));
                    }
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv_from(std::io::BufReader::new(file))
    }

    pub fn read_csv_from<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
        let header = rdr.headers()?.clone();
        let col = |name: &str| header.iter().position(|h| h.trim() == name);
        let need = |name: &str| {
            col(name).ok_or_else(|| Error::Parse { row: 1, message: format!("missing column \"{name}\"") })
        };
        let id_col = need("id")?;
        let t_col = need("t")?;
        let a_col = need("A")?;
        let c_col = col("C");
        let (y_col, survival) = match (col("Y"), col("Yt")) {
            (Some(c), None) => (c, false),
            (None, Some(c)) => (c, true),
            (Some(_), Some(_)) => {
                return Err(Error::Parse { row: 1, message: "both \"Y\" and \"Yt\" columns present".into() })
            }
            (None, None) => return Err(Error::Parse { row: 1, message: "missing column \"Y\" or \"Yt\"".into() }),
        };
        let indexed = |prefix: &str| -> Vec<usize> {
            (1..).map_while(|j| col(&format!("{prefix}{j}"))).collect()
        };
        let l_cols = indexed("L");
        let b_cols = indexed("B");

        struct Row {
            line: usize,
            t: usize,
            l: Vec<f64>,
            b: Vec<f64>,
            a: f64,
            c: Option<u8>,
            y: Option<f64>,
        }

        let parse_f = |s: &str, line: usize, what: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::Parse { row: line, message: format!("{what}: cannot parse {s:?}") })
        };
        let parse_opt = |s: &str, line: usize, what: &str| -> Result<Option<f64>> {
            if s.trim().is_empty() {
                Ok(None)
            } else {
                parse_f(s, line, what).map(Some)
            }
        };

        let mut order: Vec<u64> = Vec::new();
        let mut by_id: HashMap<u64, Vec<Row>> = HashMap::new();
        for (idx, rec) in rdr.records().enumerate() {
            let line = idx + 2;
            let rec = rec.map_err(|e| Error::Parse { row: line, message: e.to_string() })?;
            if rec.len() != header.len() {
                return Err(Error::Parse { row: line, message: format!("expected {} fields, found {}", header.len(), rec.len()) });
            }
            let id: u64 = rec[id_col]
                .trim()
                .parse()
                .map_err(|_| Error::Parse { row: line, message: format!("bad id {:?}", &rec[id_col]) })?;
            let t: usize = rec[t_col]
                .trim()
                .parse()
                .map_err(|_| Error::Parse { row: line, message: format!("bad time {:?}", &rec[t_col]) })?;
            let a = parse_f(&rec[a_col], line, "A")?;
            if a != 0.0 && a != 1.0 {
                return Err(Error::Parse { row: line, message: format!("treatment not binary: {a}") });
            }
            let c = match c_col {
                Some(cc) => match parse_opt(&rec[cc], line, "C")? {
                    Some(v) if v == 0.0 || v == 1.0 => Some(v as u8),
                    Some(v) => return Err(Error::Parse { row: line, message: format!("censoring not binary: {v}") }),
                    None => return Err(Error::Parse { row: line, message: "censoring indicator missing".into() }),
                },
                None => None,
            };
            let y = parse_opt(&rec[y_col], line, "Y")?;
            if survival {
                if let Some(v) = y {
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Parse { row: line, message: format!("event indicator not binary: {v}") });
                    }
                }
            }
            let l = l_cols.iter().map(|&c| parse_f(&rec[c], line, "L")).collect::<Result<Vec<_>>>()?;
            let b = b_cols.iter().map(|&c| parse_f(&rec[c], line, "B")).collect::<Result<Vec<_>>>()?;
            let rows = by_id.entry(id).or_insert_with(|| {
                order.push(id);
                Vec::new()
            });
            if rows.len() != t {
                return Err(Error::Parse {
                    row: line,
                    message: format!("subject {id}: expected t={}, found t={t}", rows.len()),
                });
            }
            rows.push(Row { line, t, l, b, a, c, y });
        }

        let horizon = by_id.values().map(Vec::len).max().unwrap_or(0);
        if horizon == 0 {
            return Err(Error::Parse { row: 1, message: "no data rows".into() });
        }
        let q = l_cols.len();
        let mut records = Vec::with_capacity(order.len());
        for id in order {
            let rows = &by_id[&id];
            let last = rows.last().expect("non-empty by construction");
            let stops_early = last.c == Some(1) || (survival && last.y == Some(1.0));
            if rows.len() < horizon && !stops_early {
                return Err(Error::Parse {
                    row: last.line,
                    message: format!(
                        "subject {id} has {} rows but K={horizon} and no censoring or event ends follow-up",
                        rows.len()
                    ),
                });
            }
            let mut covariates = vec![vec![f64::NAN; q]; horizon];
            let mut treatments = vec![f64::NAN; horizon];
            let mut censoring = c_col.map(|_| vec![MISSING; horizon]);
            let mut events = vec![MISSING; horizon];
            let mut y_scalar = f64::NAN;
            let mut censored = false;
            for r in rows {
                covariates[r.t] = r.l.clone();
                treatments[r.t] = r.a;
                if let Some(c) = censoring.as_mut() {
                    c[r.t] = r.c.expect("parsed with censoring column");
                    censored = c[r.t] == 1;
                }
                if survival {
                    match (r.y, censored) {
                        (Some(v), false) => events[r.t] = v as u8,
                        (None, true) => {}
                        (Some(_), true) => {
                            return Err(Error::Parse { row: r.line, message: "event recorded at a censored time".into() })
                        }
                        (None, false) => {
                            return Err(Error::Parse { row: r.line, message: "event indicator missing".into() })
                        }
                    }
                } else if let Some(v) = r.y {
                    if r.t + 1 != horizon {
                        return Err(Error::Parse { row: r.line, message: "outcome Y allowed on the final row only".into() });
                    }
                    y_scalar = v;
                }
            }
            // Censoring and events are absorbing: fill the tail after the stop time.
            if let Some(c) = censoring.as_mut() {
                if censored {
                    for slot in c.iter_mut().skip(rows.len()) {
                        *slot = 1;
                    }
                }
            }
            if survival && last.y == Some(1.0) && !censored {
                for slot in events.iter_mut().skip(rows.len()) {
                    *slot = 1;
                }
            }
            records.push(SubjectRecord {
                id,
                baseline: rows[0].b.clone(),
                covariates,
                treatments,
                censoring,
                outcome: if survival { SubjectOutcome::Events(events) } else { SubjectOutcome::Continuous(y_scalar) },
            });
        }
        let panel = Self::from_records(horizon, &records)?;
        panel.ensure_valid()?;
        Ok(panel)
    }
}
