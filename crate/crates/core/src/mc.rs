//! Monte-Carlo studies: replicate a scenario, select the window by closed
//! testing, estimate at the selected window and aggregate selection
//! probabilities and estimation metrics.
//!
//! Replication `r` draws from its own RNG stream keyed by `(seed, r)` and
//! results are reduced in replication order, so reports do not depend on the
//! number of worker threads.

use crate::dgp::Scenario;
use crate::error::{Error, Result};
use crate::estimate::{Analysis, EstimatorKind, ModelForm};
use crate::infer::{confidence_interval, pair_test};
use crate::ipw::{Truncation, WeightKind, WeightModelSpec};
use crate::select::{closed_test_select, Variant};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

/// Largest window considered in survival studies.
pub const SURVIVAL_MAX_M: usize = 10;

/// A closed testing procedure at one significance level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionMethod {
    pub variant: Variant,
    pub alpha: f64,
}

impl SelectionMethod {
    pub fn new(variant: Variant, alpha: f64) -> Self {
        Self { variant, alpha }
    }

    /// `ztest05`, `pztest20`, ...
    pub fn label(&self) -> String {
        format!("{}{:02}", self.variant, (self.alpha * 100.0).round() as u32)
    }

    /// Estimators reported at the selected window: the combined estimators
    /// are defined only after SW-versus-RSW selection.
    pub fn estimators(&self) -> Vec<EstimatorKind> {
        let mut kinds = vec![EstimatorKind::Sw, EstimatorKind::Rsw, EstimatorKind::Psw];
        if self.variant == Variant::Ztest {
            kinds.extend([EstimatorKind::SwPsw, EstimatorKind::RswPsw]);
        }
        kinds
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub scenario: Scenario,
    pub reps: usize,
    pub methods: Vec<SelectionMethod>,
    pub model: ModelForm,
    /// Use the generating probabilities as weight denominators.
    #[serde(default)]
    pub true_weights: bool,
    #[serde(default = "default_start_m")]
    pub start_m: usize,
    /// Largest window; defaults to `K` for scalar outcomes and 10 for survival.
    #[serde(default)]
    pub max_m: Option<usize>,
    #[serde(default)]
    pub truncation: Option<Truncation>,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_start_m() -> usize {
    1
}

fn default_level() -> f64 {
    0.95
}

impl McConfig {
    pub fn new(scenario: Scenario, reps: usize, methods: Vec<SelectionMethod>, model: ModelForm) -> Self {
        Self {
            scenario,
            reps,
            methods,
            model,
            true_weights: false,
            start_m: 1,
            max_m: None,
            truncation: None,
            level: 0.95,
            threads: None,
        }
    }

    pub fn max_m(&self) -> usize {
        self.max_m.unwrap_or(if self.scenario.is_survival() { SURVIVAL_MAX_M } else { self.scenario.horizon() })
    }

    fn weight_spec(&self) -> WeightModelSpec {
        let mut spec = WeightModelSpec::for_horizon(self.scenario.horizon());
        spec.truncation = self.truncation;
        spec
    }
}

/// Outcome of one estimator in one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub kind: EstimatorKind,
    pub estimate: f64,
    pub se: f64,
    pub covered: bool,
}

/// Outcome of one selection method in one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    /// `None` when selection failed.
    pub selected_m: Option<usize>,
    /// One entry per estimator kind; `None` when estimation failed.
    pub estimates: Vec<Option<EstimateRecord>>,
    /// Whether the pair test rejects at the true window, when computable.
    pub rejects_at_truth: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub estimand: f64,
    pub m_star: usize,
    /// `None` when the weight models could not be fitted.
    pub methods: Option<Vec<MethodRecord>>,
    pub error: Option<String>,
}

/// Runs one replication. Failures inside are recorded, not propagated.
pub fn run_replication(cfg: &McConfig, rep: usize) -> ReplicationRecord {
    let (panel, truth) = cfg.scenario.generate_replication(rep as u64);
    let spec = cfg.weight_spec();
    let analysis = if cfg.true_weights {
        Analysis::with_truth(&panel, &spec, cfg.model, &truth)
    } else {
        Analysis::new(&panel, &spec, cfg.model)
    };
    let analysis = match analysis {
        Ok(a) => a,
        Err(e) => {
            log::warn!("replication {rep}: weight models failed: {e}");
            return ReplicationRecord {
                rep,
                estimand: truth.estimand,
                m_star: truth.m_star,
                methods: None,
                error: Some(e.to_string()),
            };
        }
    };
    let methods = cfg
        .methods
        .iter()
        .map(|method| {
            let selected = closed_test_select(&analysis, method.alpha, method.variant, cfg.start_m, cfg.max_m());
            let selected_m = match selected {
                Ok(s) => Some(s.selected_m),
                Err(e) => {
                    log::warn!("replication {rep}, {}: {e}", method.label());
                    None
                }
            };
            let estimates = method
                .estimators()
                .into_iter()
                .map(|kind| {
                    let m = selected_m?;
                    match analysis.estimate_kind(kind, m, method.alpha) {
                        Ok(e) => {
                            let ci = confidence_interval(&e, cfg.level);
                            Some(EstimateRecord { kind, estimate: e.estimate, se: e.se(), covered: ci.contains(truth.estimand) })
                        }
                        Err(err) => {
                            log::warn!("replication {rep}, {} {kind} at m = {m}: {err}", method.label());
                            None
                        }
                    }
                })
                .collect();
            let rejects_at_truth = (truth.m_star < cfg.max_m())
                .then(|| {
                    let lead = analysis.estimate(method.variant.lead(), truth.m_star).ok()?;
                    let rsw = analysis.estimate(WeightKind::Rsw, truth.m_star).ok()?;
                    pair_test(&lead, &rsw, method.alpha).ok().map(|t| t.rejected)
                })
                .flatten();
            MethodRecord { selected_m, estimates, rejects_at_truth }
        })
        .collect();
    ReplicationRecord { rep, estimand: truth.estimand, m_star: truth.m_star, methods: Some(methods), error: None }
}

/// Selection probabilities of one method over `m = 1..=max_m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub method: String,
    pub variant: Variant,
    pub alpha: f64,
    /// `probabilities[m − 1] = P[selected = m]`, over all replications.
    pub probabilities: Vec<f64>,
    /// Share of replications whose selection failed.
    pub failure_rate: f64,
}

impl SelectionRow {
    pub fn probability(&self, m: usize) -> f64 {
        self.probabilities.get(m.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    /// `P[selected > m]`.
    pub fn probability_above(&self, m: usize) -> f64 {
        self.probabilities.iter().skip(m).sum()
    }
}

/// Estimation metrics of one estimator after one selection method.
///
/// `se` is the standard deviation of the estimates and `rmse² = bias² + se²`
/// (population moments over successful replications).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationRow {
    pub method: String,
    pub kind: EstimatorKind,
    pub bias: f64,
    pub se: f64,
    pub rmse: f64,
    pub cp: f64,
    /// Mean of the per-replication sandwich standard errors.
    pub mean_se: f64,
    pub successes: usize,
    pub failures: usize,
}

/// Empirical rejection rate of the pair test at the true window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub method: String,
    pub m: usize,
    pub rejection_rate: f64,
    pub tests: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub scenario: Scenario,
    pub model: ModelForm,
    pub true_weights: bool,
    pub reps: usize,
    pub estimand: f64,
    pub m_star: usize,
    pub max_m: usize,
    pub selection: Vec<SelectionRow>,
    pub estimation: Vec<EstimationRow>,
    pub calibration: Vec<CalibrationRow>,
    /// Replications whose weight models could not be fitted.
    pub failed_replications: usize,
    pub runtime_secs: f64,
}

impl McReport {
    pub fn selection_row(&self, method: &str) -> Option<&SelectionRow> {
        self.selection.iter().find(|r| r.method == method)
    }

    pub fn estimation_row(&self, method: &str, kind: EstimatorKind) -> Option<&EstimationRow> {
        self.estimation.iter().find(|r| r.method == method && r.kind == kind)
    }

    pub fn calibration_row(&self, method: &str) -> Option<&CalibrationRow> {
        self.calibration.iter().find(|r| r.method == method)
    }

    /// Table with one block per method: selection probabilities followed by
    /// the estimation metrics of each estimator.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "reps = {}, estimand = {}, m* = {}, failed replications = {}, runtime = {:.1}s",
            self.reps, self.estimand, self.m_star, self.failed_replications, self.runtime_secs
        );
        for sel in &self.selection {
            let probs: Vec<String> =
                sel.probabilities.iter().enumerate().map(|(j, p)| format!("m={}: {:.3}", j + 1, p)).collect();
            let _ = writeln!(out, "\n{}  {}", sel.method, probs.join("  "));
            let _ = writeln!(out, "  {:<8} {:>8} {:>8} {:>8} {:>8} {:>8}", "weight", "bias", "SE", "RMSE", "CP", "fails");
            for row in self.estimation.iter().filter(|r| r.method == sel.method) {
                let _ = writeln!(
                    out,
                    "  {:<8} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8}",
                    row.kind.label(),
                    row.bias,
                    row.se,
                    row.rmse,
                    row.cp,
                    row.failures
                );
            }
            if let Some(c) = self.calibration_row(&sel.method) {
                let _ = writeln!(out, "  rejection rate at m = {}: {:.3} ({} tests)", c.m, c.rejection_rate, c.tests);
            }
        }
        out
    }

    /// Writes `selection.csv`, `estimation.csv` and `calibration.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("selection.csv"))?;
        let mut header = vec!["method".to_string()];
        header.extend((1..=self.max_m).map(|m| format!("m{m}")));
        header.push("failure_rate".into());
        w.write_record(&header)?;
        for row in &self.selection {
            let mut rec = vec![row.method.clone()];
            rec.extend(row.probabilities.iter().map(|p| p.to_string()));
            rec.push(row.failure_rate.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("estimation.csv"))?;
        w.write_record(["method", "weight", "bias", "se", "rmse", "cp", "mean_se", "successes", "failures"])?;
        for r in &self.estimation {
            w.write_record([
                r.method.clone(),
                r.kind.label().to_string(),
                r.bias.to_string(),
                r.se.to_string(),
                r.rmse.to_string(),
                r.cp.to_string(),
                r.mean_se.to_string(),
                r.successes.to_string(),
                r.failures.to_string(),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("calibration.csv"))?;
        w.write_record(["method", "m", "rejection_rate", "tests"])?;
        for r in &self.calibration {
            w.write_record([r.method.clone(), r.m.to_string(), r.rejection_rate.to_string(), r.tests.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Runs all replications (in parallel) and aggregates them.
pub fn run_mc(cfg: &McConfig) -> Result<McReport> {
    if cfg.reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::InvalidArgument("at least one selection method is required".into()));
    }
    let max_m = cfg.max_m();
    if cfg.start_m == 0 || cfg.start_m > max_m || max_m > cfg.scenario.horizon() {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= start_m ({}) <= max_m ({max_m}) <= K ({})",
            cfg.start_m,
            cfg.scenario.horizon()
        )));
    }
    let started = Instant::now();
    let run = || (0..cfg.reps).into_par_iter().map(|rep| run_replication(cfg, rep)).collect::<Vec<_>>();
    let records = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut report = aggregate(cfg, &records);
    report.runtime_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Deterministic reduction of replication records (in the given order).
pub fn aggregate(cfg: &McConfig, records: &[ReplicationRecord]) -> McReport {
    let max_m = cfg.max_m();
    let reps = records.len();
    let (estimand, m_star) = records.first().map_or((f64::NAN, 0), |r| (r.estimand, r.m_star));
    let mut selection = Vec::new();
    let mut estimation = Vec::new();
    let mut calibration = Vec::new();

    for (mi, method) in cfg.methods.iter().enumerate() {
        let label = method.label();
        let per_rep: Vec<Option<&MethodRecord>> =
            records.iter().map(|r| r.methods.as_ref().map(|ms| &ms[mi])).collect();

        let mut counts = vec![0usize; max_m];
        let mut failed = 0usize;
        for rec in &per_rep {
            match rec.and_then(|r| r.selected_m) {
                Some(m) => counts[m - 1] += 1,
                None => failed += 1,
            }
        }
        selection.push(SelectionRow {
            method: label.clone(),
            variant: method.variant,
            alpha: method.alpha,
            probabilities: counts.iter().map(|c| *c as f64 / reps as f64).collect(),
            failure_rate: failed as f64 / reps as f64,
        });

        for (ki, kind) in method.estimators().into_iter().enumerate() {
            let ok: Vec<&EstimateRecord> =
                per_rep.iter().filter_map(|r| r.and_then(|r| r.estimates[ki].as_ref())).collect();
            let count = ok.len() as f64;
            let mean = ok.iter().map(|e| e.estimate).sum::<f64>() / count;
            let se = (ok.iter().map(|e| (e.estimate - mean).powi(2)).sum::<f64>() / count).sqrt();
            let bias = mean - estimand;
            estimation.push(EstimationRow {
                method: label.clone(),
                kind,
                bias,
                se,
                rmse: (bias * bias + se * se).sqrt(),
                cp: ok.iter().filter(|e| e.covered).count() as f64 / count,
                mean_se: ok.iter().map(|e| e.se).sum::<f64>() / count,
                successes: ok.len(),
                failures: reps - ok.len(),
            });
        }

        let tests: Vec<bool> = per_rep.iter().filter_map(|r| r.and_then(|r| r.rejects_at_truth)).collect();
        if !tests.is_empty() {
            calibration.push(CalibrationRow {
                method: label,
                m: m_star,
                rejection_rate: tests.iter().filter(|t| **t).count() as f64 / tests.len() as f64,
                tests: tests.len(),
            });
        }
    }

    McReport {
        scenario: cfg.scenario.clone(),
        model: cfg.model,
        true_weights: cfg.true_weights,
        reps,
        estimand,
        m_star,
        max_m,
        selection,
        estimation,
        calibration,
        failed_replications: records.iter().filter(|r| r.methods.is_none()).count(),
        runtime_secs: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small(reps: usize) -> McConfig {
        McConfig::new(
            Scenario::preset("s1", 400, 11).unwrap(),
            reps,
            vec![SelectionMethod::new(Variant::Ztest, 0.05), SelectionMethod::new(Variant::Pztest, 0.2)],
            ModelForm::Saturated,
        )
    }

    #[test]
    fn labels() {
        assert_eq!(SelectionMethod::new(Variant::Ztest, 0.05).label(), "ztest05");
        assert_eq!(SelectionMethod::new(Variant::Pztest, 0.2).label(), "pztest20");
    }

    #[test]
    fn report_invariants() {
        let report = run_mc(&small(6)).unwrap();
        for row in &report.selection {
            let total: f64 = row.probabilities.iter().sum::<f64>() + row.failure_rate;
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        }
        for row in &report.estimation {
            assert_relative_eq!(row.rmse.powi(2), row.bias.powi(2) + row.se.powi(2), epsilon = 1e-12);
        }
        assert_eq!(report.estimation.len(), 5 + 3);
    }

    #[test]
    fn single_replication_has_zero_spread() {
        let report = run_mc(&small(1)).unwrap();
        assert!(report.estimation.iter().all(|r| r.successes == 0 || r.se == 0.0));
    }

    #[test]
    fn aggregation_ignores_thread_count_and_order() {
        let cfg = small(4);
        let mut one = cfg.clone();
        one.threads = Some(1);
        let mut two = cfg.clone();
        two.threads = Some(2);
        let a = run_mc(&one).unwrap();
        let b = run_mc(&two).unwrap();
        assert_eq!(a.selection, b.selection);
        assert_eq!(a.estimation, b.estimation);

        let records: Vec<_> = (0..4).map(|r| run_replication(&cfg, r)).collect();
        let reversed: Vec<_> = records.iter().rev().cloned().collect();
        let fwd = aggregate(&cfg, &records);
        let back = aggregate(&cfg, &reversed);
        assert_eq!(fwd.selection, back.selection);
        for (x, y) in fwd.estimation.iter().zip(&back.estimation) {
            assert_relative_eq!(x.bias, y.bias, epsilon = 1e-12);
            assert_relative_eq!(x.se, y.se, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_reps_is_an_error() {
        assert!(run_mc(&small(0)).is_err());
    }
}
