//! Sandwich variances from influence functions, the paired difference test
//! and confidence intervals.

use crate::dgp::replication_rng;
use crate::error::{Error, Result};
use crate::estimate::{EstimateResult, EstimatorKind};
use crate::panel::LongPanel;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::erf::erfc;

/// Outcome of the test of `H0: θ_a = θ_b` at window length `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub m: usize,
    pub first: EstimatorKind,
    pub second: EstimatorKind,
    pub difference: f64,
    pub variance: f64,
    /// `D = difference² / variance`.
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub rejected: bool,
}

/// Upper-`alpha` critical value of the chi-squared distribution with one degree of freedom.
pub fn chi2_critical(alpha: f64) -> f64 {
    ChiSquared::new(1.0).expect("one degree of freedom is valid").inverse_cdf(1.0 - alpha)
}

/// Survival function of the chi-squared distribution with one degree of freedom.
pub fn chi2_sf_1df(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        erfc((x / 2.0).sqrt())
    }
}

/// Two-sided standard normal quantile for a confidence `level`.
pub fn normal_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

/// `(1/n²) Σ (φ_a,i − φ_b,i)²` for two estimators computed on the same subjects.
pub fn variance_of_difference(a: &EstimateResult, b: &EstimateResult) -> Result<f64> {
    if a.influence.len() != b.influence.len() {
        return Err(Error::InvalidArgument(format!(
            "influence vectors differ in length: {} vs {}",
            a.influence.len(),
            b.influence.len()
        )));
    }
    let n = a.influence.len() as f64;
    Ok(a.influence.iter().zip(&b.influence).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / (n * n))
}

/// Tests `H0: θ_a = θ_b`; rejects when `D > χ²_α(1)` (strict).
pub fn pair_test(a: &EstimateResult, b: &EstimateResult, alpha: f64) -> Result<PairTest> {
    let variance = variance_of_difference(a, b)?;
    let difference = a.estimate - b.estimate;
    let statistic = if variance > 0.0 {
        difference * difference / variance
    } else if difference == 0.0 {
        0.0
    } else {
        return Err(Error::DegenerateTest { m: a.m, difference });
    };
    Ok(PairTest {
        m: a.m,
        first: a.kind,
        second: b.kind,
        difference,
        variance,
        statistic,
        p_value: chi2_sf_1df(statistic),
        alpha,
        rejected: statistic > chi2_critical(alpha),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub se: f64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ConfidenceInterval {
    /// Exponentiated point estimate and limits (hazard-ratio scale).
    pub fn exponentiated(&self) -> (f64, f64, f64) {
        (self.estimate.exp(), self.lower.exp(), self.upper.exp())
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Wald interval `estimate ± z · sqrt(variance)`.
pub fn confidence_interval(e: &EstimateResult, level: f64) -> ConfidenceInterval {
    interval(e.estimate, e.variance.max(0.0).sqrt(), level)
}

pub fn interval(estimate: f64, se: f64, level: f64) -> ConfidenceInterval {
    let z = normal_quantile(level);
    ConfidenceInterval { estimate, se, level, lower: estimate - z * se, upper: estimate + z * se }
}

/// Nonparametric bootstrap variance of `a − b`, where `statistic` returns
/// the pair `(a, b)` computed on a resampled panel.
pub fn bootstrap_variance_of_difference(
    panel: &LongPanel,
    reps: usize,
    seed: u64,
    statistic: impl Fn(&LongPanel) -> Result<(f64, f64)>,
) -> Result<f64> {
    if reps < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least two resamples".into()));
    }
    let mut rng = replication_rng(seed, u64::MAX);
    let n = panel.n();
    let mut diffs = Vec::with_capacity(reps);
    let mut indices = vec![0; n];
    for _ in 0..reps {
        indices.iter_mut().for_each(|v| *v = rng.random_range(0..n));
        let (a, b) = statistic(&panel.subset(&indices))?;
        diffs.push(a - b);
    }
    let mean = diffs.iter().sum::<f64>() / reps as f64;
    Ok(diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64)
}
